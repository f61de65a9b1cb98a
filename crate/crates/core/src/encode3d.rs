//! Event-stream encoder: voxelization, polarity merge, spatio-temporal box
//! density and threshold gating.

use crate::encode2d::{trigger_mask, Encoder2DConfig};
use crate::error::{CteError, Result};
use crate::preprocess::component_prior;
use crate::types::{
    min_count_for, BinaryMask, BinaryTensor, DensityMap, EventStream, Shape4, SpikeTensor,
    VoxelTensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation3D {
    Full,
    /// Raw voxels, no gating.
    NoSt3d,
    /// Spatial `1 x k_H x k_W` density only.
    SpatialOnly2D,
    /// 2D component prior and cluster trigger applied to each time bin on its own.
    PerFrame2D,
}

impl Ablation3D {
    pub fn name(self) -> &'static str {
        match self {
            Ablation3D::Full => "full",
            Ablation3D::NoSt3d => "no_st3d",
            Ablation3D::SpatialOnly2D => "spatial2d",
            Ablation3D::PerFrame2D => "per_frame",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "full" => Ablation3D::Full,
            "no_st3d" => Ablation3D::NoSt3d,
            "spatial2d" => Ablation3D::SpatialOnly2D,
            "per_frame" => Ablation3D::PerFrame2D,
            _ => return None,
        })
    }
}

/// Odd box-kernel extents along `(t, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kernel3 {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Kernel3 {
    pub fn volume(&self) -> u32 {
        (self.t * self.h * self.w) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoder3DConfig {
    pub time_bins: usize,
    pub k_t: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub tau_st: f64,
    pub merge_polarity: bool,
    pub ablation: Ablation3D,
}

impl Default for Encoder3DConfig {
    fn default() -> Self {
        Encoder3DConfig {
            time_bins: 32,
            k_t: 7,
            k_h: 17,
            k_w: 17,
            tau_st: 0.10,
            merge_polarity: true,
            ablation: Ablation3D::Full,
        }
    }
}

impl Encoder3DConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CteError::Config(m));
        for (name, k) in [("k_t", self.k_t), ("k_h", self.k_h), ("k_w", self.k_w)] {
            if k == 0 || k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        if !(0.0..=1.0).contains(&self.tau_st) {
            return bad("tau_st must lie in [0,1]".into());
        }
        if self.time_bins < self.k_t {
            return bad(format!(
                "t_bins ({}) must be at least k_t ({})",
                self.time_bins, self.k_t
            ));
        }
        Ok(())
    }

    /// Kernel used for gating under the configured ablation.
    pub fn kernel(&self) -> Kernel3 {
        match self.ablation {
            Ablation3D::SpatialOnly2D => Kernel3 {
                t: 1,
                h: self.k_h,
                w: self.k_w,
            },
            _ => Kernel3 {
                t: self.k_t,
                h: self.k_h,
                w: self.k_w,
            },
        }
    }
}

/// Binary two-channel voxel grid: channel = polarity, bin =
/// `min(floor((t - t_min) * T / (t_max - t_min + 1)), T - 1)`.
pub fn voxelize(
    events: &EventStream,
    time_bins: usize,
    height: usize,
    width: usize,
) -> Result<VoxelTensor> {
    if time_bins == 0 {
        return Err(CteError::Config("t_bins must be positive".into()));
    }
    let mut v = VoxelTensor::zeros(Shape4::new(2, time_bins, height, width));
    let evs = events.events();
    let (Some(first), Some(last)) = (evs.first(), evs.last()) else {
        return Ok(v);
    };
    let span = (last.t - first.t + 1) as u128;
    for e in evs {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= width || y >= height {
            return Err(CteError::Dimension(format!(
                "event ({x}, {y}) outside {width}x{height} voxel grid"
            )));
        }
        let bin = ((e.t - first.t) as u128 * time_bins as u128 / span) as usize;
        v.set(e.p as usize, bin.min(time_bins - 1), y, x, true);
    }
    Ok(v)
}

/// Per-cell OR over channels; a single-channel tensor is returned unchanged.
pub fn merge_polarity(voxel: &VoxelTensor) -> VoxelTensor {
    let s = voxel.shape();
    if s.channels == 1 {
        return voxel.clone();
    }
    let n = s.steps * s.frame_len();
    let mut data = vec![0u8; n];
    for c in 0..s.channels {
        for (o, &v) in data.iter_mut().zip(&voxel.data()[c * n..(c + 1) * n]) {
            *o |= v;
        }
    }
    VoxelTensor(
        BinaryTensor::new(Shape4::new(1, s.steps, s.height, s.width), data)
            .expect("shape preserved"),
    )
}

/// Centered box density of a single-channel voxel tensor with zero padding on
/// every axis, as three separable running sums.
pub fn density_3d(voxel: &VoxelTensor, kernel: Kernel3) -> Result<DensityMap> {
    let s = voxel.shape();
    if s.channels != 1 {
        return Err(CteError::Dimension(format!(
            "density_3d needs one channel, got {}",
            s.channels
        )));
    }
    for (name, k, n) in [
        ("k_t", kernel.t, s.steps),
        ("k_h", kernel.h, s.height),
        ("k_w", kernel.w, s.width),
    ] {
        if k % 2 == 0 || k > n {
            return Err(CteError::Dimension(format!(
                "{name} = {k} must be odd and no larger than the axis length {n}"
            )));
        }
    }
    let mut buf: Vec<u32> = voxel.data().iter().map(|&v| v as u32).collect();
    let (t, h, w) = (s.steps, s.height, s.width);
    // x: lines of length w with stride 1
    running_sum_axis(&mut buf, t * h, w, 1, w, kernel.w / 2);
    // y: for each (t, x), stride w
    for ti in 0..t {
        let base = ti * h * w;
        running_sum_axis(&mut buf[base..base + h * w], w, h, w, 1, kernel.h / 2);
    }
    // t: for each (y, x), stride h*w
    running_sum_axis(&mut buf, h * w, t, h * w, 1, kernel.t / 2);
    DensityMap::new(t, h, w, kernel.volume(), buf)
}

/// In-place windowed sum `[-radius, +radius]` along lines of `len` elements
/// spaced `stride` apart; line `k` starts at `k * line_step`.
fn running_sum_axis(
    buf: &mut [u32],
    lines: usize,
    len: usize,
    stride: usize,
    line_step: usize,
    radius: usize,
) {
    let mut prefix = vec![0u32; len + 1];
    for line in 0..lines {
        let start = line * line_step;
        for i in 0..len {
            prefix[i + 1] = prefix[i] + buf[start + i * stride];
        }
        for i in 0..len {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(len);
            buf[start + i * stride] = prefix[hi] - prefix[lo];
        }
    }
}

/// Keeps voxels whose occupied-neighbour count reaches
/// `min_count_for(tau_st, volume)`. A single-channel `density` gates every
/// channel of `voxel` with the same mask.
pub fn st_gate(voxel: &VoxelTensor, density: &DensityMap, tau_st: f64) -> Result<SpikeTensor> {
    let s = voxel.shape();
    if density.steps() != s.steps || density.height() != s.height || density.width() != s.width {
        return Err(CteError::Dimension(format!(
            "density {}x{}x{} vs voxel {}x{}x{}",
            density.steps(),
            density.height(),
            density.width(),
            s.steps,
            s.height,
            s.width
        )));
    }
    let need = min_count_for(tau_st, density.volume());
    let n = s.steps * s.frame_len();
    let mut data = voxel.data().to_vec();
    for c in 0..s.channels {
        for (v, &count) in data[c * n..(c + 1) * n].iter_mut().zip(density.counts()) {
            if count < need {
                *v = 0;
            }
        }
    }
    SpikeTensor::new(s, data)
}

/// Voxelize, then gate according to `cfg.ablation`. The spatial grid follows
/// the stream's sensor size; `per_frame` supplies the 2D settings used by the
/// per-frame ablation.
pub fn encode3d_pipeline(
    events: &EventStream,
    cfg: &Encoder3DConfig,
    per_frame: &Encoder2DConfig,
) -> Result<SpikeTensor> {
    cfg.validate()?;
    let voxel = voxelize(
        events,
        cfg.time_bins,
        events.sensor_height(),
        events.sensor_width(),
    )?;
    gate_voxels(&voxel, cfg, per_frame)
}

/// Gating stage of [`encode3d_pipeline`] for an already voxelized stream.
pub fn gate_voxels(
    voxel: &VoxelTensor,
    cfg: &Encoder3DConfig,
    per_frame: &Encoder2DConfig,
) -> Result<SpikeTensor> {
    match cfg.ablation {
        Ablation3D::NoSt3d => Ok(voxel.clone().into()),
        Ablation3D::Full | Ablation3D::SpatialOnly2D => {
            let kernel = cfg.kernel();
            if cfg.merge_polarity {
                let density = density_3d(&merge_polarity(voxel), kernel)?;
                st_gate(voxel, &density, cfg.tau_st)
            } else {
                let mut out = SpikeTensor::zeros(voxel.shape());
                for c in 0..voxel.shape().channels {
                    let single = channel(voxel, c);
                    let gated = st_gate(&single, &density_3d(&single, kernel)?, cfg.tau_st)?;
                    copy_channel(&gated, 0, &mut out, c);
                }
                Ok(out)
            }
        }
        Ablation3D::PerFrame2D => per_frame_gate(voxel, cfg.merge_polarity, per_frame),
    }
}

fn per_frame_gate(voxel: &VoxelTensor, merge: bool, cfg: &Encoder2DConfig) -> Result<SpikeTensor> {
    cfg.validate()?;
    let s = voxel.shape();
    let mut out = SpikeTensor::zeros(s);
    let trigger_for = |frame: &[u8]| -> Result<BinaryMask> {
        let mask = BinaryMask::new(s.height, s.width, frame.to_vec())?;
        let fg = component_prior(
            &mask,
            cfg.preprocess.k_components,
            cfg.preprocess.remove_border,
        )?;
        Ok(trigger_mask(&fg, cfg, false)?.0)
    };
    let merged = if merge {
        Some(merge_polarity(voxel))
    } else {
        None
    };
    for t in 0..s.steps {
        let shared = match &merged {
            Some(m) => Some(trigger_for(m.frame(0, t))?),
            None => None,
        };
        for c in 0..s.channels {
            let trig = match &shared {
                Some(tr) => tr.clone(),
                None => trigger_for(voxel.frame(c, t))?,
            };
            for y in 0..s.height {
                for x in 0..s.width {
                    if voxel.get(c, t, y, x) && trig.get(y, x) {
                        out.set(c, t, y, x, true);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn channel(voxel: &VoxelTensor, c: usize) -> VoxelTensor {
    let s = voxel.shape();
    let n = s.steps * s.frame_len();
    VoxelTensor::new(
        Shape4::new(1, s.steps, s.height, s.width),
        voxel.data()[c * n..(c + 1) * n].to_vec(),
    )
    .expect("channel slice has the declared length")
}

fn copy_channel(src: &SpikeTensor, from: usize, dst: &mut SpikeTensor, to: usize) {
    let s = src.shape();
    for t in 0..s.steps {
        for y in 0..s.height {
            for x in 0..s.width {
                if src.get(from, t, y, x) {
                    dst.set(to, t, y, x, true);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Event;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_density(v: &VoxelTensor, k: Kernel3) -> Vec<u32> {
        let s = v.shape();
        let (rt, rh, rw) = ((k.t / 2) as i64, (k.h / 2) as i64, (k.w / 2) as i64);
        let mut out = Vec::with_capacity(s.len());
        for t in 0..s.steps as i64 {
            for y in 0..s.height as i64 {
                for x in 0..s.width as i64 {
                    let mut c = 0;
                    for dt in -rt..=rt {
                        for dy in -rh..=rh {
                            for dx in -rw..=rw {
                                let (tt, yy, xx) = (t + dt, y + dy, x + dx);
                                if tt >= 0
                                    && yy >= 0
                                    && xx >= 0
                                    && (tt as usize) < s.steps
                                    && (yy as usize) < s.height
                                    && (xx as usize) < s.width
                                    && v.get(0, tt as usize, yy as usize, xx as usize)
                                {
                                    c += 1;
                                }
                            }
                        }
                    }
                    out.push(c);
                }
            }
        }
        out
    }

    fn random_voxel(rng: &mut ChaCha8Rng, s: Shape4, p: f64) -> VoxelTensor {
        VoxelTensor::new(s, (0..s.len()).map(|_| rng.gen_bool(p) as u8).collect()).unwrap()
    }

    fn ev(x: u16, y: u16, t: u64, p: u8) -> Event {
        Event { x, y, t, p }
    }

    #[test]
    fn single_event_single_cell() {
        let s = EventStream::new(vec![ev(3, 4, 100, 1)], 8, 8).unwrap();
        let v = voxelize(&s, 4, 8, 8).unwrap();
        assert_eq!(v.count_ones(), 1);
        assert!(v.get(1, 0, 4, 3));
    }

    #[test]
    fn repeated_events_saturate() {
        let s = EventStream::new(
            vec![ev(1, 1, 0, 0), ev(1, 1, 1, 0), ev(5, 5, 1000, 0)],
            8,
            8,
        )
        .unwrap();
        let v = voxelize(&s, 4, 8, 8).unwrap();
        assert_eq!(v.count_ones(), 2);
        assert!(v.get(0, 3, 5, 5));
    }

    #[test]
    fn covering_stream_fills_tensor() {
        let (t_bins, h, w) = (4usize, 3usize, 5usize);
        let mut evs = Vec::new();
        // bin b gets timestamps in [b*100, b*100+99], span is 400
        for b in 0..t_bins {
            for y in 0..h {
                for x in 0..w {
                    for p in 0..2 {
                        evs.push(ev(x as u16, y as u16, (b * 100 + y * w + x) as u64, p));
                    }
                }
            }
        }
        evs.push(ev(0, 0, 399, 0));
        let s = EventStream::new(evs, w, h).unwrap();
        let v = voxelize(&s, t_bins, h, w).unwrap();
        assert_eq!(v.count_ones(), v.shape().len());
    }

    #[test]
    fn empty_stream_is_all_zero() {
        let s = EventStream::new(vec![], 28, 28).unwrap();
        let out = encode3d_pipeline(&s, &Encoder3DConfig::default(), &Encoder2DConfig::default())
            .unwrap();
        assert_eq!(out.count_ones(), 0);
        assert_eq!(out.shape(), Shape4::new(2, 32, 28, 28));
    }

    #[test]
    fn merge_is_channel_or() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_voxel(&mut rng, Shape4::new(2, 3, 4, 4), 0.3);
        let m = merge_polarity(&v);
        for t in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(m.get(0, t, y, x), v.get(0, t, y, x) || v.get(1, t, y, x));
                }
            }
        }
        assert_eq!(merge_polarity(&m), m);
        let mut on_only = VoxelTensor::zeros(Shape4::new(2, 2, 2, 2));
        on_only.set(1, 1, 0, 1, true);
        let merged = merge_polarity(&on_only);
        assert_eq!(merged.count_ones(), 1);
        assert!(merged.get(0, 1, 0, 1));
    }

    #[test]
    fn single_event_peak_density() {
        let mut v = VoxelTensor::zeros(Shape4::new(1, 32, 28, 28));
        v.set(0, 10, 14, 14, true);
        let d = density_3d(&v, Encoder3DConfig::default().kernel()).unwrap();
        assert_eq!(d.volume(), 2023);
        assert_eq!(d.count_at(10, 14, 14), 1);
        assert!((d.value(10, 14, 14) - 4.94e-4).abs() < 1e-6);
        let g = st_gate(&v, &d, 0.10).unwrap();
        assert_eq!(g.count_ones(), 0);
    }

    #[test]
    fn saturated_interior_density() {
        let v = VoxelTensor::new(Shape4::new(1, 9, 19, 19), vec![1; 9 * 19 * 19]).unwrap();
        let d = density_3d(&v, Kernel3 { t: 7, h: 17, w: 17 }).unwrap();
        assert_eq!(d.value(4, 9, 9), 1.0);
        assert!(d.value(0, 0, 0) < 1.0);
    }

    #[test]
    fn density_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_voxel(&mut rng, Shape4::new(1, 8, 12, 12), 0.3);
        let k = Kernel3 { t: 3, h: 5, w: 5 };
        assert_eq!(
            density_3d(&v, k).unwrap().counts(),
            brute_density(&v, k).as_slice()
        );
    }

    #[test]
    fn kernel_checks() {
        let v = VoxelTensor::zeros(Shape4::new(1, 4, 8, 8));
        assert!(density_3d(&v, Kernel3 { t: 5, h: 3, w: 3 }).is_err());
        assert!(density_3d(&v, Kernel3 { t: 3, h: 4, w: 3 }).is_err());
        assert!(density_3d(
            &VoxelTensor::zeros(Shape4::new(2, 4, 8, 8)),
            Kernel3 { t: 3, h: 3, w: 3 }
        )
        .is_err());
        let cfg = Encoder3DConfig {
            k_t: 6,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = Encoder3DConfig {
            time_bins: 5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn moving_bar_survives_noise_does_not() {
        // 5x9 bar sweeping right, plus one far-away isolated event
        let mut evs = Vec::new();
        for b in 0..32u64 {
            let x = (b * 20 / 32) as u16 + 4;
            for y in 8..17u16 {
                for dx in 0..5u16 {
                    evs.push(ev(x + dx, y, b * 1000, (b % 2) as u8));
                    evs.push(ev(x + dx, y, b * 1000 + 1, 1 - (b % 2) as u8));
                }
            }
        }
        evs.push(ev(27, 0, 15_000, 1));
        let s = EventStream::new(evs, 28, 28).unwrap();
        let cfg = Encoder3DConfig::default();
        let v = voxelize(&s, 32, 28, 28).unwrap();
        let out = encode3d_pipeline(&s, &cfg, &Encoder2DConfig::default()).unwrap();
        assert!(!out.get(1, 15, 0, 27));
        // 7 bins x 45 cells = 315 occupied neighbours around the bar centre
        let d = density_3d(&merge_polarity(&v), cfg.kernel()).unwrap();
        for t in 8..24 {
            let x = (t * 20 / 32) + 6;
            assert!(
                d.count_at(t, 12, x) >= 203,
                "count {} at t={t}",
                d.count_at(t, 12, x)
            );
            assert!(out.get(0, t, 12, x) && out.get(1, t, 12, x));
        }
    }

    #[test]
    fn zero_tau_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_voxel(&mut rng, Shape4::new(2, 8, 10, 10), 0.05);
        let d = density_3d(&merge_polarity(&v), Kernel3 { t: 3, h: 5, w: 5 }).unwrap();
        assert_eq!(
            st_gate(&v, &d, 0.0).unwrap().into_inner(),
            v.clone().into_inner()
        );
    }

    #[test]
    fn ablations_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = random_voxel(&mut rng, Shape4::new(2, 32, 28, 28), 0.03);
        let p2 = Encoder2DConfig::default();
        let full = gate_voxels(&v, &Encoder3DConfig::default(), &p2).unwrap();
        let raw = gate_voxels(
            &v,
            &Encoder3DConfig {
                ablation: Ablation3D::NoSt3d,
                ..Default::default()
            },
            &p2,
        )
        .unwrap();
        assert_eq!(raw.count_ones(), v.count_ones());
        assert!(full.count_ones() <= raw.count_ones());
        for ab in [Ablation3D::SpatialOnly2D, Ablation3D::PerFrame2D] {
            for merge in [true, false] {
                let cfg = Encoder3DConfig {
                    ablation: ab,
                    merge_polarity: merge,
                    ..Default::default()
                };
                let out = gate_voxels(&v, &cfg, &p2).unwrap();
                assert!(out.data().iter().zip(v.data()).all(|(&o, &i)| o <= i));
            }
        }
        let split = gate_voxels(
            &v,
            &Encoder3DConfig {
                merge_polarity: false,
                ..Default::default()
            },
            &p2,
        )
        .unwrap();
        assert!(split.count_ones() <= full.count_ones());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gate_invariants(seed in any::<u64>(), p in 0.01f64..0.4, tau in 0.0f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_voxel(&mut rng, Shape4::new(2, 6, 9, 9), p);
            let d = density_3d(&merge_polarity(&v), Kernel3 { t: 3, h: 5, w: 5 }).unwrap();
            let g = st_gate(&v, &d, tau).unwrap();
            let g2 = st_gate(&v, &d, tau + 0.05).unwrap();
            prop_assert!(g2.count_ones() <= g.count_ones());
            for t in 0..6 {
                for y in 0..9 {
                    for x in 0..9 {
                        for c in 0..2 {
                            prop_assert!(g.get(c, t, y, x) <= v.get(c, t, y, x));
                        }
                        if v.get(0, t, y, x) && v.get(1, t, y, x) {
                            prop_assert_eq!(g.get(0, t, y, x), g.get(1, t, y, x));
                        }
                    }
                }
            }
        }
    }
}
