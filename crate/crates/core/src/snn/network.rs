//! Conv 3x3 -> LIF -> FC -> LIF -> FC readout, unrolled over the input's time
//! bins, with backpropagation through time using surrogate derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lif::{surrogate_gradient, LifParams, SpikeFn};
use crate::error::{CteError, Result};
use crate::types::{BinaryTensor, PackedSpikes, Shape4, SpikeTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv_channels: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Architecture {
    /// 32 conv channels, 128 hidden units, 10 classes.
    pub fn standard(in_channels: usize, height: usize, width: usize) -> Self {
        Architecture {
            in_channels,
            height,
            width,
            conv_channels: 32,
            hidden: 128,
            classes: 10,
        }
    }

    /// Flattened conv feature count `conv_channels * H * W`.
    pub fn conv_len(&self) -> usize {
        self.conv_channels * self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.in_channels,
            self.height,
            self.width,
            self.conv_channels,
            self.hidden,
            self.classes,
        ];
        if dims.contains(&0) {
            return Err(CteError::Config(format!(
                "architecture has a zero dimension: {self:?}"
            )));
        }
        Ok(())
    }
}

/// The six parameter arrays. Also used for gradients and optimizer moments.
///
/// Layouts:
/// - `conv_w`: `[in_channel][ky][kx][out_channel]`
/// - `fc1_w`: `[conv feature][hidden]`, conv features ordered `(y, x, channel)`
/// - `fc2_w`: `[class][hidden]`
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors {
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 6] = ["conv_w", "conv_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b"];

impl ParamTensors {
    pub fn zeros(arch: &Architecture) -> Self {
        ParamTensors {
            conv_w: vec![0.0; arch.in_channels * 9 * arch.conv_channels],
            conv_b: vec![0.0; arch.conv_channels],
            fc1_w: vec![0.0; arch.conv_len() * arch.hidden],
            fc1_b: vec![0.0; arch.hidden],
            fc2_w: vec![0.0; arch.classes * arch.hidden],
            fc2_b: vec![0.0; arch.classes],
        }
    }

    pub fn slices(&self) -> [&[f64]; 6] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn add_assign(&mut self, other: &ParamTensors) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub lif: LifParams,
    pub tensors: ParamTensors,
}

/// Anything the network can read spikes from.
pub trait SpikeInput: Sync {
    fn shape(&self) -> Shape4;
    /// Set cells `(channel, y, x)` at time bin `t`.
    fn active_at(&self, t: usize) -> Vec<(usize, usize, usize)>;
    fn spike_count(&self) -> usize;
}

impl SpikeInput for SpikeTensor {
    fn shape(&self) -> Shape4 {
        BinaryTensor::shape(self)
    }

    fn active_at(&self, t: usize) -> Vec<(usize, usize, usize)> {
        let s = BinaryTensor::shape(self);
        let mut out = Vec::new();
        for c in 0..s.channels {
            for (i, &v) in self.frame(c, t).iter().enumerate() {
                if v != 0 {
                    out.push((c, i / s.width, i % s.width));
                }
            }
        }
        out
    }

    fn spike_count(&self) -> usize {
        self.count_ones()
    }
}

impl SpikeInput for PackedSpikes {
    fn shape(&self) -> Shape4 {
        PackedSpikes::shape(self)
    }

    fn active_at(&self, t: usize) -> Vec<(usize, usize, usize)> {
        let s = PackedSpikes::shape(self);
        let mut out = Vec::new();
        for c in 0..s.channels {
            let base = s.index(c, t, 0, 0);
            for i in 0..s.frame_len() {
                if self.get_index(base + i) {
                    out.push((c, i / s.width, i % s.width));
                }
            }
        }
        out
    }

    fn spike_count(&self) -> usize {
        self.count_ones()
    }
}

/// Per-step state kept for the backward pass.
struct Trace {
    active: Vec<Vec<(usize, usize, usize)>>,
    v0: Vec<Vec<f64>>,
    s0: Vec<Vec<f64>>,
    v1: Vec<Vec<f64>>,
    s1: Vec<Vec<f64>>,
}

impl NetworkParams {
    /// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn init(arch: Architecture, lif: LifParams, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = ParamTensors::zeros(&arch);
        let fan = [
            arch.in_channels * 9,
            arch.in_channels * 9,
            arch.conv_len(),
            arch.conv_len(),
            arch.hidden,
            arch.hidden,
        ];
        for (buf, fan_in) in t.slices_mut().into_iter().zip(fan) {
            let k = 1.0 / (fan_in as f64).sqrt();
            buf.iter_mut().for_each(|w| *w = rng.gen_range(-k..k));
        }
        Ok(NetworkParams {
            arch,
            lif,
            tensors: t,
        })
    }

    fn check_input(&self, input: &impl SpikeInput) -> Result<()> {
        let s = input.shape();
        let a = &self.arch;
        if s.channels != a.in_channels || s.height != a.height || s.width != a.width || s.steps == 0
        {
            return Err(CteError::Dimension(format!(
                "input {}x{}x{}x{} does not fit network expecting {}x_x{}x{}",
                s.channels, s.steps, s.height, s.width, a.in_channels, a.height, a.width
            )));
        }
        Ok(())
    }

    /// Class scores: fc2 outputs summed over all time steps.
    pub fn forward(&self, input: &impl SpikeInput) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.run(input, SpikeFn::Heaviside, false).0)
    }

    pub fn forward_with(&self, input: &impl SpikeInput, f: SpikeFn) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.run(input, f, false).0)
    }

    fn run(&self, input: &impl SpikeInput, f: SpikeFn, keep: bool) -> (Vec<f64>, Option<Trace>) {
        let a = self.arch;
        let p = &self.tensors;
        let (h, w, cc, hid) = (a.height, a.width, a.conv_channels, a.hidden);
        let n0 = a.conv_len();
        let steps = input.shape().steps;
        let (v_th, decay) = (self.lif.v_th, self.lif.decay);

        let mut scores = p.fc2_b.iter().map(|b| b * steps as f64).collect::<Vec<_>>();
        let mut trace = keep.then(|| Trace {
            active: Vec::with_capacity(steps),
            v0: Vec::with_capacity(steps),
            s0: Vec::with_capacity(steps),
            v1: Vec::with_capacity(steps),
            s1: Vec::with_capacity(steps),
        });

        let mut v0 = vec![0.0; n0];
        let mut s0 = vec![0.0; n0];
        let mut v1 = vec![0.0; hid];
        let mut s1 = vec![0.0; hid];
        let mut i0 = vec![0.0; n0];
        let mut i1 = vec![0.0; hid];

        for t in 0..steps {
            let active = input.active_at(t);

            for px in i0.chunks_exact_mut(cc) {
                px.copy_from_slice(&p.conv_b);
            }
            for &(c, yi, xi) in &active {
                for_each_tap(h, w, yi, xi, |ky, kx, y, x| {
                    let wb = ((c * 3 + ky) * 3 + kx) * cc;
                    let ob = (y * w + x) * cc;
                    for (o, k) in i0[ob..ob + cc].iter_mut().zip(&p.conv_w[wb..wb + cc]) {
                        *o += k;
                    }
                });
            }
            for i in 0..n0 {
                v0[i] = decay * v0[i] * (1.0 - s0[i]) + i0[i];
                s0[i] = f.spike(v0[i], v_th);
            }

            i1.copy_from_slice(&p.fc1_b);
            for (i, &s) in s0.iter().enumerate() {
                if s != 0.0 {
                    let row = &p.fc1_w[i * hid..(i + 1) * hid];
                    for (o, wv) in i1.iter_mut().zip(row) {
                        *o += s * wv;
                    }
                }
            }
            for j in 0..hid {
                v1[j] = decay * v1[j] * (1.0 - s1[j]) + i1[j];
                s1[j] = f.spike(v1[j], v_th);
            }

            for (k, score) in scores.iter_mut().enumerate() {
                let row = &p.fc2_w[k * hid..(k + 1) * hid];
                *score += row.iter().zip(&s1).map(|(a, b)| a * b).sum::<f64>();
            }

            if let Some(tr) = trace.as_mut() {
                tr.active.push(active);
                tr.v0.push(v0.clone());
                tr.s0.push(s0.clone());
                tr.v1.push(v1.clone());
                tr.s1.push(s1.clone());
            }
        }
        (scores, trace)
    }

    /// Cross-entropy of one labelled sample; adds its parameter gradients to
    /// `grads` and returns `(loss, predicted class)`.
    pub fn accumulate_gradients(
        &self,
        input: &impl SpikeInput,
        label: usize,
        f: SpikeFn,
        grads: &mut ParamTensors,
    ) -> Result<(f64, usize)> {
        self.check_input(input)?;
        if label >= self.arch.classes {
            return Err(CteError::Data(format!(
                "label {label} outside {} classes",
                self.arch.classes
            )));
        }
        let (scores, trace) = self.run(input, f, true);
        let trace = trace.expect("trace requested");
        let (loss, dscores) = cross_entropy(&scores, label);
        self.backward(&trace, &dscores, grads);
        Ok((loss, argmax(&scores)))
    }

    fn backward(&self, tr: &Trace, dscores: &[f64], g: &mut ParamTensors) {
        let a = self.arch;
        let p = &self.tensors;
        let (h, w, cc, hid) = (a.height, a.width, a.conv_channels, a.hidden);
        let n0 = a.conv_len();
        let steps = tr.v0.len();
        let decay = self.lif.decay;

        // readout: scores = sum_t (W2 s1_t + b2)
        let mut g1 = vec![0.0; hid];
        for (k, &d) in dscores.iter().enumerate() {
            g.fc2_b[k] += d * steps as f64;
            let row = &p.fc2_w[k * hid..(k + 1) * hid];
            let grow = &mut g.fc2_w[k * hid..(k + 1) * hid];
            for j in 0..hid {
                g1[j] += d * row[j];
                grow[j] += d * tr.s1.iter().map(|s| s[j]).sum::<f64>();
            }
        }

        let mut dv1_next = vec![0.0; hid];
        let mut dv0_next = vec![0.0; n0];
        let mut di1 = vec![0.0; hid];
        let mut di0 = vec![0.0; n0];
        for t in (0..steps).rev() {
            let (v1, s1) = (&tr.v1[t], &tr.s1[t]);
            for j in 0..hid {
                let ds = g1[j] - dv1_next[j] * decay * v1[j];
                di1[j] =
                    ds * surrogate_gradient(v1[j], &self.lif) + dv1_next[j] * decay * (1.0 - s1[j]);
            }

            let (v0, s0) = (&tr.v0[t], &tr.s0[t]);
            for (b, d) in g.fc1_b.iter_mut().zip(&di1) {
                *b += d;
            }
            for i in 0..n0 {
                let row = i * hid..(i + 1) * hid;
                if s0[i] != 0.0 {
                    for (gw, d) in g.fc1_w[row.clone()].iter_mut().zip(&di1) {
                        *gw += s0[i] * d;
                    }
                }
                let fp = surrogate_gradient(v0[i], &self.lif);
                let mut ds = -dv0_next[i] * decay * v0[i];
                if fp != 0.0 {
                    ds += p.fc1_w[row]
                        .iter()
                        .zip(&di1)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
                di0[i] = ds * fp + dv0_next[i] * decay * (1.0 - s0[i]);
            }

            for px in di0.chunks_exact(cc) {
                for (b, d) in g.conv_b.iter_mut().zip(px) {
                    *b += d;
                }
            }
            for &(c, yi, xi) in &tr.active[t] {
                for_each_tap(h, w, yi, xi, |ky, kx, y, x| {
                    let wb = ((c * 3 + ky) * 3 + kx) * cc;
                    let ob = (y * w + x) * cc;
                    for (gw, d) in g.conv_w[wb..wb + cc].iter_mut().zip(&di0[ob..ob + cc]) {
                        *gw += d;
                    }
                });
            }

            std::mem::swap(&mut dv1_next, &mut di1);
            std::mem::swap(&mut dv0_next, &mut di0);
        }
    }

    pub fn predict(&self, input: &impl SpikeInput) -> Result<usize> {
        Ok(argmax(&self.forward(input)?))
    }

    /// Mean cross-entropy over a set of samples under the given spike function.
    pub fn loss(&self, inputs: &[SpikeTensor], labels: &[u8], f: SpikeFn) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            total += cross_entropy(&self.forward_with(x, f)?, y as usize).0;
        }
        Ok(total / inputs.len().max(1) as f64)
    }
}

/// Output positions `(y, x)` an input pixel reaches through each 3x3 tap with
/// padding 1: `y = yi + 1 - ky`, `x = xi + 1 - kx`.
#[inline]
fn for_each_tap(
    h: usize,
    w: usize,
    yi: usize,
    xi: usize,
    mut f: impl FnMut(usize, usize, usize, usize),
) {
    for ky in 0..3 {
        let Some(y) = (yi + 1).checked_sub(ky).filter(|&y| y < h) else {
            continue;
        };
        for kx in 0..3 {
            let Some(x) = (xi + 1).checked_sub(kx).filter(|&x| x < w) else {
                continue;
            };
            f(ky, kx, y, x);
        }
    }
}

/// `(loss, dloss/dscores)` for softmax cross-entropy.
pub fn cross_entropy(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + m - scores[label];
    let mut d: Vec<f64> = exps.iter().map(|e| e / z).collect();
    d[label] -= 1.0;
    (loss, d)
}

/// Index of the largest score; the first one wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Shape4;

    fn small_arch() -> Architecture {
        Architecture {
            in_channels: 2,
            height: 4,
            width: 4,
            conv_channels: 3,
            hidden: 5,
            classes: 4,
        }
    }

    #[test]
    fn zero_input_zero_biases_gives_zero_scores() {
        let mut p = NetworkParams::init(Architecture::standard(1, 28, 28), LifParams::default(), 1)
            .unwrap();
        for b in [
            &mut p.tensors.conv_b,
            &mut p.tensors.fc1_b,
            &mut p.tensors.fc2_b,
        ] {
            b.iter_mut().for_each(|x| *x = 0.0);
        }
        let x = SpikeTensor::zeros(Shape4::new(1, 12, 28, 28));
        assert!(p.forward(&x).unwrap().iter().all(|&s| s == 0.0));

        p.tensors.fc2_b = (0..10).map(|k| k as f64 * 0.5).collect();
        let s = p.forward(&x).unwrap();
        for k in 0..10 {
            assert_eq!(s[k], 12.0 * k as f64 * 0.5);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let p = NetworkParams::init(small_arch(), LifParams::default(), 7).unwrap();
        let q = NetworkParams::init(small_arch(), LifParams::default(), 7).unwrap();
        assert_eq!(p, q);
        let mut x = SpikeTensor::zeros(Shape4::new(2, 3, 4, 4));
        x.set(0, 0, 1, 1, true);
        x.set(1, 2, 3, 0, true);
        let a = p.forward(&x).unwrap();
        let b = q.forward(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn conv_matches_direct_correlation() {
        // one conv channel that spikes when its input exceeds threshold lets us
        // read the conv output through fc1 as an identity map
        let arch = Architecture {
            in_channels: 1,
            height: 3,
            width: 3,
            conv_channels: 1,
            hidden: 9,
            classes: 2,
        };
        let mut p = NetworkParams::init(arch, LifParams::default(), 0).unwrap();
        p.tensors.conv_w = vec![0.0; 9];
        p.tensors.conv_w[0] = 1.0; // ky = 0, kx = 0 reads in[y-1][x-1]
        p.tensors.conv_b = vec![0.0];
        let mut x = SpikeTensor::zeros(Shape4::new(1, 1, 3, 3));
        x.set(0, 0, 0, 0, true);
        let (_, tr) = p.run(&x, SpikeFn::Heaviside, true);
        let s0 = &tr.unwrap().s0[0];
        let expect = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(s0.as_slice(), &expect);
    }

    #[test]
    fn packed_input_matches_dense() {
        let p = NetworkParams::init(small_arch(), LifParams::default(), 8).unwrap();
        let mut x = SpikeTensor::zeros(Shape4::new(2, 3, 4, 4));
        x.set(0, 0, 1, 1, true);
        x.set(1, 1, 2, 3, true);
        x.set(0, 2, 3, 0, true);
        let packed = PackedSpikes::pack(&x);
        assert_eq!(p.forward(&x).unwrap(), p.forward(&packed).unwrap());
    }

    #[test]
    fn rejects_wrong_shapes() {
        let p = NetworkParams::init(small_arch(), LifParams::default(), 7).unwrap();
        assert!(matches!(
            p.forward(&SpikeTensor::zeros(Shape4::new(1, 3, 4, 4))),
            Err(CteError::Dimension(_))
        ));
        let mut g = ParamTensors::zeros(&p.arch);
        assert!(p
            .accumulate_gradients(
                &SpikeTensor::zeros(Shape4::new(2, 3, 4, 4)),
                9,
                SpikeFn::Heaviside,
                &mut g
            )
            .is_err());
    }

    fn numeric_vs_analytic(seed: u64) {
        let arch = small_arch();
        let mut p = NetworkParams::init(arch, LifParams::default(), seed).unwrap();
        // larger weights push membranes into the surrogate's support
        for t in p.tensors.slices_mut() {
            t.iter_mut().for_each(|v| *v *= 2.5);
        }
        let mut x = SpikeTensor::zeros(Shape4::new(2, 3, 4, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for c in 0..2 {
            for t in 0..3 {
                for y in 0..4 {
                    for xx in 0..4 {
                        x.set(c, t, y, xx, rng.gen_bool(0.4));
                    }
                }
            }
        }
        let label = 2;
        let mut g = ParamTensors::zeros(&arch);
        p.accumulate_gradients(&x, label, SpikeFn::Smooth, &mut g)
            .unwrap();
        let loss = |q: &NetworkParams| {
            cross_entropy(&q.forward_with(&x, SpikeFn::Smooth).unwrap(), label).0
        };

        let h = 1e-6;
        for (k, name) in TENSOR_NAMES.iter().enumerate() {
            let len = p.tensors.slices()[k].len();
            let stride = (len / 60).max(1);
            let (mut diff, mut scale) = (0.0f64, 0.0f64);
            for i in (0..len).step_by(stride) {
                let mut q = p.clone();
                q.tensors.slices_mut()[k][i] += h;
                let up = loss(&q);
                q.tensors.slices_mut()[k][i] -= 2.0 * h;
                let down = loss(&q);
                let fd = (up - down) / (2.0 * h);
                let an = g.slices()[k][i];
                diff += (fd - an).powi(2);
                scale += fd.powi(2) + an.powi(2);
            }
            let rel = diff.sqrt() / scale.sqrt().max(1e-12);
            assert!(scale > 0.0, "{name}: gradient vanished, check is vacuous");
            assert!(rel <= 1e-3, "{name}: relative error {rel}");
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for seed in [1, 2, 3] {
            numeric_vs_analytic(seed);
        }
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (l, d) = cross_entropy(&[1.0, 2.0, 0.5], 1);
        assert!(l > 0.0);
        assert!(d.iter().sum::<f64>().abs() < 1e-12);
        assert!(d[1] < 0.0);
    }
}
