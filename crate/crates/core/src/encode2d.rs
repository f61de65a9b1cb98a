//! Static-image encoder: local density, cluster trigger, TTFS and burst codes.

use crate::error::{CteError, Result};
use crate::preprocess::{
    binarize_with_polarity, component_prior, PolarityChoice, DEFAULT_TARGET_RATIO,
};
use crate::types::{
    box_sum_2d, min_count_for, BinaryMask, BoxWindow, DensityMap, Frame, Shape4, SpikeTensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalCode {
    /// One spike per triggered pixel, earlier for denser neighbourhoods.
    Ttfs,
    /// `floor(M * d)` evenly spaced spikes per triggered pixel.
    Burst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityWindow {
    /// `(y..y+3, x..x+3)`.
    Anchored,
    /// `(y-1..y+2, x-1..x+2)`.
    Centered,
}

impl DensityWindow {
    pub fn box_window(self) -> BoxWindow {
        match self {
            DensityWindow::Anchored => BoxWindow::ANCHORED_4,
            DensityWindow::Centered => BoxWindow::CENTERED_4,
        }
    }
}

/// Binarization and component-prior settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub k_components: usize,
    pub remove_border: bool,
    pub target_ratio: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            k_components: 2,
            remove_border: false,
            target_ratio: DEFAULT_TARGET_RATIO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoder2DConfig {
    pub tau_clu: f64,
    pub time_steps: usize,
    pub mode: TemporalCode,
    pub burst_max: usize,
    pub dt: usize,
    pub refrac: usize,
    pub window: DensityWindow,
    pub preprocess: PreprocessConfig,
}

impl Default for Encoder2DConfig {
    fn default() -> Self {
        Encoder2DConfig {
            tau_clu: 0.25,
            time_steps: 12,
            mode: TemporalCode::Ttfs,
            burst_max: 4,
            dt: 1,
            refrac: 1,
            window: DensityWindow::Anchored,
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl Encoder2DConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CteError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.tau_clu) {
            return bad("tau_clu must lie in [0,1]");
        }
        if self.time_steps < 2 {
            return bad("time_steps must be at least 2");
        }
        if self.burst_max < 1 {
            return bad("burst_max must be at least 1");
        }
        if self.dt < 1 {
            return bad("dt must be at least 1");
        }
        if self.preprocess.k_components < 1 {
            return bad("k_components must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.preprocess.target_ratio) {
            return bad("target_ratio must lie in [0,1]");
        }
        Ok(())
    }

    /// Spacing between burst spikes.
    pub fn burst_interval(&self) -> usize {
        self.dt + self.refrac
    }
}

/// Component switches for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation2D {
    /// Skip connected-component filtering.
    pub no_cc: bool,
    /// Use the foreground mask itself as the trigger mask.
    pub no_cluster: bool,
}

/// Foreground-only 4x4 box density with the anchored window.
pub fn density_2d(foreground: &BinaryMask) -> DensityMap {
    density_2d_with(foreground, DensityWindow::Anchored)
}

/// `d(y,x) = box_sum(y,x) / 16` on foreground pixels, exactly 0 on background.
pub fn density_2d_with(foreground: &BinaryMask, window: DensityWindow) -> DensityMap {
    let win = window.box_window();
    let mut counts = box_sum_2d(foreground, win);
    for (c, &b) in counts.iter_mut().zip(foreground.data()) {
        if b == 0 {
            *c = 0;
        }
    }
    DensityMap::new(
        1,
        foreground.height(),
        foreground.width(),
        win.area(),
        counts,
    )
    .expect("box sums never exceed the window area")
}

/// Foreground pixels whose window count reaches `min_count_for(tau_clu, 16)`.
pub fn cluster_trigger(
    foreground: &BinaryMask,
    density: &DensityMap,
    tau_clu: f64,
) -> Result<BinaryMask> {
    check_density_shape(foreground, density)?;
    let need = min_count_for(tau_clu, density.volume());
    let data = foreground
        .data()
        .iter()
        .zip(density.counts())
        .map(|(&b, &c)| (b == 1 && c >= need) as u8)
        .collect();
    BinaryMask::new(foreground.height(), foreground.width(), data)
}

/// Time-to-first-spike: one spike at `floor((1 - d) * (T - 1))` per triggered pixel.
pub fn encode_ttfs(
    density: &DensityMap,
    trigger: &BinaryMask,
    time_steps: usize,
) -> Result<SpikeTensor> {
    check_density_shape(trigger, density)?;
    if time_steps < 2 {
        return Err(CteError::Config("time_steps must be at least 2".into()));
    }
    let (h, w) = (trigger.height(), trigger.width());
    let mut out = SpikeTensor::zeros(Shape4::new(1, time_steps, h, w));
    for y in 0..h {
        for x in 0..w {
            if trigger.get(y, x) {
                out.set(0, ttfs_time(density.at(y, x), time_steps), y, x, true);
            }
        }
    }
    Ok(out)
}

pub fn ttfs_time(density: f64, time_steps: usize) -> usize {
    let t = ((1.0 - density) * (time_steps - 1) as f64).floor();
    (t.max(0.0) as usize).min(time_steps - 1)
}

/// Burst code: spikes at `k * (dt + refrac)` for `k < floor(M * d)`, dropping any
/// that would land at or beyond `T`.
pub fn encode_burst(
    density: &DensityMap,
    trigger: &BinaryMask,
    cfg: &Encoder2DConfig,
) -> Result<SpikeTensor> {
    check_density_shape(trigger, density)?;
    cfg.validate()?;
    let (h, w) = (trigger.height(), trigger.width());
    let steps = cfg.time_steps;
    let interval = cfg.burst_interval();
    let mut out = SpikeTensor::zeros(Shape4::new(1, steps, h, w));
    for y in 0..h {
        for x in 0..w {
            if !trigger.get(y, x) {
                continue;
            }
            let m = burst_count(density.at(y, x), cfg.burst_max);
            for t in (0..m).map(|k| k * interval).take_while(|&t| t < steps) {
                out.set(0, t, y, x, true);
            }
        }
    }
    Ok(out)
}

pub fn burst_count(density: f64, burst_max: usize) -> usize {
    (burst_max as f64 * density).floor().max(0.0) as usize
}

/// Intermediate masks and the final spikes of one 2D encoding.
#[derive(Debug, Clone)]
pub struct Encoded2D {
    pub spikes: SpikeTensor,
    pub foreground: BinaryMask,
    pub trigger: BinaryMask,
    pub polarity: PolarityChoice,
    /// Constant input frame; `spikes` is empty.
    pub degenerate: bool,
}

/// Binarize, filter components, compute density, trigger, then apply the temporal code.
pub fn encode2d_pipeline(
    frame: &Frame,
    cfg: &Encoder2DConfig,
    ablation: Ablation2D,
) -> Result<Encoded2D> {
    cfg.validate()?;
    let bin = binarize_with_polarity(frame, cfg.preprocess.target_ratio)?;
    let foreground = if ablation.no_cc {
        bin.mask
    } else {
        component_prior(
            &bin.mask,
            cfg.preprocess.k_components,
            cfg.preprocess.remove_border,
        )?
    };
    let (trigger, density) = trigger_mask(&foreground, cfg, ablation.no_cluster)?;
    let spikes = match cfg.mode {
        TemporalCode::Ttfs => encode_ttfs(&density, &trigger, cfg.time_steps)?,
        TemporalCode::Burst => encode_burst(&density, &trigger, cfg)?,
    };
    Ok(Encoded2D {
        spikes,
        foreground,
        trigger,
        polarity: bin.choice,
        degenerate: bin.degenerate,
    })
}

/// Density and trigger for an already-binary foreground mask.
pub fn trigger_mask(
    foreground: &BinaryMask,
    cfg: &Encoder2DConfig,
    no_cluster: bool,
) -> Result<(BinaryMask, DensityMap)> {
    let density = density_2d_with(foreground, cfg.window);
    let trigger = if no_cluster {
        foreground.clone()
    } else {
        cluster_trigger(foreground, &density, cfg.tau_clu)?
    };
    Ok((trigger, density))
}

fn check_density_shape(mask: &BinaryMask, density: &DensityMap) -> Result<()> {
    if density.steps() != 1 || density.height() != mask.height() || density.width() != mask.width()
    {
        return Err(CteError::Dimension(format!(
            "density {}x{}x{} vs mask {}x{}",
            density.steps(),
            density.height(),
            density.width(),
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}
