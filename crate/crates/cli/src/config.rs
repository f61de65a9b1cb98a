//! Flat `key = value` run configuration. `#` starts a comment. Unknown and
//! repeated keys are rejected. Defaults are the encoder hyperparameter table.

use std::fmt::Write as _;
use std::path::PathBuf;

use cte_core::encode2d::{Ablation2D, DensityWindow, Encoder2DConfig, TemporalCode};
use cte_core::encode3d::{Ablation3D, Encoder3DConfig};
use cte_core::ingest::Split;
use cte_core::snn::{LifParams, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    TwoD,
    ThreeD,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::TwoD => "2d",
            EncoderKind::ThreeD => "3d",
        }
    }
}

/// Ablation variant. The 2D-only and 3D-only variants pin the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoCc,
    NoCluster,
    PerFrame,
    NoSt3d,
    Spatial2d,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoCc,
        Variant::NoCluster,
        Variant::PerFrame,
        Variant::NoSt3d,
        Variant::Spatial2d,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "full" | "default" => Variant::Full,
            "no_cc" => Variant::NoCc,
            "no_cluster" => Variant::NoCluster,
            "per_frame" => Variant::PerFrame,
            "no_st3d" => Variant::NoSt3d,
            "spatial2d" => Variant::Spatial2d,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCc => "no_cc",
            Variant::NoCluster => "no_cluster",
            Variant::PerFrame => "per_frame",
            Variant::NoSt3d => "no_st3d",
            Variant::Spatial2d => "spatial2d",
        }
    }

    pub fn encoder(self) -> Option<EncoderKind> {
        match self {
            Variant::Full => None,
            Variant::NoCc | Variant::NoCluster => Some(EncoderKind::TwoD),
            Variant::PerFrame | Variant::NoSt3d | Variant::Spatial2d => Some(EncoderKind::ThreeD),
        }
    }

    pub fn ablation_2d(self) -> Ablation2D {
        Ablation2D {
            no_cc: self == Variant::NoCc,
            no_cluster: self == Variant::NoCluster,
        }
    }

    pub fn ablation_3d(self) -> Ablation3D {
        match self {
            Variant::PerFrame => Ablation3D::PerFrame2D,
            Variant::NoSt3d => Ablation3D::NoSt3d,
            Variant::Spatial2d => Ablation3D::SpatialOnly2D,
            _ => Ablation3D::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub encoder: EncoderKind,
    pub mnist_dir: Option<PathBuf>,
    pub nmnist_dir: Option<PathBuf>,
    pub train_archive: Option<PathBuf>,
    pub test_archive: Option<PathBuf>,
    pub split: Split,
    /// Seeded random subset size; 0 keeps every sample.
    pub max_samples: usize,
    /// Held-out test-split samples scored during training and ablation.
    pub val_samples: usize,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub per_sample_files: bool,
    pub seed: u64,
    pub enc2d: Encoder2DConfig,
    pub enc3d: Encoder3DConfig,
    pub variant: Variant,
    pub variants: Vec<Variant>,
    pub ablate_train: bool,
    pub train: TrainConfig,
    pub lif: LifParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder: EncoderKind::TwoD,
            mnist_dir: None,
            nmnist_dir: None,
            train_archive: None,
            test_archive: None,
            split: Split::Test,
            max_samples: 0,
            val_samples: 0,
            out: PathBuf::from("out"),
            checkpoint: None,
            per_sample_files: false,
            seed: 0,
            enc2d: Encoder2DConfig::default(),
            enc3d: Encoder3DConfig::default(),
            variant: Variant::Full,
            variants: vec![Variant::Full],
            ablate_train: false,
            train: TrainConfig::default(),
            lif: LifParams::default(),
        }
    }
}

pub const KEYS: [&str; 38] = [
    "encoder",
    "mnist_dir",
    "nmnist_dir",
    "train_archive",
    "test_archive",
    "split",
    "max_samples",
    "val_samples",
    "out",
    "checkpoint",
    "per_sample_files",
    "seed",
    "tau_clu",
    "time_steps",
    "mode",
    "burst_max",
    "burst_dt",
    "burst_refrac",
    "window",
    "k_components",
    "remove_border",
    "target_ratio",
    "t_bins",
    "k_t",
    "k_h",
    "k_w",
    "tau_st",
    "merge_polarity",
    "ablation",
    "variants",
    "ablate_train",
    "lr",
    "weight_decay",
    "batch_size",
    "epochs",
    "v_th",
    "decay",
    "spike_fn",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse '{v}'")))
}

fn boolean(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!(
            "{key}: expected true or false, got '{v}'"
        ))),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn variant(key: &str, v: &str) -> Result<Variant, CliError> {
    Variant::parse(v).ok_or_else(|| {
        let known: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        CliError::Config(format!(
            "{key}: unknown variant '{v}' (known: {})",
            known.join(", ")
        ))
    })
}

impl RunConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(CliError::Config(format!(
                    "line {}: key '{k}' given twice",
                    n + 1
                )));
            }
            seen.push(k);
            cfg.set(k, v.trim())
                .map_err(|e| CliError::Config(format!("line {}: {}", n + 1, e.message())))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "encoder" => {
                self.encoder = match v {
                    "2d" => EncoderKind::TwoD,
                    "3d" => EncoderKind::ThreeD,
                    _ => {
                        return Err(CliError::Config(format!(
                            "encoder: expected 2d or 3d, got '{v}'"
                        )))
                    }
                }
            }
            "mnist_dir" => self.mnist_dir = path(v),
            "nmnist_dir" => self.nmnist_dir = path(v),
            "train_archive" => self.train_archive = path(v),
            "test_archive" => self.test_archive = path(v),
            "split" => {
                self.split = Split::parse(v).ok_or_else(|| {
                    CliError::Config(format!("split: expected train or test, got '{v}'"))
                })?
            }
            "max_samples" => self.max_samples = num(key, v)?,
            "val_samples" => self.val_samples = num(key, v)?,
            "out" => {
                self.out =
                    path(v).ok_or_else(|| CliError::Config("out: must not be empty".into()))?
            }
            "checkpoint" => self.checkpoint = path(v),
            "per_sample_files" => self.per_sample_files = boolean(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "tau_clu" => self.enc2d.tau_clu = num(key, v)?,
            "time_steps" => self.enc2d.time_steps = num(key, v)?,
            "mode" => {
                self.enc2d.mode = match v {
                    "ttfs" => TemporalCode::Ttfs,
                    "burst" => TemporalCode::Burst,
                    _ => {
                        return Err(CliError::Config(format!(
                            "mode: expected ttfs or burst, got '{v}'"
                        )))
                    }
                }
            }
            "burst_max" => self.enc2d.burst_max = num(key, v)?,
            "burst_dt" => self.enc2d.dt = num(key, v)?,
            "burst_refrac" => self.enc2d.refrac = num(key, v)?,
            "window" => {
                self.enc2d.window = match v {
                    "anchored" => DensityWindow::Anchored,
                    "centered" => DensityWindow::Centered,
                    _ => {
                        return Err(CliError::Config(format!(
                            "window: expected anchored or centered, got '{v}'"
                        )))
                    }
                }
            }
            "k_components" => self.enc2d.preprocess.k_components = num(key, v)?,
            "remove_border" => self.enc2d.preprocess.remove_border = boolean(key, v)?,
            "target_ratio" => self.enc2d.preprocess.target_ratio = num(key, v)?,
            "t_bins" => self.enc3d.time_bins = num(key, v)?,
            "k_t" => self.enc3d.k_t = num(key, v)?,
            "k_h" => self.enc3d.k_h = num(key, v)?,
            "k_w" => self.enc3d.k_w = num(key, v)?,
            "tau_st" => self.enc3d.tau_st = num(key, v)?,
            "merge_polarity" => self.enc3d.merge_polarity = boolean(key, v)?,
            "ablation" => self.variant = variant(key, v)?,
            "variants" => {
                self.variants = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| variant(key, s))
                    .collect::<Result<_, _>>()?
            }
            "ablate_train" => self.ablate_train = boolean(key, v)?,
            "lr" => self.train.lr = num(key, v)?,
            "weight_decay" => self.train.weight_decay = num(key, v)?,
            "batch_size" => self.train.batch_size = num(key, v)?,
            "epochs" => self.train.epochs = num(key, v)?,
            "v_th" => self.lif.v_th = num(key, v)?,
            "decay" => self.lif.decay = num(key, v)?,
            "spike_fn" => {
                self.train.spike_fn = match v {
                    "heaviside" => cte_core::snn::SpikeFn::Heaviside,
                    "smooth" => cte_core::snn::SpikeFn::Smooth,
                    _ => {
                        return Err(CliError::Config(format!(
                            "spike_fn: expected heaviside or smooth, got '{v}'"
                        )))
                    }
                }
            }
            _ => return Err(CliError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects key=value, got '{o}'")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Encoder and variant after resolving variant-specific encoders.
    pub fn resolved_encoder(&self) -> EncoderKind {
        self.variant.encoder().unwrap_or(self.encoder)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.enc2d.validate()?;
        self.enc3d.validate()?;
        self.train.validate()?;
        if !self.lif.is_valid() {
            return Err(CliError::Config(format!(
                "v_th must be positive and decay in [0,1], got {:?}",
                self.lif
            )));
        }
        if self.variants.is_empty() {
            return Err(CliError::Config(
                "variants: at least one variant required".into(),
            ));
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("model.ctek"))
    }

    /// Every key with its effective value, in parseable form.
    pub fn to_text(&self) -> String {
        let p = |o: &Option<PathBuf>| {
            o.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let e2 = &self.enc2d;
        let e3 = &self.enc3d;
        let t = &self.train;
        let vals: [String; 38] = [
            self.encoder.name().into(),
            p(&self.mnist_dir),
            p(&self.nmnist_dir),
            p(&self.train_archive),
            p(&self.test_archive),
            self.split.name().into(),
            self.max_samples.to_string(),
            self.val_samples.to_string(),
            self.out.display().to_string(),
            p(&self.checkpoint),
            self.per_sample_files.to_string(),
            self.seed.to_string(),
            e2.tau_clu.to_string(),
            e2.time_steps.to_string(),
            match e2.mode {
                TemporalCode::Ttfs => "ttfs".into(),
                TemporalCode::Burst => "burst".into(),
            },
            e2.burst_max.to_string(),
            e2.dt.to_string(),
            e2.refrac.to_string(),
            match e2.window {
                DensityWindow::Anchored => "anchored".into(),
                DensityWindow::Centered => "centered".into(),
            },
            e2.preprocess.k_components.to_string(),
            e2.preprocess.remove_border.to_string(),
            e2.preprocess.target_ratio.to_string(),
            e3.time_bins.to_string(),
            e3.k_t.to_string(),
            e3.k_h.to_string(),
            e3.k_w.to_string(),
            e3.tau_st.to_string(),
            e3.merge_polarity.to_string(),
            self.variant.name().into(),
            self.variants
                .iter()
                .map(|v| v.name())
                .collect::<Vec<_>>()
                .join(","),
            self.ablate_train.to_string(),
            t.lr.to_string(),
            t.weight_decay.to_string(),
            t.batch_size.to_string(),
            t.epochs.to_string(),
            self.lif.v_th.to_string(),
            self.lif.decay.to_string(),
            match t.spike_fn {
                cte_core::snn::SpikeFn::Heaviside => "heaviside".into(),
                cte_core::snn::SpikeFn::Smooth => "smooth".into(),
            },
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(vals) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
