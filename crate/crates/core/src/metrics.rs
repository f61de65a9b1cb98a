//! Spike-count statistics and a temporal-consistency measure for encoded batches.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{CteError, Result};
use crate::types::SpikeTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingReport {
    pub samples: usize,
    pub mean_spikes: f64,
    pub median_spikes: f64,
    pub min_spikes: usize,
    pub max_spikes: usize,
    /// Total spikes over total cells.
    pub sparsity: f64,
    /// Mean of the per-sample flicker rates that are defined.
    pub flicker: Option<f64>,
    pub total_spikes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleStat {
    pub index: usize,
    pub label: Option<u8>,
    pub spikes: usize,
    pub flicker: Option<f64>,
}

pub fn sample_stats(tensors: &[SpikeTensor], labels: Option<&[u8]>) -> Vec<SampleStat> {
    tensors
        .par_iter()
        .enumerate()
        .map(|(i, t)| SampleStat {
            index: i,
            label: labels.and_then(|l| l.get(i).copied()),
            spikes: t.count_ones(),
            flicker: flicker_rate(t),
        })
        .collect()
}

pub fn spike_stats(tensors: &[SpikeTensor]) -> Result<EncodingReport> {
    summarize(tensors, &sample_stats(tensors, None))
}

pub fn summarize(tensors: &[SpikeTensor], stats: &[SampleStat]) -> Result<EncodingReport> {
    let cells: usize = tensors.iter().map(|t| t.shape().len()).sum();
    summarize_stats(stats, cells)
}

/// Aggregates per-sample stats when the tensors are no longer held;
/// `total_cells` is the summed `C*T*H*W` of the measured samples.
pub fn summarize_stats(stats: &[SampleStat], total_cells: usize) -> Result<EncodingReport> {
    if stats.is_empty() {
        return Err(CteError::Data("spike statistics of an empty batch".into()));
    }
    let mut counts: Vec<usize> = stats.iter().map(|s| s.spikes).collect();
    counts.sort_unstable();
    let n = counts.len();
    let total: usize = counts.iter().sum();
    let median = if n % 2 == 1 {
        counts[n / 2] as f64
    } else {
        (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0
    };
    let cells = total_cells;
    let defined: Vec<f64> = stats.iter().filter_map(|s| s.flicker).collect();
    Ok(EncodingReport {
        samples: n,
        mean_spikes: total as f64 / n as f64,
        median_spikes: median,
        min_spikes: counts[0],
        max_spikes: counts[n - 1],
        sparsity: if cells == 0 {
            0.0
        } else {
            total as f64 / cells as f64
        },
        flicker: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        total_spikes: total,
    })
}

/// Artifact metric: among spikes at interior bins `1 ..= T-2`, the fraction
/// with no spike at the same `(c, y, x)` in bin `t-1` or `t+1`.
///
/// `None` when `T < 3` or when no interior spike exists.
pub fn flicker_rate(tensor: &SpikeTensor) -> Option<f64> {
    let s = tensor.shape();
    if s.steps < 3 {
        return None;
    }
    let (mut interior, mut isolated) = (0usize, 0usize);
    for c in 0..s.channels {
        for t in 1..s.steps - 1 {
            let (prev, cur, next) = (
                tensor.frame(c, t - 1),
                tensor.frame(c, t),
                tensor.frame(c, t + 1),
            );
            for i in 0..cur.len() {
                if cur[i] != 0 {
                    interior += 1;
                    if prev[i] == 0 && next[i] == 0 {
                        isolated += 1;
                    }
                }
            }
        }
    }
    (interior > 0).then(|| isolated as f64 / interior as f64)
}

/// One row per sample, then an `aggregate` row.
pub fn encoding_csv(stats: &[SampleStat], report: &EncodingReport) -> String {
    let mut out = String::from("sample,label,spikes,flicker_artifact_metric\n");
    let opt = |v: Option<f64>| v.map(|f| format!("{f:.6}")).unwrap_or_default();
    for s in stats {
        let label = s.label.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", s.index, label, s.spikes, opt(s.flicker));
    }
    let _ = writeln!(
        out,
        "aggregate,,{:.3},{}",
        report.mean_spikes,
        opt(report.flicker)
    );
    out
}

pub fn report_summary(report: &EncodingReport) -> String {
    format!(
        "samples={} mean={:.1} median={:.1} min={} max={} sparsity={:.5} flicker(artifact metric)={}",
        report.samples,
        report.mean_spikes,
        report.median_spikes,
        report.min_spikes,
        report.max_spikes,
        report.sparsity,
        report.flicker.map(|f| format!("{f:.4}")).unwrap_or_else(|| "n/a".into())
    )
}
