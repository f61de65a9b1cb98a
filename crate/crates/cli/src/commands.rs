use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cte_core::ingest::{self, ArchiveWriter, Split};
use cte_core::metrics::{
    encoding_csv, flicker_rate, report_summary, summarize_stats, EncodingReport, SampleStat,
};
use cte_core::snn::{
    self, checkpoint, train::history_row, train::HISTORY_HEADER, Architecture, Dataset,
    NetworkParams, SURROGATE_DESCRIPTION,
};
use cte_core::types::{PackedSpikes, SpikeTensor};

use crate::config::{RunConfig, Variant};
use crate::data::{encode_each, load_raw, packed_split, read_spike_container};
use crate::error::{io_err, CliError};

fn create_dir(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p).map_err(|e| io_err(p, e))
}

fn write_file(p: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(p, contents).map_err(|e| io_err(p, e))
}

fn stat_for(index: usize, label: Option<u8>, t: &SpikeTensor) -> SampleStat {
    SampleStat {
        index,
        label,
        spikes: t.count_ones(),
        flicker: flicker_rate(t),
    }
}

/// Encodes the configured split into `{out}/{split}.ctea` (or one CTE1 file
/// per sample) plus `{out}/{split}_encoding.csv`.
pub fn encode(cfg: &RunConfig) -> Result<EncodingReport, CliError> {
    let raw = load_raw(cfg, cfg.resolved_encoder(), cfg.split, cfg.max_samples)?;
    create_dir(&cfg.out)?;
    let split = cfg.split.name();
    let mut stats = Vec::with_capacity(raw.len());
    let mut cells = 0usize;

    if cfg.per_sample_files {
        let dir = cfg.out.join(split);
        create_dir(&dir)?;
        encode_each(cfg, &raw, |i, y, t| {
            let p = dir.join(format!("{i:06}_{y}.cte"));
            write_file(&p, &ingest::encode_spike_file(&t)?)?;
            cells += t.shape().len();
            stats.push(stat_for(i, Some(y), &t));
            Ok(())
        })?;
    } else {
        let path = cfg.out.join(format!("{split}.ctea"));
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = ArchiveWriter::new(BufWriter::new(file), raw.len())?;
        encode_each(cfg, &raw, |i, y, t| {
            w.push(Some(y), &t)?;
            cells += t.shape().len();
            stats.push(stat_for(i, Some(y), &t));
            Ok(())
        })?;
        w.finish()?;
    }

    let report = summarize_stats(&stats, cells)?;
    let csv = cfg.out.join(format!("{split}_encoding.csv"));
    write_file(&csv, encoding_csv(&stats, &report).as_bytes())?;
    println!("{}", report_summary(&report));
    Ok(report)
}

fn datasets(
    cfg: &RunConfig,
) -> Result<
    (
        (Vec<PackedSpikes>, Vec<u8>),
        Option<(Vec<PackedSpikes>, Vec<u8>)>,
    ),
    CliError,
> {
    let train = packed_split(
        cfg,
        cfg.train_archive.as_deref(),
        Split::Train,
        cfg.max_samples,
    )?;
    let val = if cfg.val_samples > 0 || cfg.test_archive.is_some() {
        Some(packed_split(
            cfg,
            cfg.test_archive.as_deref(),
            Split::Test,
            cfg.val_samples,
        )?)
    } else {
        None
    };
    Ok((train, val))
}

fn arch_for(xs: &[PackedSpikes]) -> Result<Architecture, CliError> {
    let first = xs
        .first()
        .ok_or_else(|| CliError::Io("no training samples".into()))?;
    let s = first.shape();
    if let Some(bad) = xs.iter().find(|x| x.shape() != s) {
        return Err(CliError::Io(format!(
            "inconsistent sample shapes {:?} and {:?}",
            s,
            bad.shape()
        )));
    }
    Ok(Architecture::standard(s.channels, s.height, s.width))
}

/// Trains from scratch; writes `model.ctek`, `metrics.csv` and `run_report.txt`.
pub fn train(cfg: &RunConfig) -> Result<Vec<snn::EpochMetrics>, CliError> {
    let ((xs, ys), val) = datasets(cfg)?;
    let train_set = Dataset::new(&xs, &ys)?;
    let val_set = match &val {
        Some((vx, vy)) => Some(Dataset::new(vx, vy)?),
        None => None,
    };
    let arch = arch_for(&xs)?;
    create_dir(&cfg.out)?;

    let report = format!(
        "surrogate = {SURROGATE_DESCRIPTION}\nreset = hard (v <- 0 after a spike)\nreadout = fc2 outputs summed over time, cross-entropy\narchitecture = {arch:?}\ntrain_samples = {}\nval_samples = {}\n\n{}",
        xs.len(),
        val.as_ref().map(|v| v.0.len()).unwrap_or(0),
        cfg.to_text()
    );
    write_file(&cfg.out.join("run_report.txt"), report.as_bytes())?;

    let metrics_path = cfg.out.join("metrics.csv");
    let file = File::create(&metrics_path).map_err(|e| io_err(&metrics_path, e))?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "{HISTORY_HEADER}").map_err(|e| io_err(&metrics_path, e))?;
    println!("{HISTORY_HEADER}");
    let mut write_err = None;

    let params = NetworkParams::init(arch, cfg.lif, cfg.seed)?;
    let mut train_cfg = cfg.train;
    train_cfg.seed = cfg.seed;
    let (params, history) =
        snn::train_with(params, &train_set, val_set.as_ref(), &train_cfg, |m| {
            let row = history_row(m);
            println!("{row}");
            if let Err(e) = writeln!(csv, "{row}").and_then(|_| csv.flush()) {
                write_err.get_or_insert(e);
            }
        })?;
    if let Some(e) = write_err {
        return Err(io_err(&metrics_path, e));
    }
    checkpoint::save_checkpoint(&params, &cfg.checkpoint_path())?;
    Ok(history)
}

/// Scores a checkpoint on the configured split; writes `eval.csv`.
pub fn eval(cfg: &RunConfig) -> Result<snn::EvalResult, CliError> {
    let params = checkpoint::load_checkpoint(&cfg.checkpoint_path())?;
    let (xs, ys) = packed_split(cfg, cfg.test_archive.as_deref(), cfg.split, cfg.max_samples)?;
    let data = Dataset::new(&xs, &ys)?;
    let r = snn::evaluate(&params, &data)?;
    create_dir(&cfg.out)?;
    let csv = format!(
        "samples,accuracy,mean_spikes\n{},{:.6},{:.3}\n",
        r.samples, r.accuracy, r.mean_spikes
    );
    write_file(&cfg.out.join("eval.csv"), csv.as_bytes())?;
    println!(
        "samples={} accuracy={:.4} mean_spikes={:.1}",
        r.samples, r.accuracy, r.mean_spikes
    );
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: EncodingReport,
    pub accuracy: Option<f64>,
}

pub const ABLATION_HEADER: &str =
    "variant,encoder,samples,mean_spikes,median_spikes,sparsity,flicker_artifact_metric,accuracy";

/// Encodes the same sample set under each variant and, when `ablate_train`
/// is set, trains and scores one network per variant with the shared seed.
pub fn ablate(cfg: &RunConfig, variants: &[Variant]) -> Result<Vec<AblationRow>, CliError> {
    if cfg.ablate_train && cfg.val_samples == 0 && cfg.test_archive.is_none() {
        return Err(CliError::Config(
            "ablate_train needs val_samples > 0 to score variants".into(),
        ));
    }
    create_dir(&cfg.out)?;
    let mut rows = Vec::new();
    let mut table = format!("{ABLATION_HEADER}\n");
    println!("{ABLATION_HEADER}");
    for &v in variants {
        let mut vc = cfg.clone();
        vc.variant = v;
        let raw = load_raw(&vc, vc.resolved_encoder(), vc.split, vc.max_samples)?;
        let mut stats = Vec::with_capacity(raw.len());
        let mut cells = 0;
        encode_each(&vc, &raw, |i, y, t| {
            cells += t.shape().len();
            stats.push(stat_for(i, Some(y), &t));
            Ok(())
        })?;
        let report = summarize_stats(&stats, cells)?;

        let accuracy = if vc.ablate_train {
            let ((xs, ys), val) = datasets(&vc)?;
            let (vx, vy) = val.expect("validation set checked above");
            let params = NetworkParams::init(arch_for(&xs)?, vc.lif, vc.seed)?;
            let mut tc = vc.train;
            tc.seed = vc.seed;
            let (params, _) = snn::train(params, &Dataset::new(&xs, &ys)?, None, &tc)?;
            Some(snn::evaluate(&params, &Dataset::new(&vx, &vy)?)?.accuracy)
        } else {
            None
        };

        let row = format!(
            "{},{},{},{:.3},{:.1},{:.6},{},{}",
            v.name(),
            vc.resolved_encoder().name(),
            report.samples,
            report.mean_spikes,
            report.median_spikes,
            report.sparsity,
            report
                .flicker
                .map(|f| format!("{f:.6}"))
                .unwrap_or_default(),
            accuracy.map(|a| format!("{a:.6}")).unwrap_or_default()
        );
        println!("{row}");
        table.push_str(&row);
        table.push('\n');
        rows.push(AblationRow {
            variant: v,
            report,
            accuracy,
        });
    }
    write_file(&cfg.out.join("ablation.csv"), table.as_bytes())?;
    Ok(rows)
}

/// Binary P5 graymap: 255 where any channel spikes at bin `t`.
pub fn pgm_frame(tensor: &SpikeTensor, t: usize) -> Vec<u8> {
    let s = tensor.shape();
    let mut out = format!("P5\n{} {}\n255\n", s.width, s.height).into_bytes();
    let mut px = vec![0u8; s.frame_len()];
    for c in 0..s.channels {
        for (p, &v) in px.iter_mut().zip(tensor.frame(c, t)) {
            if v != 0 {
                *p = 255;
            }
        }
    }
    out.extend_from_slice(&px);
    out
}

/// Writes `frame_{t:03}.pgm` for every time bin of one sample.
pub fn render(input: &Path, index: usize, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut samples = read_spike_container(input)?;
    if index >= samples.len() {
        return Err(CliError::Config(format!(
            "index {index} out of range: {} holds {} sample(s)",
            input.display(),
            samples.len()
        )));
    }
    let (_, tensor) = samples.swap_remove(index);
    create_dir(out)?;
    let mut written = Vec::new();
    for t in 0..tensor.shape().steps {
        let p = out.join(format!("frame_{t:03}.pgm"));
        write_file(&p, &pgm_frame(&tensor, t))?;
        written.push(p);
    }
    println!("wrote {} frames to {}", written.len(), out.display());
    Ok(written)
}

/// Spike statistics of a CTE1 file or CTEA archive.
pub fn stats(input: &Path, out: Option<&Path>) -> Result<EncodingReport, CliError> {
    let samples = read_spike_container(input)?;
    let stats: Vec<SampleStat> = samples
        .iter()
        .enumerate()
        .map(|(i, (label, t))| stat_for(i, *label, t))
        .collect();
    let cells = samples.iter().map(|(_, t)| t.shape().len()).sum();
    let report = summarize_stats(&stats, cells)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(
            &dir.join("stats.csv"),
            encoding_csv(&stats, &report).as_bytes(),
        )?;
    }
    println!("{}", report_summary(&report));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cte_core::types::Shape4;

    #[test]
    fn single_spike_renders_one_white_pixel() {
        let mut t = SpikeTensor::zeros(Shape4::new(1, 5, 8, 9));
        t.set(0, 3, 5, 7, true);
        let header = b"P5\n9 8\n255\n".len();
        for step in 0..5 {
            let img = pgm_frame(&t, step);
            let px = &img[header..];
            assert_eq!(px.len(), 72);
            let white: Vec<usize> = (0..72).filter(|&i| px[i] == 255).collect();
            if step == 3 {
                assert_eq!(white, vec![5 * 9 + 7]);
            } else {
                assert!(white.is_empty());
            }
        }
    }

    #[test]
    fn channels_are_summed_and_clipped() {
        let mut t = SpikeTensor::zeros(Shape4::new(2, 1, 1, 2));
        t.set(0, 0, 0, 0, true);
        t.set(1, 0, 0, 0, true);
        t.set(1, 0, 0, 1, true);
        let img = pgm_frame(&t, 0);
        assert_eq!(&img[img.len() - 2..], &[255, 255]);
    }
}
