//! Dataset selection and chunked parallel encoding.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use cte_core::encode2d::encode2d_pipeline;
use cte_core::encode3d::encode3d_pipeline;
use cte_core::ingest::{self, ArchiveReader, Split};
use cte_core::types::{Frame, PackedSpikes, SpikeTensor};

use crate::config::{EncoderKind, RunConfig};
use crate::error::{io_err, CliError};

/// Samples encoded per parallel round; bounds dense-tensor memory.
const ENCODE_CHUNK: usize = 256;

pub enum RawSet {
    Frames(Vec<Frame>),
    Events(Vec<PathBuf>),
}

pub struct RawData {
    pub set: RawSet,
    pub labels: Vec<u8>,
}

impl RawData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }
}

/// Seeded subset of `n` indices, or all of them in order when `limit` is 0
/// or at least `n`.
pub fn subset(n: usize, limit: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if limit == 0 || limit >= n {
        return idx;
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(limit);
    idx
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    let p = p
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("{key} must be set for this encoder")))?;
    if !p.is_dir() {
        return Err(CliError::Io(format!(
            "{key} {} is not a readable directory",
            p.display()
        )));
    }
    Ok(p)
}

pub fn load_raw(
    cfg: &RunConfig,
    encoder: EncoderKind,
    split: Split,
    limit: usize,
) -> Result<RawData, CliError> {
    match encoder {
        EncoderKind::TwoD => {
            let root = required(&cfg.mnist_dir, "mnist_dir")?;
            let (_, frames, labels) = ingest::load_mnist(root, split)?;
            let pick = subset(frames.len(), limit, cfg.seed);
            Ok(RawData {
                labels: pick.iter().map(|&i| labels[i]).collect(),
                set: RawSet::Frames(pick.iter().map(|&i| frames[i].clone()).collect()),
            })
        }
        EncoderKind::ThreeD => {
            let root = required(&cfg.nmnist_dir, "nmnist_dir")?;
            let (_, files) = ingest::list_nmnist(root, split)?;
            let pick = subset(files.len(), limit, cfg.seed);
            Ok(RawData {
                labels: pick.iter().map(|&i| files[i].1).collect(),
                set: RawSet::Events(pick.iter().map(|&i| files[i].0.clone()).collect()),
            })
        }
    }
}

fn encode_one(cfg: &RunConfig, raw: &RawSet, i: usize) -> Result<SpikeTensor, CliError> {
    match raw {
        RawSet::Frames(frames) => {
            Ok(encode2d_pipeline(&frames[i], &cfg.enc2d, cfg.variant.ablation_2d())?.spikes)
        }
        RawSet::Events(files) => {
            let p = &files[i];
            let bytes = std::fs::read(p).map_err(|e| io_err(p, e))?;
            let stream = ingest::read_nmnist_events(&bytes)
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let stream = ingest::crop_events(&stream)?;
            let mut enc3d = cfg.enc3d;
            enc3d.ablation = cfg.variant.ablation_3d();
            Ok(encode3d_pipeline(&stream, &enc3d, &cfg.enc2d)?)
        }
    }
}

/// Encodes every sample in parallel chunks and hands results to `sink` in
/// sample order, so outputs do not depend on the thread count.
pub fn encode_each(
    cfg: &RunConfig,
    raw: &RawData,
    mut sink: impl FnMut(usize, u8, SpikeTensor) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let n = raw.len();
    let mut start = 0;
    while start < n {
        let end = (start + ENCODE_CHUNK).min(n);
        let chunk: Vec<Result<SpikeTensor, CliError>> = (start..end)
            .into_par_iter()
            .map(|i| encode_one(cfg, &raw.set, i))
            .collect();
        for (k, t) in chunk.into_iter().enumerate() {
            sink(start + k, raw.labels[start + k], t?)?;
        }
        start = end;
    }
    Ok(())
}

/// Packed inputs and labels from either a CTEA archive or raw data.
pub fn packed_split(
    cfg: &RunConfig,
    archive: Option<&Path>,
    split: Split,
    limit: usize,
) -> Result<(Vec<PackedSpikes>, Vec<u8>), CliError> {
    if let Some(path) = archive {
        return read_packed_archive(path, limit, cfg.seed);
    }
    let raw = load_raw(cfg, cfg.resolved_encoder(), split, limit)?;
    let mut xs = Vec::with_capacity(raw.len());
    let mut ys = Vec::with_capacity(raw.len());
    encode_each(cfg, &raw, |_, y, t| {
        xs.push(PackedSpikes::pack(&t));
        ys.push(y);
        Ok(())
    })?;
    Ok((xs, ys))
}

fn read_packed_archive(
    path: &Path,
    limit: usize,
    seed: u64,
) -> Result<(Vec<PackedSpikes>, Vec<u8>), CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let reader =
        ArchiveReader::new(&bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let n = reader.entry_count();
    let mut keep = vec![false; n];
    for i in subset(n, limit, seed) {
        keep[i] = true;
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, entry) in reader.enumerate() {
        let e = entry.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if !keep.get(i).copied().unwrap_or(false) {
            continue;
        }
        let label = e
            .label
            .ok_or_else(|| CliError::Io(format!("{}: entry {i} has no label", path.display())))?;
        xs.push(PackedSpikes::pack(&e.spikes));
        ys.push(label);
    }
    Ok((xs, ys))
}

/// Reads a CTE1 file or every entry of a CTEA archive.
pub fn read_spike_container(path: &Path) -> Result<Vec<(Option<u8>, SpikeTensor)>, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let wrap = |e: cte_core::CteError| CliError::Io(format!("{}: {e}", path.display()));
    if bytes.starts_with(ingest::ARCHIVE_MAGIC) {
        ArchiveReader::new(&bytes)
            .map_err(wrap)?
            .map(|r| r.map(|e| (e.label, e.spikes)).map_err(wrap))
            .collect()
    } else {
        Ok(vec![(
            None,
            ingest::decode_spike_file(&bytes).map_err(wrap)?,
        )])
    }
}
