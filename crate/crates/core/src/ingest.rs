//! Binary readers and writers: MNIST IDX, N-MNIST 5-byte AER records, the
//! CTE1 spike-tensor file and the CTEA archive that packs many of them.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{CteError, Result};
use crate::types::{Event, EventStream, Frame, Shape4, SpikeTensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const NMNIST_SENSOR: usize = 34;
pub const NMNIST_CROP: usize = 28;
pub const SPIKE_FILE_MAGIC: &[u8; 4] = b"CTE1";
pub const ARCHIVE_MAGIC: &[u8; 4] = b"CTEA";
pub const CLASS_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub samples: usize,
    pub classes: usize,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let end = at + 4;
    let b = bytes.get(at..end).ok_or(CteError::Length {
        expected: end,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn check_magic(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(CteError::Format(format!(
            "bad IDX magic 0x{found:08x}, expected 0x{expected:08x}"
        )));
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, payload: usize) -> Result<()> {
    let expected = header
        .checked_add(payload)
        .ok_or_else(|| CteError::Format("IDX dimensions overflow".into()))?;
    if bytes.len() < expected {
        return Err(CteError::Length {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CteError::Format(format!(
            "{} trailing bytes after IDX payload",
            bytes.len() - expected
        )));
    }
    Ok(())
}

/// Big-endian IDX image file (`0x00000803`, n, rows, cols, then n*rows*cols bytes).
pub fn read_idx_images(bytes: &[u8]) -> Result<Vec<Frame>> {
    check_magic(be_u32(bytes, 0)?, IDX_IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let per = rows
        .checked_mul(cols)
        .ok_or_else(|| CteError::Format("IDX dimensions overflow".into()))?;
    let payload = n
        .checked_mul(per)
        .ok_or_else(|| CteError::Format("IDX dimensions overflow".into()))?;
    check_payload(bytes, 16, payload)?;
    if per == 0 {
        return (0..n).map(|_| Frame::new(rows, cols, Vec::new())).collect();
    }
    bytes[16..]
        .chunks_exact(per)
        .map(|px| Frame::new(rows, cols, px.to_vec()))
        .collect()
}

/// Big-endian IDX label file (`0x00000801`, n, then n bytes in `[0, 9]`).
pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(be_u32(bytes, 0)?, IDX_LABELS_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    check_payload(bytes, 8, n)?;
    let labels = bytes[8..].to_vec();
    if let Some((i, &l)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= CLASS_COUNT)
    {
        return Err(CteError::Data(format!(
            "label {l} at index {i} outside [0, 9]"
        )));
    }
    Ok(labels)
}

/// N-MNIST 5-byte records: x, y, then a 24-bit big-endian word whose top bit
/// is the polarity and whose low 23 bits are the timestamp in microseconds.
pub fn read_nmnist_events(bytes: &[u8]) -> Result<EventStream> {
    if !bytes.len().is_multiple_of(5) {
        return Err(CteError::Format(format!(
            "AER payload of {} bytes is not a whole number of 5-byte records",
            bytes.len()
        )));
    }
    let mut events = Vec::with_capacity(bytes.len() / 5);
    for (i, r) in bytes.chunks_exact(5).enumerate() {
        let (x, y) = (r[0], r[1]);
        if x as usize >= NMNIST_SENSOR || y as usize >= NMNIST_SENSOR {
            return Err(CteError::Data(format!(
                "record {i}: coordinate ({x}, {y}) outside the 34x34 sensor"
            )));
        }
        let p = r[2] >> 7;
        let t = (((r[2] & 0x7f) as u64) << 16) | ((r[3] as u64) << 8) | r[4] as u64;
        events.push(Event {
            x: x as u16,
            y: y as u16,
            t,
            p,
        });
    }
    EventStream::new(events, NMNIST_SENSOR, NMNIST_SENSOR)
}

/// Center crop of a 34x34 stream to 28x28: keep `x, y` in `[3, 30]`, shift by -3.
pub fn crop_events(stream: &EventStream) -> Result<EventStream> {
    if stream.sensor_width() != NMNIST_SENSOR || stream.sensor_height() != NMNIST_SENSOR {
        return Err(CteError::Dimension(format!(
            "crop expects a 34x34 stream, got {}x{}",
            stream.sensor_width(),
            stream.sensor_height()
        )));
    }
    let margin = ((NMNIST_SENSOR - NMNIST_CROP) / 2) as u16;
    let hi = margin + NMNIST_CROP as u16;
    let kept = stream
        .events()
        .iter()
        .filter(|e| (margin..hi).contains(&e.x) && (margin..hi).contains(&e.y))
        .map(|e| Event {
            x: e.x - margin,
            y: e.y - margin,
            ..*e
        })
        .collect();
    EventStream::new(kept, NMNIST_CROP, NMNIST_CROP)
}

/// CTE1 layout: magic, little-endian u16 (channels, T, H, W), u32 spike count,
/// then one `(c, t, y, x)` u16 record per spike in lexicographic order.
pub fn encode_spike_file(tensor: &SpikeTensor) -> Result<Vec<u8>> {
    let s = tensor.shape();
    let dims = [s.channels, s.steps, s.height, s.width];
    if dims.iter().any(|&d| d > u16::MAX as usize) {
        return Err(CteError::Dimension(format!(
            "{dims:?} does not fit CTE1 u16 fields"
        )));
    }
    let n = tensor.count_ones();
    let mut out = Vec::with_capacity(16 + 8 * n);
    out.extend_from_slice(SPIKE_FILE_MAGIC);
    for d in dims {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for (c, t, y, x) in tensor.active_cells() {
        for v in [c, t, y, x] {
            out.extend_from_slice(&(v as u16).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_spike_file(bytes: &[u8]) -> Result<SpikeTensor> {
    if bytes.len() < 16 {
        return Err(CteError::Length {
            expected: 16,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != SPIKE_FILE_MAGIC {
        return Err(CteError::Format(
            "bad spike file magic, expected CTE1".into(),
        ));
    }
    let le16 = |at: usize| u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
    let shape = Shape4::new(le16(4), le16(6), le16(8), le16(10));
    let n = u32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as usize;
    let expected = 16 + 8 * n;
    if bytes.len() < expected {
        return Err(CteError::Length {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CteError::Format(format!(
            "{} trailing bytes after spike records",
            bytes.len() - expected
        )));
    }
    let mut tensor = SpikeTensor::zeros(shape);
    let mut prev: Option<[usize; 4]> = None;
    for i in 0..n {
        let at = 16 + 8 * i;
        let rec = [le16(at), le16(at + 2), le16(at + 4), le16(at + 6)];
        let [c, t, y, x] = rec;
        if c >= shape.channels || t >= shape.steps || y >= shape.height || x >= shape.width {
            return Err(CteError::Format(format!(
                "record {i} {rec:?} outside shape {shape:?}"
            )));
        }
        if prev.is_some_and(|p| p >= rec) {
            return Err(CteError::Format(format!(
                "record {i} {rec:?} is out of order"
            )));
        }
        prev = Some(rec);
        tensor.set(c, t, y, x, true);
    }
    Ok(tensor)
}

pub fn write_spike_file<W: Write>(tensor: &SpikeTensor, sink: &mut W) -> Result<()> {
    let bytes = encode_spike_file(tensor)?;
    sink.write_all(&bytes)
        .map_err(|e| CteError::io("<spike sink>", e))
}

pub fn read_spike_file<R: Read>(source: &mut R) -> Result<SpikeTensor> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| CteError::io("<spike source>", e))?;
    decode_spike_file(&bytes)
}

/// One archived sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveEntry {
    pub label: Option<u8>,
    pub spikes: SpikeTensor,
}

/// CTEA: magic, little-endian u32 entry count, then per entry a label byte
/// (255 when unlabeled), a u32 byte length and the CTE1 blob.
pub fn encode_archive(entries: &[ArchiveEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut w = ArchiveWriter::new(&mut out, entries.len())?;
    for e in entries {
        w.push(e.label, &e.spikes)?;
    }
    w.finish()?;
    Ok(out)
}

pub fn decode_archive(bytes: &[u8]) -> Result<Vec<ArchiveEntry>> {
    ArchiveReader::new(bytes)?.collect()
}

/// Streams entries into a CTEA sink whose entry count is fixed up front.
pub struct ArchiveWriter<W: Write> {
    sink: W,
    declared: usize,
    written: usize,
}

impl<W: Write> ArchiveWriter<W> {
    pub fn new(mut sink: W, count: usize) -> Result<Self> {
        let n = u32::try_from(count)
            .map_err(|_| CteError::Data(format!("{count} entries exceed the CTEA limit")))?;
        write_all(&mut sink, ARCHIVE_MAGIC)?;
        write_all(&mut sink, &n.to_le_bytes())?;
        Ok(ArchiveWriter {
            sink,
            declared: count,
            written: 0,
        })
    }

    pub fn push(&mut self, label: Option<u8>, spikes: &SpikeTensor) -> Result<()> {
        if self.written == self.declared {
            return Err(CteError::Data(format!(
                "archive declared {} entries",
                self.declared
            )));
        }
        if label == Some(u8::MAX) {
            return Err(CteError::Data(
                "label 255 is reserved for unlabeled entries".into(),
            ));
        }
        let blob = encode_spike_file(spikes)?;
        write_all(&mut self.sink, &[label.unwrap_or(u8::MAX)])?;
        write_all(&mut self.sink, &(blob.len() as u32).to_le_bytes())?;
        write_all(&mut self.sink, &blob)?;
        self.written += 1;
        Ok(())
    }

    /// Flushes and checks that exactly the declared number of entries was written.
    pub fn finish(mut self) -> Result<W> {
        if self.written != self.declared {
            return Err(CteError::Length {
                expected: self.declared,
                found: self.written,
            });
        }
        self.sink
            .flush()
            .map_err(|e| CteError::io("<archive>", e))?;
        Ok(self.sink)
    }
}

fn write_all<W: Write>(sink: &mut W, bytes: &[u8]) -> Result<()> {
    sink.write_all(bytes)
        .map_err(|e| CteError::io("<archive>", e))
}

/// Lazily decodes CTEA entries from an in-memory archive. After the last
/// entry it reports trailing bytes as a format error.
pub struct ArchiveReader<'a> {
    bytes: &'a [u8],
    at: usize,
    remaining: usize,
    count: usize,
    done: bool,
}

impl<'a> ArchiveReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(CteError::Length {
                expected: 8,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != ARCHIVE_MAGIC {
            return Err(CteError::Format("bad archive magic, expected CTEA".into()));
        }
        let n = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
        Ok(ArchiveReader {
            bytes,
            at: 8,
            remaining: n,
            count: n,
            done: false,
        })
    }

    /// Entry count from the header.
    pub fn entry_count(&self) -> usize {
        self.count
    }

    fn next_entry(&mut self) -> Result<ArchiveEntry> {
        let (bytes, at) = (self.bytes, self.at);
        if bytes.len() < at + 5 {
            return Err(CteError::Length {
                expected: at + 5,
                found: bytes.len(),
            });
        }
        let label = bytes[at];
        let len = u32::from_le_bytes([bytes[at + 1], bytes[at + 2], bytes[at + 3], bytes[at + 4]])
            as usize;
        let start = at + 5;
        let blob = bytes.get(start..start + len).ok_or(CteError::Length {
            expected: start + len,
            found: bytes.len(),
        })?;
        self.at = start + len;
        Ok(ArchiveEntry {
            label: (label != u8::MAX).then_some(label),
            spikes: decode_spike_file(blob)?,
        })
    }
}

impl Iterator for ArchiveReader<'_> {
    type Item = Result<ArchiveEntry>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.remaining == 0 {
            self.done = true;
            return (self.at != self.bytes.len()).then(|| {
                Err(CteError::Format(
                    "trailing bytes after archive entries".into(),
                ))
            });
        }
        self.remaining -= 1;
        let r = self.next_entry();
        if r.is_err() {
            self.done = true;
        }
        Some(r)
    }
}

/// Reads a file, transparently inflating `.gz`.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| CteError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| CteError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn find_idx(root: &Path, stem: &str) -> Result<PathBuf> {
    let dotted = stem.replacen("-idx", ".idx", 1);
    for name in [
        stem.to_string(),
        format!("{stem}.gz"),
        dotted.clone(),
        format!("{dotted}.gz"),
    ] {
        let p = root.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(CteError::io(
        root.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found"),
    ))
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` from `root`.
pub fn load_mnist(root: &Path, split: Split) -> Result<(DatasetManifest, Vec<Frame>, Vec<u8>)> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let frames = read_idx_images(&read_maybe_gz(&find_idx(
        root,
        &format!("{prefix}-images-idx3-ubyte"),
    )?)?)?;
    let labels = read_idx_labels(&read_maybe_gz(&find_idx(
        root,
        &format!("{prefix}-labels-idx1-ubyte"),
    )?)?)?;
    if frames.len() != labels.len() {
        return Err(CteError::Data(format!(
            "{} images but {} labels",
            frames.len(),
            labels.len()
        )));
    }
    if frames.is_empty() {
        return Err(CteError::Data("MNIST split holds no samples".into()));
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        split,
        samples: frames.len(),
        classes: CLASS_COUNT,
    };
    Ok((manifest, frames, labels))
}

/// Lists `root/{Train,Test}/<digit>/*.bin`, sorted by class then file name.
pub fn list_nmnist(root: &Path, split: Split) -> Result<(DatasetManifest, Vec<(PathBuf, u8)>)> {
    let dir = root.join(match split {
        Split::Train => "Train",
        Split::Test => "Test",
    });
    let mut files = Vec::new();
    for digit in 0..CLASS_COUNT as u8 {
        let class_dir = dir.join(digit.to_string());
        let rd = match fs::read_dir(&class_dir) {
            Ok(rd) => rd,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(CteError::io(class_dir, e)),
        };
        let mut names: Vec<PathBuf> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        names.sort();
        files.extend(names.into_iter().map(|p| (p, digit)));
    }
    if files.is_empty() {
        return Err(CteError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no N-MNIST .bin files"),
        ));
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        split,
        samples: files.len(),
        classes: CLASS_COUNT,
    };
    Ok((manifest, files))
}

/// Reads and crops the given N-MNIST files in parallel; order is preserved.
pub fn load_nmnist_files(files: &[(PathBuf, u8)]) -> Result<Vec<(EventStream, u8)>> {
    files
        .par_iter()
        .map(|(p, label)| {
            let bytes = fs::read(p).map_err(|e| CteError::io(p, e))?;
            let stream = read_nmnist_events(&bytes).map_err(|e| annotate(e, p))?;
            Ok((crop_events(&stream)?, *label))
        })
        .collect()
}

fn annotate(e: CteError, p: &Path) -> CteError {
    match e {
        CteError::Format(m) => CteError::Format(format!("{}: {m}", p.display())),
        CteError::Data(m) => CteError::Data(format!("{}: {m}", p.display())),
        other => other,
    }
}
