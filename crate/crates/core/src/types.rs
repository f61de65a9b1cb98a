//! Grid and tensor types shared by every stage of the pipeline.
//!
//! 3D and 4D tensors are stored row-major with `(c, t, y, x)` index order, so a
//! single time bin of a single channel is one contiguous `height * width` slice.

use std::ops::{Deref, DerefMut};

use crate::error::{CteError, Result};

/// Grayscale image with 8-bit intensities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_len(height * width, data.len(), "frame")?;
        Ok(Frame {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Row-major {0,1} grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_len(height * width, data.len(), "mask")?;
        check_binary(&data, "mask")?;
        Ok(BinaryMask {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub(crate) fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        BinaryMask {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Fraction of set cells; 0 for an empty grid.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.data.len() as f64
        }
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// One connected foreground region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub id: u32,
    pub area: usize,
    pub touches_border: bool,
}

/// Label grid (0 = background) plus per-component statistics, ordered by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Microseconds.
    pub t: u64,
    /// 1 = ON, 0 = OFF.
    pub p: u8,
}

/// Time-ordered events from a sensor of known size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    sensor_width: usize,
    sensor_height: usize,
}

impl EventStream {
    /// Validates bounds and polarity, then sorts by timestamp (stable, so equal
    /// timestamps keep their input order).
    pub fn new(mut events: Vec<Event>, sensor_width: usize, sensor_height: usize) -> Result<Self> {
        for e in &events {
            if e.x as usize >= sensor_width || e.y as usize >= sensor_height {
                return Err(CteError::Data(format!(
                    "event at ({}, {}) outside {}x{} sensor",
                    e.x, e.y, sensor_width, sensor_height
                )));
            }
            if e.p > 1 {
                return Err(CteError::Data(format!("polarity {} not in {{0,1}}", e.p)));
            }
        }
        events.sort_by_key(|e| e.t);
        Ok(EventStream {
            events,
            sensor_width,
            sensor_height,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn sensor_width(&self) -> usize {
        self.sensor_width
    }

    pub fn sensor_height(&self) -> usize {
        self.sensor_height
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Span between first and last timestamp, 0 when empty.
    pub fn duration(&self) -> u64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub channels: usize,
    pub steps: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape4 {
    pub fn new(channels: usize, steps: usize, height: usize, width: usize) -> Self {
        Shape4 {
            channels,
            steps,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.steps * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize, y: usize, x: usize) -> usize {
        ((c * self.steps + t) * self.height + y) * self.width + x
    }
}

/// Binary `channels x steps x height x width` tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTensor {
    shape: Shape4,
    data: Vec<u8>,
}

impl BinaryTensor {
    pub fn new(shape: Shape4, data: Vec<u8>) -> Result<Self> {
        check_len(shape.len(), data.len(), "tensor")?;
        check_binary(&data, "tensor")?;
        Ok(BinaryTensor { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Self {
        BinaryTensor {
            shape,
            data: vec![0; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, c: usize, t: usize, y: usize, x: usize) -> bool {
        self.data[self.shape.index(c, t, y, x)] != 0
    }

    pub fn set(&mut self, c: usize, t: usize, y: usize, x: usize, on: bool) {
        let i = self.shape.index(c, t, y, x);
        self.data[i] = on as u8;
    }

    /// Contiguous `height * width` slice for one channel and time bin.
    pub fn frame(&self, c: usize, t: usize) -> &[u8] {
        let start = self.shape.index(c, t, 0, 0);
        &self.data[start..start + self.shape.frame_len()]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Set cells as `(c, t, y, x)` in lexicographic order.
    pub fn active_cells(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let s = self.shape;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, _)| {
                let x = i % s.width;
                let y = (i / s.width) % s.height;
                let t = (i / s.frame_len()) % s.steps;
                let c = i / (s.frame_len() * s.steps);
                (c, t, y, x)
            })
    }
}

/// Voxelized events: `V` before gating.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelTensor(pub BinaryTensor);

/// Encoded spikes: the pipeline output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTensor(pub BinaryTensor);

macro_rules! tensor_newtype {
    ($name:ident) => {
        impl $name {
            pub fn new(shape: Shape4, data: Vec<u8>) -> Result<Self> {
                BinaryTensor::new(shape, data).map($name)
            }

            pub fn zeros(shape: Shape4) -> Self {
                $name(BinaryTensor::zeros(shape))
            }

            pub fn into_inner(self) -> BinaryTensor {
                self.0
            }
        }

        impl Deref for $name {
            type Target = BinaryTensor;
            fn deref(&self) -> &BinaryTensor {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut BinaryTensor {
                &mut self.0
            }
        }
    };
}

tensor_newtype!(VoxelTensor);
tensor_newtype!(SpikeTensor);

impl From<VoxelTensor> for SpikeTensor {
    fn from(v: VoxelTensor) -> Self {
        SpikeTensor(v.0)
    }
}

/// Bit-packed spike tensor, one bit per cell in the same order as
/// [`BinaryTensor`]. Eight times smaller than the dense form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSpikes {
    shape: Shape4,
    words: Vec<u64>,
    ones: usize,
}

impl PackedSpikes {
    pub fn pack(tensor: &BinaryTensor) -> Self {
        let mut words = vec![0u64; tensor.shape.len().div_ceil(64)];
        let mut ones = 0;
        for (i, &v) in tensor.data.iter().enumerate() {
            if v != 0 {
                words[i / 64] |= 1 << (i % 64);
                ones += 1;
            }
        }
        PackedSpikes {
            shape: tensor.shape,
            words,
            ones,
        }
    }

    pub fn unpack(&self) -> SpikeTensor {
        let mut data = vec![0u8; self.shape.len()];
        for (i, d) in data.iter_mut().enumerate() {
            *d = ((self.words[i / 64] >> (i % 64)) & 1) as u8;
        }
        SpikeTensor(BinaryTensor {
            shape: self.shape,
            data,
        })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn count_ones(&self) -> usize {
        self.ones
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }
}

/// Box-filter density stored as exact integer window counts over a fixed
/// window volume, so every value is `count / volume` and lies in [0,1].
///
/// 2D maps have `steps == 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DensityMap {
    steps: usize,
    height: usize,
    width: usize,
    volume: u32,
    counts: Vec<u32>,
}

impl DensityMap {
    pub fn new(
        steps: usize,
        height: usize,
        width: usize,
        volume: u32,
        counts: Vec<u32>,
    ) -> Result<Self> {
        check_len(steps * height * width, counts.len(), "density map")?;
        if volume == 0 {
            return Err(CteError::Dimension("density window volume is zero".into()));
        }
        if let Some(&c) = counts.iter().find(|&&c| c > volume) {
            return Err(CteError::Data(format!(
                "window count {c} exceeds window volume {volume}"
            )));
        }
        Ok(DensityMap {
            steps,
            height,
            width,
            volume,
            counts,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn volume(&self) -> u32 {
        self.volume
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count_at(&self, t: usize, y: usize, x: usize) -> u32 {
        self.counts[(t * self.height + y) * self.width + x]
    }

    pub fn value(&self, t: usize, y: usize, x: usize) -> f64 {
        self.count_at(t, y, x) as f64 / self.volume as f64
    }

    /// 2D accessor.
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.value(0, y, x)
    }

    pub fn values(&self) -> Vec<f64> {
        let v = self.volume as f64;
        self.counts.iter().map(|&c| c as f64 / v).collect()
    }
}

/// Smallest window count `k` with `k / volume >= tau` in double precision.
///
/// Threshold tests compare integer counts against this value, so e.g.
/// `tau = 0.25` over 16 cells needs 4 and `tau = 0.10` over 2023 cells needs 203.
pub fn min_count_for(tau: f64, volume: u32) -> u32 {
    if tau <= 0.0 {
        return 0;
    }
    let v = volume as f64;
    let mut k = (tau * v).ceil().clamp(0.0, v + 1.0) as u32;
    while k > 0 && (k - 1) as f64 / v >= tau {
        k -= 1;
    }
    while k <= volume && (k as f64) / v < tau {
        k += 1;
    }
    k
}

/// Offsets covered by a square box window along each axis: `-back ..= forward`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxWindow {
    pub back: usize,
    pub forward: usize,
}

impl BoxWindow {
    /// 4x4 window anchored at the pixel and extending to `+3`.
    pub const ANCHORED_4: BoxWindow = BoxWindow {
        back: 0,
        forward: 3,
    };
    /// 4x4 window covering `-1 ..= +2`.
    pub const CENTERED_4: BoxWindow = BoxWindow {
        back: 1,
        forward: 2,
    };

    pub fn size(&self) -> usize {
        self.back + self.forward + 1
    }

    pub fn area(&self) -> u32 {
        (self.size() * self.size()) as u32
    }
}

/// Windowed sum of a binary mask with zero padding, via a summed-area table.
///
/// `out(y, x) = sum of mask(y + i, x + j)` for `i, j` in `-back ..= forward`.
pub fn box_sum_2d(mask: &BinaryMask, window: BoxWindow) -> Vec<u32> {
    let (h, w) = (mask.height(), mask.width());
    let stride = w + 1;
    let mut sat = vec![0u32; (h + 1) * stride];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += mask.data()[y * w + x] as u32;
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    let mut out = vec![0u32; h * w];
    for y in 0..h {
        let y0 = y.saturating_sub(window.back);
        let y1 = (y + window.forward + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(window.back);
            let x1 = (x + window.forward + 1).min(w);
            out[y * w + x] = sat[y1 * stride + x1] + sat[y0 * stride + x0]
                - sat[y0 * stride + x1]
                - sat[y1 * stride + x0];
        }
    }
    out
}

pub fn elementwise_and(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    if !a.same_shape(b) {
        return Err(CteError::Dimension(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| p & q)
        .collect();
    Ok(BinaryMask {
        height: a.height(),
        width: a.width(),
        data,
    })
}

fn check_len(expected: usize, found: usize, what: &str) -> Result<()> {
    if expected != found {
        return Err(CteError::Dimension(format!(
            "{what} data has {found} values, shape needs {expected}"
        )));
    }
    Ok(())
}

fn check_binary(data: &[u8], what: &str) -> Result<()> {
    if let Some(v) = data.iter().find(|&&v| v > 1) {
        return Err(CteError::Data(format!("{what} value {v} is not binary")));
    }
    Ok(())
}
