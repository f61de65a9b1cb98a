//! Adaptive binarization with automatic polarity, and the connected-component prior.

use crate::error::{CteError, Result};
use crate::types::{BinaryMask, Component, ComponentLabeling, Frame};

/// Default foreground fraction the polarity selector aims for.
pub const DEFAULT_TARGET_RATIO: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OtsuResult {
    pub threshold: u8,
    /// Set when the frame holds a single intensity; `threshold` is then that value.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    /// Foreground is `I < T`.
    Dark,
    /// Foreground is `I > T`.
    Light,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarityChoice {
    pub polarity: Polarity,
    /// Mean of the selected mask.
    pub chosen_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binarization {
    pub mask: BinaryMask,
    pub choice: PolarityChoice,
    pub threshold: u8,
    /// Both candidate masks were empty; the returned mask is empty.
    pub degenerate: bool,
}

/// Otsu threshold over the 256-bin histogram.
///
/// Classes are `{I < t}` and `{I >= t}`. The between-class variance
/// `w0 w1 (mu0 - mu1)^2` equals `(s0 n1 - s1 n0)^2 / (N^2 n0 n1)`, so candidates
/// are compared exactly as rationals `(s0 n1 - s1 n0)^2 / (n0 n1)`. Ties go to the
/// smallest `t`.
pub fn otsu_threshold(frame: &Frame) -> Result<OtsuResult> {
    if frame.is_empty() {
        return Err(CteError::Dimension(
            "otsu threshold of an empty frame".into(),
        ));
    }
    let mut hist = [0u64; 256];
    for &v in frame.data() {
        hist[v as usize] += 1;
    }
    let n = frame.data().len() as u64;
    let total: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();

    let mut best: Option<(u8, u128, u128)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for t in 0..=255usize {
        // class 0 is everything strictly below t
        if t > 0 {
            n0 += hist[t - 1];
            s0 += (t as u64 - 1) * hist[t - 1];
        }
        let n1 = n - n0;
        let s1 = total - s0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (s0 as i128 * n1 as i128 - s1 as i128 * n0 as i128).unsigned_abs();
        let num = diff * diff;
        let den = n0 as u128 * n1 as u128;
        let better = match best {
            None => num > 0,
            Some((_, bn, bd)) => ratio_greater(num, den, bn, bd),
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }

    Ok(match best {
        Some((t, _, _)) => OtsuResult {
            threshold: t,
            degenerate: false,
        },
        None => OtsuResult {
            threshold: frame.data()[0],
            degenerate: true,
        },
    })
}

/// `a/b > c/d` for positive denominators, exact unless the products overflow.
fn ratio_greater(a: u128, b: u128, c: u128, d: u128) -> bool {
    match (a.checked_mul(d), c.checked_mul(b)) {
        (Some(l), Some(r)) => l > r,
        _ => (a as f64 / b as f64) > (c as f64 / d as f64),
    }
}

/// Otsu threshold, then the strict-inequality dark/light masks; keeps the one
/// whose foreground ratio is closer to `target_ratio` (Light on a tie).
pub fn binarize_with_polarity(frame: &Frame, target_ratio: f64) -> Result<Binarization> {
    let otsu = otsu_threshold(frame)?;
    let t = otsu.threshold;
    let (h, w) = (frame.height(), frame.width());
    let dark = BinaryMask::from_fn(h, w, |y, x| frame.get(y, x) < t);
    let light = BinaryMask::from_fn(h, w, |y, x| frame.get(y, x) > t);

    // both candidates are empty exactly when the frame is constant
    let (mask, choice) = select_polarity(dark, light, target_ratio);
    Ok(Binarization {
        mask,
        choice,
        threshold: t,
        degenerate: otsu.degenerate,
    })
}

/// Picks between the dark and light candidate masks by distance of their
/// foreground ratio to `target_ratio`; an exact tie selects Light. When both
/// masks are empty the (empty) light mask is returned.
pub fn select_polarity(
    dark: BinaryMask,
    light: BinaryMask,
    target_ratio: f64,
) -> (BinaryMask, PolarityChoice) {
    if dark.count_ones() == 0 && light.count_ones() == 0 {
        return (
            light,
            PolarityChoice {
                polarity: Polarity::Light,
                chosen_ratio: 0.0,
            },
        );
    }
    let (rd, rl) = (dark.mean(), light.mean());
    // distances within rounding noise of each other count as a tie
    if (rd - target_ratio).abs() + 1e-12 < (rl - target_ratio).abs() {
        (
            dark,
            PolarityChoice {
                polarity: Polarity::Dark,
                chosen_ratio: rd,
            },
        )
    } else {
        (
            light,
            PolarityChoice {
                polarity: Polarity::Light,
                chosen_ratio: rl,
            },
        )
    }
}

/// 8-connected component labeling (two-pass union-find).
///
/// Ids start at 1 and follow the raster order of each component's first pixel.
pub fn label_components(mask: &BinaryMask) -> ComponentLabeling {
    let (h, w) = (mask.height(), mask.width());
    let mut provisional = vec![0u32; h * w];
    // parent[0] is unused so provisional ids index directly
    let mut parent: Vec<u32> = vec![0];

    fn find(parent: &mut [u32], mut a: u32) -> u32 {
        while parent[a as usize] != a {
            let next = parent[a as usize];
            parent[a as usize] = parent[next as usize];
            a = next;
        }
        a
    }

    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            // already-visited neighbours: W, NW, N, NE
            let mut neigh = [0u32; 4];
            let mut k = 0;
            if x > 0 {
                neigh[k] = provisional[y * w + x - 1];
                k += 1;
            }
            if y > 0 {
                if x > 0 {
                    neigh[k] = provisional[(y - 1) * w + x - 1];
                    k += 1;
                }
                neigh[k] = provisional[(y - 1) * w + x];
                k += 1;
                if x + 1 < w {
                    neigh[k] = provisional[(y - 1) * w + x + 1];
                    k += 1;
                }
            }
            let mut root = 0u32;
            for &n in neigh[..k].iter().filter(|&&n| n != 0) {
                let r = find(&mut parent, n);
                if root == 0 {
                    root = r;
                } else if r != root {
                    let (lo, hi) = (root.min(r), root.max(r));
                    parent[hi as usize] = lo;
                    root = lo;
                }
            }
            if root == 0 {
                root = parent.len() as u32;
                parent.push(root);
            }
            provisional[y * w + x] = root;
        }
    }

    let mut remap = vec![0u32; parent.len()];
    let mut labels = vec![0u32; h * w];
    let mut components: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let r = find(&mut parent, p) as usize;
            if remap[r] == 0 {
                components.push(Component {
                    id: components.len() as u32 + 1,
                    area: 0,
                    touches_border: false,
                });
                remap[r] = components.len() as u32;
            }
            let id = remap[r];
            labels[y * w + x] = id;
            let c = &mut components[id as usize - 1];
            c.area += 1;
            if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
                c.touches_border = true;
            }
        }
    }

    ComponentLabeling {
        height: h,
        width: w,
        labels,
        components,
    }
}

/// Union of the `k` largest components (ties: smaller id first), after
/// optionally discarding every component that touches the image border.
pub fn filter_components(
    labeling: &ComponentLabeling,
    k: usize,
    remove_border: bool,
) -> Result<BinaryMask> {
    if k == 0 {
        return Err(CteError::Config(
            "component count K must be at least 1".into(),
        ));
    }
    let mut candidates: Vec<&Component> = labeling
        .components
        .iter()
        .filter(|c| !(remove_border && c.touches_border))
        .collect();
    candidates.sort_by(|a, b| b.area.cmp(&a.area).then(a.id.cmp(&b.id)));
    let mut keep = vec![false; labeling.components.len() + 1];
    for c in candidates.into_iter().take(k) {
        keep[c.id as usize] = true;
    }
    let data = labeling
        .labels
        .iter()
        .map(|&l| keep[l as usize] as u8)
        .collect();
    BinaryMask::new(labeling.height, labeling.width, data)
}

/// Labels `mask` and keeps its `k` largest components.
pub fn component_prior(mask: &BinaryMask, k: usize, remove_border: bool) -> Result<BinaryMask> {
    filter_components(&label_components(mask), k, remove_border)
}
