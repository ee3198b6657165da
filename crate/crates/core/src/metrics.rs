//! Segmentation quality metrics: Dice, IoU and HD95.
//!
//! HD95 pools the directed boundary-to-boundary Euclidean distances in both
//! directions and takes the 95th percentile with inclusive linear
//! interpolation. Distances are in pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
    pub iou: f64,
}

fn check_grid(a: &Mask, b: &Mask) -> Result<()> {
    if !a.same_grid(b) {
        return Err(Error::Shape(format!(
            "mask grids differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

fn overlap_counts(a: &Mask, b: &Mask) -> (u64, u64, u64) {
    let mut inter = 0u64;
    let mut na = 0u64;
    let mut nb = 0u64;
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        na += x as u64;
        nb += y as u64;
        inter += (x && y) as u64;
    }
    (inter, na, nb)
}

/// `2|A∩B| / (|A|+|B|)`, 1.0 when both masks are empty.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    check_grid(a, b)?;
    let (inter, na, nb) = overlap_counts(a, b);
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// `|A∩B| / |A∪B|`, 1.0 when both masks are empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    check_grid(a, b)?;
    let (inter, na, nb) = overlap_counts(a, b);
    let union = na + nb - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Pixels of the set with a 4-neighbour outside it, counting the grid edge
/// as outside.
pub fn boundary(mask: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            let edge = r == 0 || c == 0 || r + 1 == h || c + 1 == w;
            if edge
                || !mask.get(r - 1, c)
                || !mask.get(r + 1, c)
                || !mask.get(r, c - 1)
                || !mask.get(r, c + 1)
            {
                out.push((r, c));
            }
        }
    }
    out
}

/// Exact squared Euclidean distance transform to the given sites
/// (separable lower-envelope algorithm, two 1-D passes).
fn squared_distance_transform(h: usize, w: usize, sites: &[(usize, usize)]) -> Vec<f64> {
    const INF: f64 = 1e20;
    let mut grid = vec![INF; h * w];
    for &(r, c) in sites {
        grid[r * w + c] = 0.0;
    }
    let mut f = vec![0.0; h.max(w)];
    let mut d = vec![0.0; h.max(w)];
    let mut v = vec![0usize; h.max(w)];
    let mut z = vec![0.0; h.max(w) + 1];
    // columns
    for c in 0..w {
        for r in 0..h {
            f[r] = grid[r * w + c];
        }
        dt_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = d[r];
        }
    }
    // rows
    for r in 0..h {
        f[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        dt_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&d[..w]);
    }
    grid
}

fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k];
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
            }
            break;
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *out = (qf - p) * (qf - p) + f[v[k]];
    }
}

/// Inclusive linear-interpolation percentile (`p` in [0, 1]) of sorted data.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 95th-percentile symmetric Hausdorff distance over boundary pixels.
/// `Ok(None)` when either mask is empty.
pub fn hd95(a: &Mask, b: &Mask) -> Result<Option<f64>> {
    check_grid(a, b)?;
    let ba = boundary(a);
    let bb = boundary(b);
    if ba.is_empty() || bb.is_empty() {
        return Ok(None);
    }
    let (h, w) = (a.height(), a.width());
    let to_b = squared_distance_transform(h, w, &bb);
    let to_a = squared_distance_transform(h, w, &ba);
    let mut pooled: Vec<f64> = ba
        .iter()
        .map(|&(r, c)| to_b[r * w + c].sqrt())
        .chain(bb.iter().map(|&(r, c)| to_a[r * w + c].sqrt()))
        .collect();
    pooled.sort_by(f64::total_cmp);
    Ok(Some(percentile_sorted(&pooled, 0.95)))
}

pub fn evaluate(pred: &Mask, truth: &Mask) -> Result<MetricReport> {
    Ok(MetricReport {
        dice: dice(pred, truth)?,
        hd95: hd95(pred, truth)?,
        iou: iou(pred, truth)?,
    })
}

/// Mean, median and population standard deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Summary {
            count: values.len(),
            mean,
            median: percentile_sorted(&sorted, 0.5),
            std: var.sqrt(),
        }
    }
}
