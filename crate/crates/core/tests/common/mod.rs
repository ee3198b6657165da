// Shared reference implementations for the integration tests. Each helper
// recomputes a quantity from first principles so it can be checked against
// the library.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use prefseg_core::clicking_agent::{log_prob, log_prob_grad, AgentState, ClickAction, PolicyParams};
use prefseg_core::feature_provider::{generate_world, triplet_loss_and_grad, SyntheticWorldConfig, Triplet};
use prefseg_core::orchestrator::RunConfig;
use prefseg_core::propagation::{ConflictRule, Label, LabeledClick};
use prefseg_core::seg_model::bce_loss_and_grad;
use prefseg_core::types::{load_manifest, DatasetManifest, FeatureMap, Mask, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_EPS: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn bench_world_config() -> SyntheticWorldConfig {
    let path = workspace_root().join("configs/bench-easy.world.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn bench_run_config() -> RunConfig {
    RunConfig::load(&workspace_root().join("configs/bench-easy.run.json")).unwrap()
}

/// Generates the shipped benchmark world into `dir` and loads it.
pub fn bench_world(dir: &Path) -> DatasetManifest {
    generate_world(&bench_world_config(), 50, dir).unwrap();
    load_manifest(&dir.join("manifest.json")).unwrap()
}

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize, density: f64) -> Mask {
    Mask::from_fn(h, w, |_, _| rng.random_bool(density))
}

/// Union of a few random rectangles, so boundaries are non-trivial.
pub fn random_blocky_mask(rng: &mut impl Rng, h: usize, w: usize) -> Mask {
    let rects: Vec<(usize, usize, usize, usize)> = (0..rng.random_range(0..4))
        .map(|_| {
            let r0 = rng.random_range(0..h);
            let c0 = rng.random_range(0..w);
            (r0, c0, rng.random_range(r0..h) + 1, rng.random_range(c0..w) + 1)
        })
        .collect();
    let speckle = rng.random_bool(0.5);
    let noise: Vec<bool> = (0..h * w).map(|_| speckle && rng.random_bool(0.05)).collect();
    Mask::from_fn(h, w, |r, c| {
        noise[r * w + c] || rects.iter().any(|&(r0, c0, r1, c1)| r >= r0 && r < r1 && c >= c0 && c < c1)
    })
}

// ---------- oracle ----------

/// A random `(m_new, m_current, gt)` triple. Every third candidate is an exact
/// copy and every third a two-pixel edit, so ties and small moves occur.
pub fn oracle_triple(r: &mut impl Rng, i: usize) -> (Mask, Mask, Mask) {
    let (h, w) = (r.random_range(1..=12), r.random_range(1..=12));
    let [d1, d2, d3]: [f64; 3] = r.random();
    let gt = random_mask(r, h, w, d1);
    let current = random_mask(r, h, w, d2);
    let m_new = match i % 3 {
        0 => random_mask(r, h, w, d3),
        1 => current.clone(),
        _ => Mask::from_fn(h, w, |a, b| current.get(a, b) ^ (a == 0 && b < 2)),
    };
    (m_new, current, gt)
}

/// Dice as the exact fraction `(2|A∩B|, |A|+|B|)`, by counting.
fn counted_dice(a: &Mask, b: &Mask) -> (u64, u64) {
    let (mut inter, mut total) = (0, 0);
    for r in 0..a.height() {
        for c in 0..a.width() {
            inter += (a.get(r, c) && b.get(r, c)) as u64;
            total += a.get(r, c) as u64 + b.get(r, c) as u64;
        }
    }
    (2 * inter, total)
}

/// Whether Dice against `gt` strictly rises from `current` to `m_new`, in
/// integer arithmetic with the empty-pair convention 0/0 = 1.
pub fn dice_strictly_rises(m_new: &Mask, current: &Mask, gt: &Mask) -> bool {
    let frac = |m: &Mask| match counted_dice(m, gt) {
        (_, 0) => (1u128, 1u128),
        (n, d) => (n as u128, d as u128),
    };
    let ((x, y), (u, v)) = (frac(m_new), frac(current));
    x * v > u * y
}

// ---------- metrics ----------

pub fn boundary_pixels(m: &Mask) -> Vec<(i64, i64)> {
    let (h, w) = (m.height() as i64, m.width() as i64);
    let inside = |r: i64, c: i64| r >= 0 && c >= 0 && r < h && c < w && m.get(r as usize, c as usize);
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if inside(r, c) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dr, dc)| !inside(r + dr, c + dc)) {
                out.push((r, c));
            }
        }
    }
    out
}

/// All-pairs boundary distances, pooled both ways, inclusive-interpolated
/// 95th percentile.
pub fn brute_hd95(a: &Mask, b: &Mask) -> Option<f64> {
    let (ba, bb) = (boundary_pixels(a), boundary_pixels(b));
    if ba.is_empty() || bb.is_empty() {
        return None;
    }
    let directed = |from: &[(i64, i64)], to: &[(i64, i64)]| -> Vec<f64> {
        from.iter()
            .map(|&(r, c)| {
                to.iter()
                    .map(|&(s, d)| (((r - s) * (r - s) + (c - d) * (c - d)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let mut all = directed(&ba, &bb);
    all.extend(directed(&bb, &ba));
    all.sort_by(f64::total_cmp);
    let rank = 0.95 * (all.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(all[lo] + (rank - lo as f64) * (all[hi] - all[lo]))
}

/// Hand-built pairs with their counted `(|A∩B|, |A|, |B|)`.
pub fn counted_pairs() -> Vec<(Mask, Mask, u64, u64, u64)> {
    let rect = |h, w, r0, r1, c0, c1| Mask::from_fn(h, w, move |r, c| r >= r0 && r < r1 && c >= c0 && c < c1);
    vec![
        // identical 4x4 squares
        (rect(8, 8, 2, 6, 2, 6), rect(8, 8, 2, 6, 2, 6), 16, 16, 16),
        // disjoint halves
        (rect(4, 4, 0, 4, 0, 2), rect(4, 4, 0, 4, 2, 4), 0, 8, 8),
        // 4x4 vs its top 4x2
        (rect(8, 8, 0, 4, 0, 4), rect(8, 8, 0, 2, 0, 4), 8, 16, 8),
        // squares offset by one row and one column: overlap 3x3
        (rect(10, 10, 0, 4, 0, 4), rect(10, 10, 1, 5, 1, 5), 9, 16, 16),
        // single pixel in a full grid
        (Mask::filled(5, 5, true), rect(5, 5, 2, 3, 2, 3), 1, 25, 1),
        // one empty
        (Mask::empty(6, 6), rect(6, 6, 0, 3, 0, 3), 0, 0, 9),
        // both empty
        (Mask::empty(3, 7), Mask::empty(3, 7), 0, 0, 0),
        // full vs full, non-square
        (Mask::filled(3, 7, true), Mask::filled(3, 7, true), 21, 21, 21),
        // diagonal vs anti-diagonal on 5x5, crossing at the centre
        (
            Mask::from_fn(5, 5, |r, c| r == c),
            Mask::from_fn(5, 5, |r, c| r + c == 4),
            1,
            5,
            5,
        ),
        // 3x8 stripe vs 8x3 stripe on 8x8: overlap 3x3
        (rect(8, 8, 0, 3, 0, 8), rect(8, 8, 0, 8, 0, 3), 9, 24, 24),
    ]
}

// ---------- propagation ----------

pub fn random_features(rng: &mut impl Rng, gh: usize, gw: usize, dim: usize, clusters: usize, noise: f64) -> FeatureMap<f32> {
    let centres: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let mut data = Vec::with_capacity(gh * gw * dim);
    for _ in 0..gh * gw {
        let k = rng.random_range(0..clusters);
        let v: Vec<f64> = centres[k]
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + noise * z
            })
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(v.iter().map(|x| (x / n) as f32));
    }
    FeatureMap::normalized(Tensor::new(vec![gh, gw, dim], data).unwrap()).unwrap()
}

pub fn random_clicks(rng: &mut impl Rng, h: usize, w: usize, n: usize) -> Vec<LabeledClick> {
    (0..n)
        .map(|i| LabeledClick {
            row: rng.random_range(0..h),
            col: rng.random_range(0..w),
            label: if rng.random_bool(0.5) { Label::Foreground } else { Label::Background },
            sequence: i,
        })
        .collect()
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Per-patch reference: collect every click claiming the patch, then pick
/// the winner by the rule. The clicked patch always claims itself.
pub fn reference_propagate(
    clicks: &[LabeledClick],
    fm: &FeatureMap<f32>,
    base: &Mask,
    tau: f64,
    rule: ConflictRule,
    ps: usize,
) -> Mask {
    let label_of = |r: usize, c: usize| -> Option<bool> {
        let me = fm.at(r / ps, c / ps);
        let claims: Vec<(f64, usize, Label)> = clicks
            .iter()
            .filter_map(|k| {
                let (kr, kc) = (k.row / ps, k.col / ps);
                let s = if (kr, kc) == (r / ps, c / ps) { 1.0 } else { cosine(fm.at(kr, kc), me) };
                (s >= tau).then_some((s, k.sequence, k.label))
            })
            .collect();
        let winner = match rule {
            ConflictRule::LatestWins => claims.iter().max_by_key(|c| c.1).copied(),
            ConflictRule::MaxSimilarityWins => {
                let best = claims.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
                let top: Vec<_> = claims.iter().filter(|c| c.0 == best).collect();
                // tie goes to background
                top.iter()
                    .find(|c| c.2 == Label::Background)
                    .or(top.first())
                    .map(|c| **c)
            }
        };
        winner.map(|w| w.2 == Label::Foreground)
    };
    Mask::from_fn(base.height(), base.width(), |r, c| label_of(r, c).unwrap_or(base.get(r, c)))
}

// ---------- gradient checks ----------

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-12)` over the whole gradient vector.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

fn central_diff(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let keep = x[i];
            x[i] = keep + FD_EPS;
            let up = f(x);
            x[i] = keep - FD_EPS;
            let down = f(x);
            x[i] = keep;
            (up - down) / (2.0 * FD_EPS)
        })
        .collect()
}

pub struct PolicyGradCheck {
    /// Relative error per parameter block at `FD_EPS`, kink coordinates excluded.
    pub block_errors: Vec<f64>,
    /// Coordinates whose difference quotient straddles a ReLU kink.
    pub excluded: usize,
    pub total: usize,
    /// Relative error over the excluded coordinates, re-measured at a step
    /// small enough to stay off the kink.
    pub kink_error: f64,
}

impl PolicyGradCheck {
    pub fn worst(&self) -> f64 {
        self.block_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// `∇θ log π(a|s)` against central differences on a 1-channel 8×8 state.
///
/// A ReLU pre-activation within `FD_EPS` of zero makes the difference
/// quotient meaningless for that coordinate. Such coordinates show up as a
/// disagreement between the `FD_EPS` and `FD_EPS / 2` quotients (for smooth
/// directions they agree to O(ε²)), and are left out of the coarse
/// comparison. The fine comparison at 1e-6 covers every coordinate.
pub fn reinforce_grad_check(seed: u64) -> PolicyGradCheck {
    let mut r = rng(seed);
    let mut params = PolicyParams::<f64>::random(1, seed);
    params.temperature = r.random_range(0.5..2.0);
    let (gh, gw, ps) = (8, 8, 2);
    let image = Tensor::new(
        vec![1, gh * ps, gw * ps],
        (0..gh * gw * ps * ps).map(|_| r.random::<f32>()).collect(),
    )
    .unwrap();
    let mask = random_mask(&mut r, gh * ps, gw * ps, 0.5);
    let state = AgentState::<f64>::build(&image, &mask, ps).unwrap();
    let action = ClickAction {
        row: r.random_range(0..gh),
        col: r.random_range(0..gw),
        label: if r.random_bool(0.5) { Label::Foreground } else { Label::Background },
        log_prob: 0.0,
    };
    let analytic = log_prob_grad(&params, &state, &action).unwrap();
    let mut probe = params.clone();
    let mut quotient = |b: usize, i: usize, eps: f64| -> f64 {
        let keep = probe.blocks()[b].data()[i];
        probe.blocks_mut()[b].data_mut()[i] = keep + eps;
        let up = log_prob(&probe, &state, &action).unwrap();
        probe.blocks_mut()[b].data_mut()[i] = keep - eps;
        let down = log_prob(&probe, &state, &action).unwrap();
        probe.blocks_mut()[b].data_mut()[i] = keep;
        (up - down) / (2.0 * eps)
    };
    let (mut block_errors, mut excluded, mut total) = (Vec::new(), 0, 0);
    let (mut kink_a, mut kink_n) = (Vec::new(), Vec::new());
    for (b, grad) in analytic.iter().enumerate() {
        let (mut a_kept, mut n_kept) = (Vec::new(), Vec::new());
        for (i, &g) in grad.iter().enumerate() {
            total += 1;
            let coarse = quotient(b, i, FD_EPS);
            let half = quotient(b, i, FD_EPS / 2.0);
            if (coarse - half).abs() > 1e-5 {
                excluded += 1;
                kink_a.push(g);
                kink_n.push(quotient(b, i, 1e-6));
                continue;
            }
            a_kept.push(g);
            n_kept.push(coarse);
        }
        block_errors.push(relative_error(&a_kept, &n_kept));
    }
    PolicyGradCheck {
        block_errors,
        excluded,
        total,
        kink_error: relative_error(&kink_a, &kink_n),
    }
}

fn unit_gauss(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(r)).collect()
}

fn hinge_arg(w: &[f64], dim: usize, margin: f64, (a, p, n): (&[f64], &[f64], &[f64])) -> f64 {
    let proj = |x: &[f64]| -> Vec<f64> { (0..dim).map(|i| (0..dim).map(|j| w[i * dim + j] * x[j]).sum()).collect() };
    let cos = |u: &[f64], v: &[f64]| {
        let d: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        d / (u.iter().map(|a| a * a).sum::<f64>().sqrt() * v.iter().map(|a| a * a).sum::<f64>().sqrt())
    };
    let (ua, up, un) = (proj(a), proj(p), proj(n));
    margin - cos(&ua, &up) + cos(&ua, &un)
}

/// Triplet-loss weight gradient against central differences. Triplets whose
/// hinge sits within 0.05 of its kink are redrawn so the difference quotient
/// never straddles it.
pub fn triplet_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dim = r.random_range(2..7usize);
    let margin = 0.5;
    let w: Vec<f64> = (0..dim * dim)
        .map(|k| {
            let z: f64 = StandardNormal.sample(&mut r);
            if k % (dim + 1) == 0 { 1.0 + 0.3 * z } else { 0.3 * z }
        })
        .collect();
    let mut raw: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    while raw.len() < 8 {
        let t = (unit_gauss(&mut r, dim), unit_gauss(&mut r, dim), unit_gauss(&mut r, dim));
        if hinge_arg(&w, dim, margin, (&t.0, &t.1, &t.2)).abs() > 0.05 {
            raw.push(t);
        }
    }
    let triplets: Vec<Triplet<'_, f64>> = raw.iter().map(|(a, p, n)| (&a[..], &p[..], &n[..])).collect();
    let weight = Tensor::new(vec![dim, dim], w.clone()).unwrap();
    let (_, analytic) = triplet_loss_and_grad(&weight, margin, &triplets);
    let mut flat = w;
    let numeric = central_diff(&mut flat, |x| {
        let t = Tensor::new(vec![dim, dim], x.to_vec()).unwrap();
        triplet_loss_and_grad(&t, margin, &triplets).0
    });
    relative_error(&analytic, &numeric)
}

/// BCE gradient (weights then bias) against central differences.
pub fn bce_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dim = r.random_range(1..9usize);
    let xs: Vec<Vec<f64>> = (0..r.random_range(1..40)).map(|_| unit_gauss(&mut r, dim)).collect();
    let samples: Vec<(&[f64], f64)> = xs
        .iter()
        .map(|x| (&x[..], if r.random_bool(0.5) { 1.0 } else { 0.0 }))
        .collect();
    let mut theta: Vec<f64> = unit_gauss(&mut r, dim + 1).iter().map(|v| 2.0 * v).collect();
    let (_, gw, gb) = bce_loss_and_grad(&theta[..dim], theta[dim], &samples);
    let mut analytic = gw;
    analytic.push(gb);
    let numeric = central_diff(&mut theta, |t| bce_loss_and_grad(&t[..dim], t[dim], &samples).0);
    relative_error(&analytic, &numeric)
}

pub fn four_connected_components(m: &Mask) -> usize {
    let (h, w) = (m.height(), m.width());
    let mut seen = vec![false; h * w];
    let mut count = 0;
    for start in 0..h * w {
        if seen[start] || !m.bits()[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            let mut push = |rr: usize, cc: usize| {
                let j = rr * w + cc;
                if m.get(rr, cc) && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                push(r - 1, c);
            }
            if r + 1 < h {
                push(r + 1, c);
            }
            if c > 0 {
                push(r, c - 1);
            }
            if c + 1 < w {
                push(r, c + 1);
            }
        }
    }
    count
}
