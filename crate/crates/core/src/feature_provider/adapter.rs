//! Trainable linear adapter over frozen patch features, fitted with a
//! cosine triplet loss on pseudo-labelled patches.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{FeatureMap, ImageRecord, Mask, Tensor};

pub const DEFAULT_ADAPTER_LR: f64 = 1e-2;
pub const DEFAULT_MARGIN: f64 = 0.2;
pub const TRIPLETS_PER_STEP: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams<F = f32> {
    /// Row-major `dim × dim`; adapted vector is `normalize(weight · v)`.
    pub weight: Tensor<F>,
    pub learning_rate: F,
    pub margin: F,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl<F: Scalar> AdapterParams<F> {
    pub fn identity(dim: usize) -> Self {
        Self::identity_with(dim, F::lit(DEFAULT_ADAPTER_LR), F::lit(DEFAULT_MARGIN))
    }

    pub fn identity_with(dim: usize, learning_rate: F, margin: F) -> Self {
        let mut weight = Tensor::zeros(vec![dim, dim]);
        for i in 0..dim {
            weight.data_mut()[i * dim + i] = F::one();
        }
        Self {
            weight,
            learning_rate,
            margin,
            step: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.dims()[0]
    }

    fn apply(&self, v: &[F], out: &mut [F]) {
        let dim = self.dim();
        let w = self.weight.data();
        for (i, o) in out.iter_mut().enumerate() {
            *o = w[i * dim..(i + 1) * dim]
                .iter()
                .zip(v)
                .map(|(&a, &b)| a * b)
                .sum();
        }
    }
}

/// Applies the adapter to every patch of a raw feature map and renormalizes.
pub fn adapt_map<F: Scalar>(raw: &FeatureMap<F>, adapter: &AdapterParams<F>) -> Result<FeatureMap<F>> {
    let dim = raw.dim();
    if adapter.weight.dims() != [dim, dim] {
        return Err(Error::Shape(format!(
            "adapter is {:?}, features have dim {dim}",
            adapter.weight.dims()
        )));
    }
    let mut data = vec![F::zero(); raw.num_patches() * dim];
    for (i, out) in data.chunks_exact_mut(dim).enumerate() {
        adapter.apply(raw.vector(i), out);
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("adapted features (adapter diverged)".into()));
    }
    let t = Tensor::new(vec![raw.grid_h(), raw.grid_w(), dim], data)?;
    FeatureMap::normalized(t)
}

/// Reads the record's feature file and adapts it.
pub fn get_features(record: &ImageRecord, adapter: &AdapterParams<f32>) -> Result<FeatureMap<f32>> {
    let raw = FeatureMap::load(&record.feature_ref).map_err(|e| Error::InvalidRecord {
        id: record.id.clone(),
        reason: e.to_string(),
    })?;
    adapt_map(&raw, adapter)
}

/// Raw-feature triplet: anchor and positive share a class, negative does not.
pub type Triplet<'a, F> = (&'a [F], &'a [F], &'a [F]);

fn cosine_with_grad<F: Scalar>(u: &[F], v: &[F], du: &mut [F], dv: &mut [F], scale: F) -> F {
    let nu = u.iter().map(|&x| x * x).sum::<F>().sqrt();
    let nv = v.iter().map(|&x| x * x).sum::<F>().sqrt();
    let dot: F = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
    let cos = dot / (nu * nv);
    for i in 0..u.len() {
        du[i] += scale * (v[i] / (nu * nv) - cos * u[i] / (nu * nu));
        dv[i] += scale * (u[i] / (nu * nv) - cos * v[i] / (nv * nv));
    }
    cos
}

/// Mean hinge loss `max(0, margin − cos(Wa, Wp) + cos(Wa, Wn))` over the
/// batch and its gradient with respect to the row-major weight.
pub fn triplet_loss_and_grad<F: Scalar>(
    weight: &Tensor<F>,
    margin: F,
    triplets: &[Triplet<'_, F>],
) -> (F, Vec<F>) {
    let dim = weight.dims()[0];
    let w = weight.data();
    let mut grad = vec![F::zero(); dim * dim];
    let mut total = F::zero();
    let inv_n = F::one() / F::lit(triplets.len().max(1) as f64);
    let project = |x: &[F]| -> Vec<F> {
        (0..dim)
            .map(|i| w[i * dim..(i + 1) * dim].iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    };
    let mut ga = vec![F::zero(); dim];
    let mut gp = vec![F::zero(); dim];
    let mut gn = vec![F::zero(); dim];
    for &(xa, xp, xn) in triplets {
        let (ua, up, un) = (project(xa), project(xp), project(xn));
        ga.fill(F::zero());
        gp.fill(F::zero());
        gn.fill(F::zero());
        let mut scratch = vec![F::zero(); dim];
        let cap = cosine_with_grad(&ua, &up, &mut scratch, &mut gp, -inv_n);
        let mut scratch2 = vec![F::zero(); dim];
        let can = cosine_with_grad(&ua, &un, &mut scratch2, &mut gn, inv_n);
        let loss = margin - cap + can;
        if loss <= F::zero() {
            continue;
        }
        total += loss;
        for i in 0..dim {
            ga[i] = scratch[i] + scratch2[i];
        }
        for (g, x) in [(&ga, xa), (&gp, xp), (&gn, xn)] {
            for i in 0..dim {
                let gi = g[i];
                if gi == F::zero() {
                    continue;
                }
                let row = &mut grad[i * dim..(i + 1) * dim];
                for (r, &xj) in row.iter_mut().zip(x) {
                    *r += gi * xj;
                }
            }
        }
    }
    (total * inv_n, grad)
}

/// Patch-level pseudo-labels of one map: foreground iff more than half of
/// the patch's pixels are.
fn patch_labels<F: Scalar>(features: &FeatureMap<F>, mask: &Mask) -> Result<Vec<bool>> {
    if mask.height() % features.grid_h() != 0
        || mask.width() / features.grid_w() != mask.height() / features.grid_h()
    {
        return Err(Error::Shape(format!(
            "mask {}x{} does not tile feature grid {}x{}",
            mask.height(),
            mask.width(),
            features.grid_h(),
            features.grid_w()
        )));
    }
    Ok(mask.patch_majority(mask.height() / features.grid_h()))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct AdaptStats {
    /// Mean batch loss before each step.
    pub loss_trajectory: Vec<f64>,
    pub warning: Option<String>,
}

/// Pools patches by pseudo-class across the whole set and runs `steps` SGD
/// steps of triplet loss, each on a fresh batch drawn with `seed`.
pub fn adapt_features<F: Scalar>(
    adapter: &AdapterParams<F>,
    pseudo_labels: &[(FeatureMap<F>, Mask)],
    steps: usize,
    seed: u64,
) -> Result<(AdapterParams<F>, AdaptStats)> {
    let mut out = adapter.clone();
    let mut stats = AdaptStats::default();
    if steps == 0 {
        return Ok((out, stats));
    }
    let dim = adapter.dim();
    let mut fg: Vec<&[F]> = Vec::new();
    let mut bg: Vec<&[F]> = Vec::new();
    for (fm, mask) in pseudo_labels {
        if fm.dim() != dim {
            return Err(Error::Shape(format!(
                "feature dim {} vs adapter dim {dim}",
                fm.dim()
            )));
        }
        for (i, is_fg) in patch_labels(fm, mask)?.into_iter().enumerate() {
            if is_fg {
                fg.push(fm.vector(i));
            } else {
                bg.push(fm.vector(i));
            }
        }
    }
    if fg.is_empty() || bg.is_empty() {
        let msg = "pseudo-labels contain a single class; adapter left unchanged".to_string();
        warn!("{msg}");
        stats.warning = Some(msg);
        return Ok((out, stats));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Vec::with_capacity(TRIPLETS_PER_STEP);
    for _ in 0..steps {
        batch.clear();
        for _ in 0..TRIPLETS_PER_STEP {
            let (same, other) = if rng.random_bool(0.5) { (&fg, &bg) } else { (&bg, &fg) };
            let a = rng.random_range(0..same.len());
            let p = if same.len() > 1 {
                let p = rng.random_range(0..same.len() - 1);
                if p >= a { p + 1 } else { p }
            } else {
                a
            };
            let n = rng.random_range(0..other.len());
            batch.push((same[a], same[p], other[n]));
        }
        let (loss, grad) = triplet_loss_and_grad(&out.weight, out.margin, &batch);
        stats.loss_trajectory.push(loss.as_f64());
        let lr = out.learning_rate;
        let mut next = out.weight.clone();
        for (w, g) in next.data_mut().iter_mut().zip(&grad) {
            *w -= lr * *g;
        }
        if !next.is_finite() {
            let msg = format!("adapter step {} produced non-finite weights; stopped", out.step);
            warn!("{msg}");
            stats.warning = Some(msg);
            break;
        }
        out.weight = next;
        out.step += 1;
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_map(seed: u64, gh: usize, gw: usize, dim: usize) -> FeatureMap<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..gh * gw * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        FeatureMap::normalized(Tensor::new(vec![gh, gw, dim], data).unwrap()).unwrap()
    }

    #[test]
    fn identity_adapter_is_noop() {
        let fm = random_map(1, 3, 4, 5);
        let out = adapt_map(&fm, &AdapterParams::identity(5)).unwrap();
        for (a, b) in out.tensor().data().iter().zip(fm.tensor().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_identity_is_noop_after_normalization() {
        let fm = random_map(2, 3, 3, 4);
        let mut ad = AdapterParams::identity(4);
        ad.weight.data_mut().iter_mut().for_each(|w| *w *= 2.0);
        let out = adapt_map(&fm, &ad).unwrap();
        for (a, b) in out.tensor().data().iter().zip(fm.tensor().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dim_mismatch_rejected() {
        let fm = random_map(3, 2, 2, 4);
        assert!(adapt_map(&fm, &AdapterParams::identity(5)).is_err());
    }

    #[test]
    fn zero_steps_and_single_class_leave_adapter_unchanged() {
        let fm = random_map(4, 2, 2, 3);
        let ad = AdapterParams::<f64>::identity(3);
        let mask = Mask::filled(4, 4, true);
        let (same, stats) = adapt_features(&ad, &[(fm.clone(), mask.clone())], 0, 1).unwrap();
        assert_eq!(same, ad);
        assert!(stats.loss_trajectory.is_empty());
        let (same, stats) = adapt_features(&ad, &[(fm, mask)], 10, 1).unwrap();
        assert_eq!(same, ad);
        assert!(stats.warning.is_some());
    }
}
