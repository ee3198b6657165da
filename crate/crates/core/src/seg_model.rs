//! The segmentation learner: a logistic classifier over adapted patch
//! features, expanded blockwise to pixels. Trained by minibatch SGD on
//! binary cross-entropy and warm-started between rounds.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{FeatureMap, Mask, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SegModelParams<F = f32> {
    pub weight: Tensor<F>,
    pub bias: F,
    pub learning_rate: F,
    pub epochs: usize,
    pub batch_size: usize,
    /// SGD steps applied so far.
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 20,
            batch_size: 32,
        }
    }
}

impl<F: Scalar> SegModelParams<F> {
    /// All-zero parameters: every patch scores exactly 0.5.
    pub fn zeros(dim: usize, config: SegTrainConfig) -> Self {
        Self {
            weight: Tensor::zeros(vec![dim]),
            bias: F::zero(),
            learning_rate: F::lit(config.learning_rate),
            epochs: config.epochs,
            batch_size: config.batch_size.max(1),
            step: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.is_finite()
    }

    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        out.weight.data_mut().iter_mut().for_each(|w| *w = -*w);
        out.bias = -out.bias;
        out
    }

    #[inline]
    fn logit(&self, x: &[F]) -> F {
        self.weight
            .data()
            .iter()
            .zip(x)
            .map(|(&w, &v)| w * v)
            .sum::<F>()
            + self.bias
    }
}

pub fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Per-patch foreground probability.
pub fn patch_probabilities<F: Scalar>(params: &SegModelParams<F>, features: &FeatureMap<F>) -> Result<Vec<F>> {
    if features.dim() != params.dim() {
        return Err(Error::Shape(format!(
            "feature dim {} vs model dim {}",
            features.dim(),
            params.dim()
        )));
    }
    Ok((0..features.num_patches())
        .map(|i| sigmoid(params.logit(features.vector(i))))
        .collect())
}

/// `sigmoid(w·f + b) ≥ 0.5` is foreground; the tie goes to foreground.
pub fn predict<F: Scalar>(params: &SegModelParams<F>, features: &FeatureMap<F>, patch_size: usize) -> Result<Mask> {
    let probs = patch_probabilities(params, features)?;
    let half = F::lit(0.5);
    let labels: Vec<bool> = probs.into_iter().map(|p| p >= half).collect();
    Ok(Mask::from_patches(features.grid_h(), features.grid_w(), patch_size, &labels))
}

/// Numerically stable mean BCE over `(features, target)` pairs and its
/// gradient `(d weight, d bias)`.
pub fn bce_loss_and_grad<F: Scalar>(
    weight: &[F],
    bias: F,
    samples: &[(&[F], F)],
) -> (F, Vec<F>, F) {
    let mut gw = vec![F::zero(); weight.len()];
    let mut gb = F::zero();
    let mut loss = F::zero();
    let inv_n = F::one() / F::lit(samples.len().max(1) as f64);
    for &(x, y) in samples {
        let z = weight.iter().zip(x).map(|(&w, &v)| w * v).sum::<F>() + bias;
        // softplus(z) − y·z
        loss += z.max(F::zero()) - y * z + (F::one() + (-z.abs()).exp()).ln();
        let d = (sigmoid(z) - y) * inv_n;
        for (g, &v) in gw.iter_mut().zip(x) {
            *g += d * v;
        }
        gb += d;
    }
    (loss * inv_n, gw, gb)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegTrainStats {
    /// Mean BCE over the whole set before any update.
    pub initial_loss: f64,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub rollbacks: usize,
    pub warning: Option<String>,
}

/// Patch samples with majority-vote targets (ties are background).
fn patch_samples<F: Scalar>(pseudo: &[(FeatureMap<F>, Mask)]) -> Result<Vec<(&[F], F)>> {
    let mut out = Vec::new();
    for (fm, mask) in pseudo {
        let ps = mask.height() / fm.grid_h().max(1);
        if ps == 0 || mask.height() != fm.grid_h() * ps || mask.width() != fm.grid_w() * ps {
            return Err(Error::Shape(format!(
                "mask {}x{} does not tile feature grid {}x{}",
                mask.height(),
                mask.width(),
                fm.grid_h(),
                fm.grid_w()
            )));
        }
        for (i, fg) in mask.patch_majority(ps).into_iter().enumerate() {
            out.push((fm.vector(i), if fg { F::one() } else { F::zero() }));
        }
    }
    Ok(out)
}

pub fn dataset_loss<F: Scalar>(params: &SegModelParams<F>, pseudo: &[(FeatureMap<F>, Mask)]) -> Result<f64> {
    let samples = patch_samples(pseudo)?;
    Ok(bce_loss_and_grad(params.weight.data(), params.bias, &samples).0.as_f64())
}

/// Fine-tunes from the incoming parameters; deterministic given `seed`.
pub fn train<F: Scalar>(
    params: &SegModelParams<F>,
    pseudo: &[(FeatureMap<F>, Mask)],
    seed: u64,
) -> Result<(SegModelParams<F>, SegTrainStats)> {
    if pseudo.is_empty() {
        return Err(Error::Config("cannot train on an empty pseudo-label set".into()));
    }
    for (fm, _) in pseudo {
        if fm.dim() != params.dim() {
            return Err(Error::Shape(format!(
                "feature dim {} vs model dim {}",
                fm.dim(),
                params.dim()
            )));
        }
    }
    let samples = patch_samples(pseudo)?;
    let mut stats = SegTrainStats {
        initial_loss: bce_loss_and_grad(params.weight.data(), params.bias, &samples).0.as_f64(),
        ..SegTrainStats::default()
    };
    let positives = samples.iter().filter(|s| s.1 > F::zero()).count();
    if positives == 0 || positives == samples.len() {
        let msg = "pseudo-labels contain a single class; fitting bias only in effect".to_string();
        warn!("{msg}");
        stats.warning = Some(msg);
    }
    let mut out = params.clone();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Vec::with_capacity(out.batch_size);
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(out.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            let (loss, gw, gb) = bce_loss_and_grad(out.weight.data(), out.bias, &batch);
            let lr = out.learning_rate;
            let mut next = out.clone();
            for (w, g) in next.weight.data_mut().iter_mut().zip(&gw) {
                *w -= lr * *g;
            }
            next.bias -= lr * gb;
            if !loss.is_finite() || !next.is_finite() {
                stats.rollbacks += 1;
                out.learning_rate = out.learning_rate * F::lit(0.5);
                warn!("segmentation step diverged; rolled back, lr now {}", out.learning_rate);
                continue;
            }
            next.step += 1;
            out = next;
            epoch_loss += loss.as_f64();
            batches += 1;
        }
        stats.epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }
    Ok((out, stats))
}
