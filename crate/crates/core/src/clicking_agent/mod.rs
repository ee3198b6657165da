//! The clicking agent: a small conv policy over (image ⊕ mask) at patch-grid
//! resolution, sampling a (cell, label) action from a tempered softmax and
//! trained with REINFORCE on ±1 verdicts.

mod conv;
mod policy;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use policy::{ConvLayer, PolicyParams, DEFAULT_POLICY_LR, DEFAULT_TEMPERATURE, HIDDEN};

use crate::error::{Error, Result};
use crate::propagation::{Label, LabeledClick};
use crate::scalar::Scalar;
use crate::types::{pnm::chw, Mask, Tensor};

/// Global L2 norm the summed episode gradient is clipped to.
pub const GRAD_CLIP_NORM: f64 = 5.0;
/// Decay of the optional moving-average reward baseline.
pub const BASELINE_DECAY: f64 = 0.9;

/// `(C+1) × H' × W'`: the image averaged per patch plus the mask's
/// per-patch majority label as the last channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState<F = f32> {
    pub tensor: Tensor<F>,
}

impl<F: Scalar> AgentState<F> {
    pub fn build(image: &Tensor<f32>, mask: &Mask, patch_size: usize) -> Result<Self> {
        let (c, h, w) = chw(image)?;
        if mask.height() != h || mask.width() != w {
            return Err(Error::Shape(format!(
                "mask {}x{} vs image {h}x{w}",
                mask.height(),
                mask.width()
            )));
        }
        if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
            return Err(Error::Shape(format!("{h}x{w} not divisible by patch {patch_size}")));
        }
        let (gh, gw) = (h / patch_size, w / patch_size);
        let area = (patch_size * patch_size) as f64;
        let img = image.data();
        let mut data = Vec::with_capacity((c + 1) * gh * gw);
        for ch in 0..c {
            for gr in 0..gh {
                for gc in 0..gw {
                    let mut sum = 0.0;
                    for r in gr * patch_size..(gr + 1) * patch_size {
                        for q in gc * patch_size..(gc + 1) * patch_size {
                            sum += img[(ch * h + r) * w + q] as f64;
                        }
                    }
                    data.push(F::lit(sum / area));
                }
            }
        }
        data.extend(
            mask.patch_majority(patch_size)
                .into_iter()
                .map(|b| if b { F::one() } else { F::zero() }),
        );
        Ok(Self {
            tensor: Tensor::new(vec![c + 1, gh, gw], data)?,
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.tensor.dims()[1], self.tensor.dims()[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickAction {
    /// Working-resolution (patch grid) coordinates.
    pub row: usize,
    pub col: usize,
    pub label: Label,
    /// `log π(a|s)` at sampling time; ≤ 0.
    pub log_prob: f64,
}

impl ClickAction {
    /// Flat index into the `2 × H' × W'` action space (channel 0 = background).
    pub fn index(&self, grid_w: usize, grid_h: usize) -> usize {
        let ch = self.label.is_fg() as usize;
        ch * grid_h * grid_w + self.row * grid_w + self.col
    }

    fn from_index(index: usize, grid_h: usize, grid_w: usize, log_prob: f64) -> Self {
        let cells = grid_h * grid_w;
        let label = if index >= cells { Label::Foreground } else { Label::Background };
        let pos = index % cells;
        Self {
            row: pos / grid_w,
            col: pos % grid_w,
            label,
            log_prob,
        }
    }

    /// Pixel click at the centre of the chosen patch.
    pub fn to_click(&self, patch_size: usize, sequence: usize) -> LabeledClick {
        LabeledClick {
            row: self.row * patch_size + patch_size / 2,
            col: self.col * patch_size + patch_size / 2,
            label: self.label,
            sequence,
        }
    }
}

/// Logits `[2, H', W']`.
pub fn policy_forward<F: Scalar>(params: &PolicyParams<F>, state: &AgentState<F>) -> Result<Tensor<F>> {
    let cache = policy::forward_cached(params, &state.tensor)?;
    Tensor::new(vec![2, cache.sl.h, cache.sl.w], cache.logits)
}

/// `softmax(logits / temperature)` over the flattened action space.
pub fn action_probabilities<F: Scalar>(logits: &[F], temperature: F) -> Vec<F> {
    let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<F> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Draws an action; `greedy` takes the arg-max logit (the zero-temperature
/// limit) with `log_prob = 0`.
pub fn sample_action<F: Scalar, R: Rng + ?Sized>(
    params: &PolicyParams<F>,
    state: &AgentState<F>,
    rng: &mut R,
    greedy: bool,
) -> Result<ClickAction> {
    let logits = policy_forward(params, state)?;
    let (gh, gw) = state.grid();
    let data = logits.data();
    if greedy {
        let best = data
            .iter()
            .enumerate()
            .fold(0, |b, (i, &v)| if v > data[b] { i } else { b });
        return Ok(ClickAction::from_index(best, gh, gw, 0.0));
    }
    let probs = action_probabilities(data, params.temperature);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = probs.len() - 1;
    for (i, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            chosen = i;
            break;
        }
    }
    let log_prob = probs[chosen].as_f64().ln().min(0.0);
    Ok(ClickAction::from_index(chosen, gh, gw, log_prob))
}

/// `log π(action | state)` under the current parameters.
pub fn log_prob<F: Scalar>(params: &PolicyParams<F>, state: &AgentState<F>, action: &ClickAction) -> Result<F> {
    let logits = policy_forward(params, state)?;
    let (gh, gw) = state.grid();
    let probs = action_probabilities(logits.data(), params.temperature);
    Ok(probs[action.index(gw, gh)].ln())
}

/// `∇θ log π(action | state)`, one buffer per parameter block.
pub fn log_prob_grad<F: Scalar>(
    params: &PolicyParams<F>,
    state: &AgentState<F>,
    action: &ClickAction,
) -> Result<Vec<Vec<F>>> {
    let mut grads = zero_grads(params);
    accumulate_log_prob_grad(params, state, action, F::one(), &mut grads)?;
    Ok(grads)
}

fn zero_grads<F: Scalar>(params: &PolicyParams<F>) -> Vec<Vec<F>> {
    params.blocks().iter().map(|t| vec![F::zero(); t.len()]).collect()
}

fn accumulate_log_prob_grad<F: Scalar>(
    params: &PolicyParams<F>,
    state: &AgentState<F>,
    action: &ClickAction,
    scale: F,
    grads: &mut [Vec<F>],
) -> Result<()> {
    let cache = policy::forward_cached(params, &state.tensor)?;
    let (gh, gw) = state.grid();
    let probs = action_probabilities(&cache.logits, params.temperature);
    let taken = action.index(gw, gh);
    let inv_t = scale / params.temperature;
    let dlogits: Vec<F> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let onehot = if i == taken { F::one() } else { F::zero() };
            (onehot - p) * inv_t
        })
        .collect();
    policy::backward(params, &cache, &dlogits, grads);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<F = f32> {
    pub state: AgentState<F>,
    pub action: ClickAction,
    /// +1 better, −1 worse.
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    /// Global L2 norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
    /// Skipped because the gradient was non-finite.
    pub skipped: bool,
}

/// One REINFORCE step over a whole episode:
/// `θ ← θ + lr · clip(Σ_t (r_t − b) ∇ log π(a_t|s_t))`.
pub fn reinforce_update<F: Scalar>(
    params: &PolicyParams<F>,
    trajectory: &[Transition<F>],
) -> Result<(PolicyParams<F>, UpdateDiagnostics)> {
    if trajectory.is_empty() {
        return Err(Error::Config("REINFORCE needs a non-empty trajectory".into()));
    }
    let baseline = params.baseline.unwrap_or(F::zero());
    let mut grads = zero_grads(params);
    for t in trajectory {
        let advantage = F::lit(t.reward) - baseline;
        accumulate_log_prob_grad(params, &t.state, &t.action, advantage, &mut grads)?;
    }
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    let mut next = params.clone();
    if !norm.is_finite() {
        warn!("non-finite policy gradient at update {}; step skipped", params.updates);
        return Ok((
            next,
            UpdateDiagnostics {
                grad_norm: norm,
                clipped: false,
                skipped: true,
            },
        ));
    }
    let clipped = norm > GRAD_CLIP_NORM;
    let scale = if clipped { GRAD_CLIP_NORM / norm } else { 1.0 };
    let step = params.learning_rate * F::lit(scale);
    for (block, g) in next.blocks_mut().into_iter().zip(&grads) {
        for (w, &gi) in block.data_mut().iter_mut().zip(g) {
            *w += step * gi;
        }
    }
    if let Some(b) = params.baseline {
        let mean = trajectory.iter().map(|t| t.reward).sum::<f64>() / trajectory.len() as f64;
        next.baseline = Some(F::lit(BASELINE_DECAY * b.as_f64() + (1.0 - BASELINE_DECAY) * mean));
    }
    if !next.is_finite() {
        warn!("policy update {} produced non-finite parameters; step skipped", params.updates);
        return Ok((
            params.clone(),
            UpdateDiagnostics {
                grad_norm: norm,
                clipped,
                skipped: true,
            },
        ));
    }
    next.updates += 1;
    Ok((
        next,
        UpdateDiagnostics {
            grad_norm: norm,
            clipped,
            skipped: false,
        },
    ))
}
