use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::QualityProxy;
use crate::clicking_agent::{reinforce_update, sample_action, AgentState, ClickAction, PolicyParams, Transition, UpdateDiagnostics};
use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::oracle::{Judgement, PreferenceOracle, StepContext};
use crate::propagation::{propagate, LabeledClick, PropagationConfig};
use crate::types::{FeatureMap, ImageRecord, Mask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// 1-based.
    pub step: usize,
    pub action: ClickAction,
    pub click: LabeledClick,
    /// `None` when the oracle skipped the step.
    pub reward: Option<i8>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dice_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dice_after: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub record_id: String,
    pub image_index: usize,
    pub steps: Vec<StepLog>,
    /// Dice of the working mask against ground truth, initial then after each
    /// step; empty when the record has no ground truth.
    pub dice_trajectory: Vec<f64>,
    /// Steps judged better over all steps.
    pub accepted_fraction: f64,
    /// Dice between the final mask and the learner's initial prediction.
    pub model_agreement: f64,
    pub update: Option<UpdateDiagnostics>,
}

impl EpisodeLog {
    pub fn quality(&self, proxy: QualityProxy) -> f64 {
        match proxy {
            QualityProxy::MeanAcceptedReward => self.accepted_fraction,
            QualityProxy::ModelAgreement => self.model_agreement,
        }
    }

    pub fn initial_dice(&self) -> Option<f64> {
        self.dice_trajectory.first().copied()
    }

    pub fn final_dice(&self) -> Option<f64> {
        self.dice_trajectory.last().copied()
    }
}

pub struct EpisodeInput<'a> {
    pub record: &'a ImageRecord,
    pub image_index: usize,
    /// Adapted features for this record.
    pub features: &'a FeatureMap<f32>,
    /// The learner's prediction; every propagation starts from it.
    pub initial: Mask,
    /// 1-based.
    pub round: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeSettings {
    pub steps: usize,
    pub propagation: PropagationConfig,
    /// Seeds action sampling for this episode.
    pub seed: u64,
    /// Fail if Dice ever drops; only meaningful with a noiseless simulated oracle.
    pub check_monotone: bool,
}

pub struct Interaction {
    pub final_mask: Mask,
    pub log: EpisodeLog,
    pub trajectory: Vec<Transition<f32>>,
}

/// Plays one episode against `oracle` without touching the agent.
pub fn interact(
    agent: &PolicyParams<f32>,
    input: &EpisodeInput<'_>,
    oracle: &mut dyn PreferenceOracle,
    settings: &EpisodeSettings,
    mut on_step: impl FnMut(StepContext),
) -> Result<Interaction> {
    let record = input.record;
    let (gh, gw) = (input.features.grid_h(), input.features.grid_w());
    if gh == 0 || record.height() % gh != 0 {
        return Err(Error::Shape(format!("record `{}` does not tile its feature grid", record.id)));
    }
    let patch_size = record.height() / gh;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let gt = record.gt_mask.as_ref();
    let mut current = input.initial.clone();
    let mut accepted: Vec<LabeledClick> = Vec::new();
    let mut steps = Vec::with_capacity(settings.steps);
    let mut trajectory = Vec::with_capacity(settings.steps);
    let mut dice_trajectory = Vec::new();
    if let Some(gt) = gt {
        dice_trajectory.push(dice(&current, gt)?);
    }
    let mut positives = 0usize;
    for step in 1..=settings.steps {
        let ctx = StepContext {
            round: input.round,
            image_index: input.image_index,
            step,
        };
        on_step(ctx);
        let state = AgentState::<f32>::build(&record.image, &current, patch_size)?;
        let action = sample_action(agent, &state, &mut rng, false)?;
        if action.row >= gh || action.col >= gw {
            return Err(Error::OutOfBounds {
                row: action.row,
                col: action.col,
                height: gh,
                width: gw,
            });
        }
        let click = action.to_click(patch_size, accepted.len() + 1);
        let mut candidate = accepted.clone();
        candidate.push(click);
        let m_new = propagate(&candidate, input.features, &input.initial, &settings.propagation)?;
        let mut log = StepLog {
            step,
            action,
            click,
            reward: None,
            accepted: false,
            dice_before: None,
            dice_after: None,
            latency_ms: None,
        };
        if let Judgement::Verdict(v) = oracle.judge(record, ctx, &m_new, &current)? {
            log.reward = Some(v.reward);
            log.dice_before = v.dice_before;
            log.dice_after = v.dice_after;
            log.latency_ms = v.latency_ms;
            if v.is_better() {
                positives += 1;
                log.accepted = true;
                accepted.push(click);
                current = m_new;
            }
            trajectory.push(Transition {
                state,
                action,
                reward: v.reward as f64,
            });
        }
        if let Some(gt) = gt {
            let d = dice(&current, gt)?;
            let prev = *dice_trajectory.last().unwrap();
            if settings.check_monotone && d < prev {
                return Err(Error::Invariant(format!(
                    "`{}` step {step}: Dice fell from {prev} to {d}",
                    record.id
                )));
            }
            dice_trajectory.push(d);
        }
        steps.push(log);
    }
    let model_agreement = dice(&current, &input.initial)?;
    Ok(Interaction {
        log: EpisodeLog {
            record_id: record.id.clone(),
            image_index: input.image_index,
            steps,
            dice_trajectory,
            accepted_fraction: positives as f64 / settings.steps as f64,
            model_agreement,
            update: None,
        },
        final_mask: current,
        trajectory,
    })
}

/// Applies the episode's REINFORCE step, if any step was judged.
pub fn apply_update(agent: &mut PolicyParams<f32>, interaction: &mut Interaction) -> Result<()> {
    if interaction.trajectory.is_empty() {
        return Ok(());
    }
    let (next, diag) = reinforce_update(agent, &interaction.trajectory)?;
    *agent = next;
    interaction.log.update = Some(diag);
    Ok(())
}

/// One image's interactive refinement followed by the agent update.
pub fn run_episode(
    agent: &mut PolicyParams<f32>,
    input: &EpisodeInput<'_>,
    oracle: &mut dyn PreferenceOracle,
    settings: &EpisodeSettings,
) -> Result<(Mask, EpisodeLog)> {
    let mut it = interact(agent, input, oracle, settings, |_| {})?;
    apply_update(agent, &mut it)?;
    Ok((it.final_mask, it.log))
}
