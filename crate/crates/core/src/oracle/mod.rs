//! Better/worse verdicts, simulated from ground-truth Dice or relayed from a
//! human through a [`FeedbackHub`].

mod feedback;

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use feedback::{
    Comparison, ComparisonPayload, FeedbackHub, HumanVerdict, NextComparison, RunProgress,
    SessionStatus, SubmitOutcome,
};

use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::types::{ImageRecord, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    Simulated,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceVerdict {
    /// +1 better, −1 worse.
    pub reward: i8,
    pub source: VerdictSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dice_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dice_after: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

impl PreferenceVerdict {
    pub fn is_better(&self) -> bool {
        self.reward > 0
    }
}

/// Outcome of asking for one verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Judgement {
    Verdict(PreferenceVerdict),
    /// No verdict arrived in time; the step leaves mask and agent untouched.
    Skipped,
}

/// `+1` iff Dice against the ground truth strictly increases; ties are worse.
pub fn judge_simulated(m_new: &Mask, m_current: &Mask, gt: &Mask) -> Result<PreferenceVerdict> {
    let before = dice(m_current, gt)?;
    let after = dice(m_new, gt)?;
    Ok(PreferenceVerdict {
        reward: if after > before { 1 } else { -1 },
        source: VerdictSource::Simulated,
        dice_before: Some(before),
        dice_after: Some(after),
        latency_ms: None,
    })
}

/// Where a comparison sits in the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepContext {
    pub round: usize,
    pub image_index: usize,
    pub step: usize,
}

pub trait PreferenceOracle {
    fn source(&self) -> VerdictSource;

    fn judge(
        &mut self,
        record: &ImageRecord,
        ctx: StepContext,
        m_new: &Mask,
        m_current: &Mask,
    ) -> Result<Judgement>;
}

/// Ground-truth Dice oracle. `flip_probability` inverts verdicts at random
/// for robustness experiments; 0 reproduces the strict rule exactly.
pub struct SimulatedOracle {
    flip_probability: f64,
    seed: u64,
}

impl SimulatedOracle {
    pub fn new() -> Self {
        Self::with_flip(0.0, 0)
    }

    pub fn with_flip(flip_probability: f64, seed: u64) -> Self {
        Self {
            flip_probability: flip_probability.clamp(0.0, 1.0),
            seed,
        }
    }
}

impl Default for SimulatedOracle {
    fn default() -> Self {
        Self::new()
    }
}

impl PreferenceOracle for SimulatedOracle {
    fn source(&self) -> VerdictSource {
        VerdictSource::Simulated
    }

    fn judge(
        &mut self,
        record: &ImageRecord,
        ctx: StepContext,
        m_new: &Mask,
        m_current: &Mask,
    ) -> Result<Judgement> {
        let gt = record
            .gt_mask
            .as_ref()
            .ok_or_else(|| Error::MissingGroundTruth(record.id.clone()))?;
        let mut verdict = judge_simulated(m_new, m_current, gt)?;
        if self.flip_probability > 0.0 {
            // keyed by position so resumed runs see the same flips
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(((ctx.round as u64) << 40) | ((ctx.image_index as u64) << 8) | ctx.step as u64);
            if rng.random_bool(self.flip_probability) {
                verdict.reward = -verdict.reward;
            }
        }
        Ok(Judgement::Verdict(verdict))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeoutPolicy {
    SkipStep,
    AbortRun,
}

/// Blocks on the feedback hub until the reviewer answers.
pub struct HumanOracle {
    hub: Arc<FeedbackHub>,
    timeout: Duration,
    on_timeout: TimeoutPolicy,
}

impl HumanOracle {
    pub fn new(hub: Arc<FeedbackHub>, timeout: Duration, on_timeout: TimeoutPolicy) -> Self {
        Self {
            hub,
            timeout,
            on_timeout,
        }
    }
}

impl PreferenceOracle for HumanOracle {
    fn source(&self) -> VerdictSource {
        VerdictSource::Human
    }

    fn judge(
        &mut self,
        record: &ImageRecord,
        ctx: StepContext,
        m_new: &Mask,
        m_current: &Mask,
    ) -> Result<Judgement> {
        let started = Instant::now();
        let comparison = Comparison {
            record_id: record.id.clone(),
            image: record.image.clone(),
            mask_before: m_current.clone(),
            mask_after: m_new.clone(),
            context: ctx,
        };
        match self.hub.request_verdict(comparison, self.timeout)? {
            Some(v) => Ok(Judgement::Verdict(PreferenceVerdict {
                reward: if v == HumanVerdict::Better { 1 } else { -1 },
                source: VerdictSource::Human,
                dice_before: None,
                dice_after: None,
                latency_ms: Some(started.elapsed().as_millis() as u64),
            })),
            None => match self.on_timeout {
                TimeoutPolicy::SkipStep => Ok(Judgement::Skipped),
                TimeoutPolicy::AbortRun => Err(Error::Session(format!(
                    "no verdict within {:?} for `{}` step {}",
                    self.timeout, record.id, ctx.step
                ))),
            },
        }
    }
}
