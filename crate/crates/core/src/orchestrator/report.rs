use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::episode::EpisodeLog;
use super::state::RoundState;
use crate::error::Result;
use crate::feature_provider::{adapt_map, AdapterParams};
use crate::metrics::{dice, evaluate, Summary};
use crate::seg_model::{predict, SegModelParams};
use crate::types::{DatasetManifest, FeatureMap, Mask};

pub const HISTOGRAM_BINS: usize = 10;

/// Learner quality against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub dice: Summary,
    pub iou: Summary,
    /// Over images where HD95 is defined.
    pub hd95: Summary,
    pub hd95_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractiveSummary {
    pub initial_dice: Summary,
    pub final_dice: Summary,
    /// Final Dice in ten equal bins over [0, 1]; 1.0 falls in the last.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub steps: usize,
    pub judged: usize,
    pub skipped: usize,
    pub positive: usize,
    pub negative: usize,
    /// Mean of the ±1 rewards over judged steps.
    pub mean_reward: f64,
    pub agent_updates: usize,
    pub clipped_updates: usize,
    pub mean_grad_norm: f64,
}

impl RewardStats {
    pub fn of(episodes: &[EpisodeLog]) -> Self {
        let mut s = RewardStats::default();
        let mut reward_sum = 0.0;
        let mut norm_sum = 0.0;
        for e in episodes {
            for step in &e.steps {
                s.steps += 1;
                match step.reward {
                    Some(r) if r > 0 => s.positive += 1,
                    Some(_) => s.negative += 1,
                    None => s.skipped += 1,
                }
                reward_sum += step.reward.map_or(0.0, f64::from);
            }
            if let Some(u) = e.update.filter(|u| !u.skipped) {
                s.agent_updates += 1;
                s.clipped_updates += u.clipped as usize;
                norm_sum += u.grad_norm;
            }
        }
        s.judged = s.positive + s.negative;
        if s.judged > 0 {
            s.mean_reward = reward_sum / s.judged as f64;
        }
        if s.agent_updates > 0 {
            s.mean_grad_norm = norm_sum / s.agent_updates as f64;
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub training_images: usize,
    pub seg_initial_loss: f64,
    pub seg_final_loss: Option<f64>,
    pub seg_rollbacks: usize,
    pub adapter_initial_loss: Option<f64>,
    pub adapter_final_loss: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub images: usize,
    pub kept: usize,
    /// End-of-round learner against ground truth, when available.
    pub learner: Option<EvalSummary>,
    /// Final pseudo-masks against ground truth, when available.
    pub interactive: Option<InteractiveSummary>,
    pub rewards: RewardStats,
    pub training: TrainingSummary,
}

/// Scores the learner on every record that has ground truth.
pub fn evaluate_learner(
    dataset: &DatasetManifest,
    raw: &[FeatureMap<f32>],
    seg: &SegModelParams<f32>,
    adapter: &AdapterParams<f32>,
) -> Result<Option<EvalSummary>> {
    let mut dices = Vec::new();
    let mut ious = Vec::new();
    let mut hds = Vec::new();
    let mut undefined = 0;
    for (record, fm) in dataset.records.iter().zip(raw) {
        let Some(gt) = &record.gt_mask else { continue };
        let pred = predict(seg, &adapt_map(fm, adapter)?, dataset.patch_size)?;
        let m = evaluate(&pred, gt)?;
        dices.push(m.dice);
        ious.push(m.iou);
        match m.hd95 {
            Some(h) => hds.push(h),
            None => undefined += 1,
        }
    }
    if dices.is_empty() {
        return Ok(None);
    }
    Ok(Some(EvalSummary {
        dice: Summary::of(&dices),
        iou: Summary::of(&ious),
        hd95: Summary::of(&hds),
        hd95_undefined: undefined,
    }))
}

pub fn histogram(values: &[f64]) -> Vec<usize> {
    let mut bins = vec![0; HISTOGRAM_BINS];
    for &v in values {
        let b = ((v * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        bins[b] += 1;
    }
    bins
}

pub fn interactive_summary(
    dataset: &DatasetManifest,
    episodes: &[EpisodeLog],
    pseudo: &BTreeMap<String, Mask>,
) -> Result<Option<InteractiveSummary>> {
    let mut before = Vec::new();
    let mut after = Vec::new();
    for record in &dataset.records {
        let (Some(gt), Some(p)) = (&record.gt_mask, pseudo.get(&record.id)) else {
            continue;
        };
        after.push(dice(p, gt)?);
    }
    before.extend(episodes.iter().filter_map(EpisodeLog::initial_dice));
    if after.is_empty() {
        return Ok(None);
    }
    Ok(Some(InteractiveSummary {
        initial_dice: Summary::of(&before),
        final_dice: Summary::of(&after),
        histogram: histogram(&after),
    }))
}

pub fn build_report(
    state: &RoundState,
    dataset: &DatasetManifest,
    pseudo: &BTreeMap<String, Mask>,
    learner: Option<EvalSummary>,
) -> Result<RoundReport> {
    let t = &state.training;
    let mut warnings: Vec<String> = t.adapter.warning.iter().chain(&t.seg.warning).cloned().collect();
    warnings.extend(t.notes.iter().cloned());
    Ok(RoundReport {
        round: state.round,
        images: state.episodes.len(),
        kept: state.kept.len(),
        learner,
        interactive: interactive_summary(dataset, &state.episodes, pseudo)?,
        rewards: RewardStats::of(&state.episodes),
        training: TrainingSummary {
            training_images: t.training_images,
            seg_initial_loss: t.seg.initial_loss,
            seg_final_loss: t.seg.epoch_losses.last().copied(),
            seg_rollbacks: t.seg.rollbacks,
            adapter_initial_loss: t.adapter.loss_trajectory.first().copied(),
            adapter_final_loss: t.adapter.loss_trajectory.last().copied(),
            warnings,
        },
    })
}

pub const CSV_HEADER: &str = "round,images,kept,mean_dice,median_dice,std_dice,mean_iou,mean_hd95,hd95_undefined,\
mean_interactive_dice,std_interactive_dice,mean_reward,positive,negative,skipped";

pub fn csv_row(r: &RoundReport) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let l = r.learner.as_ref();
    let i = r.interactive.as_ref();
    [
        r.round.to_string(),
        r.images.to_string(),
        r.kept.to_string(),
        opt(l.map(|l| l.dice.mean)),
        opt(l.map(|l| l.dice.median)),
        opt(l.map(|l| l.dice.std)),
        opt(l.map(|l| l.iou.mean)),
        opt(l.filter(|l| l.hd95.count > 0).map(|l| l.hd95.mean)),
        l.map(|l| l.hd95_undefined.to_string()).unwrap_or_default(),
        opt(i.map(|i| i.final_dice.mean)),
        opt(i.map(|i| i.final_dice.std)),
        r.rewards.mean_reward.to_string(),
        r.rewards.positive.to_string(),
        r.rewards.negative.to_string(),
        r.rewards.skipped.to_string(),
    ]
    .join(",")
}

pub fn to_csv(reports: &[RoundReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}
