use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{OracleMode, RunConfig};
use super::episode::{apply_update, interact, EpisodeInput, EpisodeSettings, Interaction};
use super::filter::filter_top_k;
use super::report::{build_report, evaluate_learner, to_csv, RewardStats, RoundReport};
use super::state::{checkpoint_names, load_report, read_json, round_dir, RoundArtifacts, RoundState, Timing, TrainingLog};
use crate::clicking_agent::PolicyParams;
use crate::error::{Error, Result};
use crate::feature_provider::{adapt_features, adapt_map, write_json, AdapterParams};
use crate::oracle::{FeedbackHub, PreferenceOracle, SimulatedOracle, StepContext, VerdictSource};
use crate::seg_model::{predict, train, SegModelParams};
use crate::types::{load_manifest, DatasetManifest, FeatureMap, Mask};

pub const RUN_FILE: &str = "run.json";
pub const PROGRESS_FILE: &str = "progress.json";

const TAG_AGENT: u64 = 1;
const TAG_EPISODE: u64 = 2;
const TAG_ADAPTER: u64 = 3;
const TAG_SEG: u64 = 4;
const TAG_FLIP: u64 = 5;

/// Folds `parts` into `seed` with splitmix64 so every stream is independent.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// Hooks for progress reporting; all methods default to no-ops.
pub trait RunObserver: Send + Sync {
    fn on_start(&self, _run_id: &str, _config: &RunConfig, _images: usize) {}
    fn on_step(&self, _ctx: StepContext) {}
    fn on_round(&self, _report: &RoundReport) {}
    fn on_finish(&self, _aborted: bool) {}
}

impl RunObserver for FeedbackHub {
    fn on_start(&self, run_id: &str, config: &RunConfig, images: usize) {
        let mut p = self.progress();
        p.run_id = run_id.to_string();
        p.state = "running".into();
        p.total_rounds = config.rounds;
        p.total_images = images;
        p.steps_per_image = config.steps_per_image;
        self.set_progress(p);
    }

    fn on_step(&self, ctx: StepContext) {
        let mut p = self.progress();
        p.round = ctx.round;
        p.image_index = ctx.image_index;
        p.step = ctx.step;
        self.set_progress(p);
    }

    fn on_round(&self, report: &RoundReport) {
        let mut p = self.progress();
        p.completed_rounds.push((
            report.round,
            report.learner.as_ref().map(|l| l.dice.mean),
            report.rewards.mean_reward,
        ));
        self.set_progress(p);
    }

    fn on_finish(&self, aborted: bool) {
        let mut p = self.progress();
        p.state = if aborted { "aborted" } else { "finished" }.into();
        self.set_progress(p);
        self.finish();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub manifest: Option<PathBuf>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub run_id: String,
    /// `running`, `finished` or `aborted`.
    pub state: String,
    pub completed_rounds: usize,
    pub total_rounds: usize,
    pub resume_token: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub reports: Vec<RoundReport>,
    /// The last completed round.
    pub last: RoundArtifacts,
}

pub fn load_raw_features(dataset: &DatasetManifest) -> Result<Vec<FeatureMap<f32>>> {
    dataset
        .records
        .iter()
        .map(|r| {
            FeatureMap::load(&r.feature_ref).map_err(|e| Error::InvalidRecord {
                id: r.id.clone(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Parameters the first round starts from.
pub fn initial_parameters(
    config: &RunConfig,
    channels: usize,
    dim: usize,
) -> (PolicyParams<f32>, SegModelParams<f32>, AdapterParams<f32>) {
    let mut agent = PolicyParams::new(channels, derive_seed(config.seed, &[TAG_AGENT]));
    agent.temperature = config.agent.temperature as f32;
    agent.learning_rate = config.agent.learning_rate as f32;
    agent.baseline = config.agent.reward_baseline.then_some(0.0);
    let seg = SegModelParams::zeros(dim, config.seg);
    let adapter = AdapterParams::identity_with(dim, config.adapter.learning_rate as f32, config.adapter.margin as f32);
    (agent, seg, adapter)
}

fn episode_settings(config: &RunConfig, round: usize, index: usize, check_monotone: bool) -> EpisodeSettings {
    EpisodeSettings {
        steps: config.steps_per_image,
        propagation: config.propagation(),
        seed: derive_seed(config.seed, &[TAG_EPISODE, round as u64, index as u64]),
        check_monotone,
    }
}

fn simulated_oracle(config: &RunConfig) -> SimulatedOracle {
    SimulatedOracle::with_flip(config.flip_probability, derive_seed(config.seed, &[TAG_FLIP]))
}

struct Carry {
    agent: PolicyParams<f32>,
    seg: SegModelParams<f32>,
    adapter: AdapterParams<f32>,
    /// Kept `(record index, mask)` pairs of earlier rounds, for cumulative training.
    history: Vec<(usize, Mask)>,
    reports: Vec<RoundReport>,
    last: Option<RoundArtifacts>,
}

struct Driver<'a> {
    dataset: &'a DatasetManifest,
    config: &'a RunConfig,
    raw: Vec<FeatureMap<f32>>,
    run_id: String,
    observer: Option<&'a dyn RunObserver>,
}

/// Runs every round from scratch. With `oracle = None` the simulated oracle
/// from the config is used; human mode needs one passed in.
pub fn run(
    dataset: &DatasetManifest,
    config: &RunConfig,
    oracle: Option<&mut dyn PreferenceOracle>,
    observer: Option<&dyn RunObserver>,
) -> Result<RunOutcome> {
    config.validate()?;
    let driver = Driver::new(dataset, config, observer)?;
    let first = dataset.records.first().ok_or_else(|| Error::Config("empty dataset".into()))?;
    let dim = driver.raw[0].dim();
    let (agent, seg, adapter) = initial_parameters(config, first.channels(), dim);
    if let Some(out) = &config.output_dir {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_json(
            &out.join(RUN_FILE),
            &RunRecord {
                run_id: driver.run_id.clone(),
                manifest: dataset.source.clone(),
                config: config.clone(),
            },
        )?;
        driver.write_progress(0, "running", None, None)?;
    }
    let carry = Carry {
        agent,
        seg,
        adapter,
        history: Vec::new(),
        reports: Vec::new(),
        last: None,
    };
    driver.drive(1, carry, oracle)
}

/// Continues a persisted run after its last completed round.
pub fn resume(
    output_dir: &Path,
    oracle: Option<&mut dyn PreferenceOracle>,
    observer: Option<&dyn RunObserver>,
) -> Result<RunOutcome> {
    let record: RunRecord = read_json(&output_dir.join(RUN_FILE))?;
    let progress: Progress = read_json(&output_dir.join(PROGRESS_FILE))?;
    let manifest = record
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("run has no manifest path to resume from".into()))?;
    let dataset = load_manifest(manifest)?;
    let mut config = record.config.clone();
    config.output_dir = Some(output_dir.to_path_buf());
    let done = progress.completed_rounds;
    let driver = Driver::new(&dataset, &config, observer)?;
    let mut carry = if done == 0 {
        let (agent, seg, adapter) = initial_parameters(&config, dataset.records[0].channels(), driver.raw[0].dim());
        Carry {
            agent,
            seg,
            adapter,
            history: Vec::new(),
            reports: Vec::new(),
            last: None,
        }
    } else {
        let last = RoundArtifacts::load(&round_dir(output_dir, done))?;
        Carry {
            agent: last.agent.clone(),
            seg: last.seg.clone(),
            adapter: last.adapter.clone(),
            history: Vec::new(),
            reports: Vec::new(),
            last: Some(last),
        }
    };
    let index: BTreeMap<&str, usize> = dataset.records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    for round in 1..=done {
        let dir = round_dir(output_dir, round);
        carry.reports.push(load_report(&dir)?);
        if config.cumulative || config.adapter.cumulative {
            let a = RoundArtifacts::load(&dir)?;
            for id in &a.state.kept {
                carry.history.push((index[id.as_str()], a.pseudo[id].clone()));
            }
        }
    }
    info!("resuming `{}` after round {done}", record.run_id);
    driver.drive(done + 1, carry, oracle)
}

impl<'a> Driver<'a> {
    fn new(dataset: &'a DatasetManifest, config: &'a RunConfig, observer: Option<&'a dyn RunObserver>) -> Result<Self> {
        if dataset.records.is_empty() {
            return Err(Error::Config("empty dataset".into()));
        }
        if config.oracle_mode == OracleMode::Simulated {
            if let Some(r) = dataset.records.iter().find(|r| r.gt_mask.is_none()) {
                return Err(Error::MissingGroundTruth(r.id.clone()));
            }
        }
        Ok(Self {
            dataset,
            config,
            raw: load_raw_features(dataset)?,
            run_id: format!("{}-seed{}", dataset.name, config.seed),
            observer,
        })
    }

    fn write_progress(&self, completed: usize, state: &str, token: Option<String>, error: Option<String>) -> Result<()> {
        let Some(out) = &self.config.output_dir else { return Ok(()) };
        write_json(
            &out.join(PROGRESS_FILE),
            &Progress {
                run_id: self.run_id.clone(),
                state: state.into(),
                completed_rounds: completed,
                total_rounds: self.config.rounds,
                resume_token: token,
                error,
            },
        )
    }

    fn drive(&self, start: usize, mut carry: Carry, mut oracle: Option<&mut dyn PreferenceOracle>) -> Result<RunOutcome> {
        if oracle.is_none() && self.config.oracle_mode == OracleMode::Human {
            return Err(Error::Config("human mode needs a feedback oracle".into()));
        }
        if let Some(o) = self.observer {
            o.on_start(&self.run_id, self.config, self.dataset.records.len());
        }
        let mut builtin = simulated_oracle(self.config);
        let check = oracle.is_none() && self.config.flip_probability == 0.0;
        for round in start..=self.config.rounds {
            let source = oracle.as_ref().map_or(VerdictSource::Simulated, |o| o.source());
            let result = match oracle.as_deref_mut() {
                Some(o) => self.round(round, &mut carry, o, source, false),
                None => self.round(round, &mut carry, &mut builtin, source, check),
            };
            if let Err(e) = result {
                if let Some(o) = self.observer {
                    o.on_finish(true);
                }
                let Some(out) = &self.config.output_dir else { return Err(e) };
                let token = format!("{}#round={round}", out.display());
                self.write_progress(round - 1, "aborted", Some(token.clone()), Some(e.to_string()))?;
                return Err(Error::Aborted {
                    reason: e.to_string(),
                    token,
                });
            }
        }
        self.write_progress(self.config.rounds, "finished", None, None)?;
        if let Some(o) = self.observer {
            o.on_finish(false);
        }
        let last = carry
            .last
            .ok_or_else(|| Error::Config("no rounds left to run".into()))?;
        Ok(RunOutcome {
            run_id: self.run_id.clone(),
            reports: carry.reports,
            last,
        })
    }

    fn play_round(
        &self,
        round: usize,
        agent: &mut PolicyParams<f32>,
        adapted: &[FeatureMap<f32>],
        initial: &[Mask],
        oracle: &mut dyn PreferenceOracle,
        check: bool,
    ) -> Result<Vec<Interaction>> {
        let records = &self.dataset.records;
        let input = |i: usize| EpisodeInput {
            record: &records[i],
            image_index: i,
            features: &adapted[i],
            initial: initial[i].clone(),
            round,
        };
        let mut out = Vec::with_capacity(records.len());
        if self.config.parallel_episodes {
            let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(records.len());
            let frozen = &*agent;
            let mut slots: Vec<Option<Result<Interaction>>> = (0..records.len()).map(|_| None).collect();
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        let input = &input;
                        s.spawn(move || {
                            let mut oracle = simulated_oracle(self.config);
                            (w..records.len())
                                .step_by(workers)
                                .map(|i| {
                                    let settings = episode_settings(self.config, round, i, check);
                                    (i, interact(frozen, &input(i), &mut oracle, &settings, |_| {}))
                                })
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                for h in handles {
                    for (i, r) in h.join().expect("episode worker panicked") {
                        slots[i] = Some(r);
                    }
                }
            });
            for slot in slots {
                out.push(slot.expect("every episode ran")?);
            }
            for it in &mut out {
                apply_update(agent, it)?;
            }
        } else {
            for i in 0..records.len() {
                let settings = episode_settings(self.config, round, i, check);
                let mut it = interact(agent, &input(i), oracle, &settings, |ctx| {
                    if let Some(o) = self.observer {
                        o.on_step(ctx);
                    }
                })?;
                apply_update(agent, &mut it)?;
                out.push(it);
            }
        }
        Ok(out)
    }

    fn round(
        &self,
        round: usize,
        carry: &mut Carry,
        oracle: &mut dyn PreferenceOracle,
        source: VerdictSource,
        check: bool,
    ) -> Result<()> {
        let cfg = self.config;
        let ps = self.dataset.patch_size;
        let records = &self.dataset.records;
        let mut timing = Timing::default();

        let clock = Instant::now();
        let adapted = self
            .raw
            .iter()
            .map(|f| adapt_map(f, &carry.adapter))
            .collect::<Result<Vec<_>>>()?;
        let initial = adapted
            .iter()
            .map(|f| predict(&carry.seg, f, ps))
            .collect::<Result<Vec<_>>>()?;
        let interactions = self.play_round(round, &mut carry.agent, &adapted, &initial, oracle, check)?;
        timing.episodes_secs = clock.elapsed().as_secs_f64();

        let scores: Vec<(&str, f64)> = interactions
            .iter()
            .map(|it| (records[it.log.image_index].id.as_str(), it.log.quality(cfg.quality_proxy)))
            .collect();
        let kept = filter_top_k(&scores, cfg.top_k_percent);
        let current: Vec<(usize, Mask)> = kept.iter().map(|&i| (i, interactions[i].final_mask.clone())).collect();
        let before = carry.history.len();
        carry.history.extend(current.iter().cloned());
        let mut notes = Vec::new();

        // adapter before learner: the learner reads adapted features, so it
        // has to be fit on the features it will see next round
        let clock = Instant::now();
        let adapter_set: Vec<(FeatureMap<f32>, Mask)> =
            if cfg.adapter.cumulative { &carry.history[..] } else { &carry.history[before..] }
                .iter()
                .map(|(i, m)| (self.raw[*i].clone(), m.clone()))
                .collect();
        let (adapter, adapter_stats) = adapt_features(
            &carry.adapter,
            &adapter_set,
            cfg.adapter.steps_per_round,
            derive_seed(cfg.seed, &[TAG_ADAPTER, round as u64]),
        )?;
        timing.adapter_secs = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let seg_set: Vec<(FeatureMap<f32>, Mask)> =
            if cfg.cumulative { &carry.history[..] } else { &carry.history[before..] }
                .iter()
                .map(|(i, m)| Ok((adapt_map(&self.raw[*i], &adapter)?, m.clone())))
                .collect::<Result<_>>()?;
        let (seg, seg_stats) = train(&carry.seg, &seg_set, derive_seed(cfg.seed, &[TAG_SEG, round as u64]))?;
        if seg_stats.rollbacks > 0 {
            notes.push(format!("segmentation training rolled back {} steps", seg_stats.rollbacks));
        }
        timing.seg_secs = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let learner = evaluate_learner(self.dataset, &self.raw, &seg, &adapter)?;
        let pseudo: BTreeMap<String, Mask> = interactions
            .iter()
            .map(|it| (records[it.log.image_index].id.clone(), it.final_mask.clone()))
            .collect();
        let state = RoundState {
            round,
            run_id: self.run_id.clone(),
            manifest: self.dataset.source.clone(),
            oracle: source,
            pseudo_labels: pseudo.keys().map(|id| (id.clone(), format!("pseudo/{id}.pgm"))).collect(),
            kept: kept.iter().map(|&i| records[i].id.clone()).collect(),
            episodes: interactions.into_iter().map(|it| it.log).collect(),
            training: TrainingLog {
                training_images: seg_set.len(),
                adapter: adapter_stats,
                seg: seg_stats,
                notes,
            },
            checkpoints: checkpoint_names(),
        };
        let report = build_report(&state, self.dataset, &pseudo, learner)?;
        timing.evaluation_secs = clock.elapsed().as_secs_f64();
        info!(
            "round {round}: learner dice {:?}, mean reward {:.3}",
            report.learner.as_ref().map(|l| l.dice.mean),
            report.rewards.mean_reward
        );

        carry.seg = seg;
        carry.adapter = adapter;
        let artifacts = RoundArtifacts {
            state,
            pseudo,
            agent: carry.agent.clone(),
            seg: carry.seg.clone(),
            adapter: carry.adapter.clone(),
        };
        carry.reports.push(report.clone());
        if let Some(out) = &cfg.output_dir {
            artifacts.save(&round_dir(out, round), &report, &timing)?;
            let csv = out.join("report.csv");
            fs::write(&csv, to_csv(&carry.reports)).map_err(|e| Error::io(&csv, e))?;
            self.write_progress(round, "running", Some(format!("{}#round={}", out.display(), round + 1)), None)?;
        }
        if let Some(o) = self.observer {
            o.on_round(&report);
        }
        carry.last = Some(artifacts);
        Ok(())
    }
}

/// Recomputes a persisted round's report from its directory alone.
pub fn eval_round(dir: &Path) -> Result<RoundReport> {
    let a = RoundArtifacts::load(dir)?;
    let manifest = a
        .state
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("round state names no manifest".into()))?;
    let dataset = load_manifest(manifest)?;
    let raw = load_raw_features(&dataset)?;
    let learner = evaluate_learner(&dataset, &raw, &a.seg, &a.adapter)?;
    build_report(&a.state, &dataset, &a.pseudo, learner)
}

/// Plays `round` with `policy` frozen, from the given learner state, using
/// the run's per-episode seeds and the simulated oracle.
pub fn evaluate_policy(
    dataset: &DatasetManifest,
    config: &RunConfig,
    policy: &PolicyParams<f32>,
    seg: &SegModelParams<f32>,
    adapter: &AdapterParams<f32>,
    round: usize,
) -> Result<RewardStats> {
    let raw = load_raw_features(dataset)?;
    let mut oracle = simulated_oracle(config);
    let mut logs = Vec::with_capacity(raw.len());
    for (i, (record, fm)) in dataset.records.iter().zip(&raw).enumerate() {
        let features = adapt_map(fm, adapter)?;
        let input = EpisodeInput {
            record,
            image_index: i,
            features: &features,
            initial: predict(seg, &features, dataset.patch_size)?,
            round,
        };
        let settings = episode_settings(config, round, i, false);
        logs.push(interact(policy, &input, &mut oracle, &settings, |_| {})?.log);
    }
    Ok(RewardStats::of(&logs))
}

/// Lists completed round directories of a run in order.
pub fn completed_rounds(output_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for round in 1.. {
        let dir = round_dir(output_dir, round);
        if !dir.join(super::state::STATE_FILE).exists() {
            break;
        }
        out.push(dir);
    }
    Ok(out)
}
