use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clicking_agent::{DEFAULT_POLICY_LR, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};
use crate::feature_provider::{DEFAULT_ADAPTER_LR, DEFAULT_MARGIN};
use crate::oracle::TimeoutPolicy;
use crate::propagation::{ConflictRule, PropagationConfig};
use crate::seg_model::SegTrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityProxy {
    /// Fraction of the episode's steps judged better.
    MeanAcceptedReward,
    /// Dice between the final pseudo-mask and the learner's initial prediction.
    ModelAgreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Simulated,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    /// Moving-average reward baseline; off reproduces vanilla REINFORCE.
    pub reward_baseline: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            learning_rate: DEFAULT_POLICY_LR,
            reward_baseline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub learning_rate: f64,
    pub margin: f64,
    pub steps_per_round: usize,
    /// Adapt on every round's kept pseudo-labels instead of the current round's.
    pub cumulative: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_ADAPTER_LR,
            margin: DEFAULT_MARGIN,
            steps_per_round: 200,
            cumulative: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanConfig {
    pub timeout_secs: u64,
    pub on_timeout: TimeoutPolicy,
}

impl Default for HumanConfig {
    fn default() -> Self {
        Self {
            timeout_secs: 3600,
            on_timeout: TimeoutPolicy::SkipStep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rounds: usize,
    pub steps_per_image: usize,
    pub tau: f64,
    pub conflict_rule: ConflictRule,
    /// Fraction in (0, 1] of pseudo-labels kept for training.
    pub top_k_percent: f64,
    pub quality_proxy: QualityProxy,
    pub oracle_mode: OracleMode,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Train the learner on every round's kept pseudo-labels, not just this round's.
    pub cumulative: bool,
    /// Simulated mode only: run episodes concurrently with a frozen agent and
    /// apply the per-image updates in manifest order at round end.
    pub parallel_episodes: bool,
    pub flip_probability: f64,
    pub agent: AgentConfig,
    pub seg: SegTrainConfig,
    pub adapter: AdapterConfig,
    pub human: HumanConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            steps_per_image: 5,
            tau: 0.8,
            conflict_rule: ConflictRule::MaxSimilarityWins,
            top_k_percent: 1.0,
            quality_proxy: QualityProxy::MeanAcceptedReward,
            oracle_mode: OracleMode::Simulated,
            seed: 0,
            output_dir: None,
            cumulative: false,
            parallel_episodes: false,
            flip_probability: 0.0,
            agent: AgentConfig::default(),
            seg: SegTrainConfig::default(),
            adapter: AdapterConfig::default(),
            human: HumanConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.rounds < 1 || self.steps_per_image < 1 {
            return bad("rounds and steps_per_image must be at least 1");
        }
        if !(self.top_k_percent > 0.0 && self.top_k_percent <= 1.0) {
            return bad("top_k_percent must lie in (0, 1]");
        }
        if !(self.agent.temperature > 0.0) || !(self.agent.learning_rate >= 0.0) {
            return bad("agent temperature must be positive and learning_rate non-negative");
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip_probability must lie in [0, 1]");
        }
        if self.seg.batch_size == 0 {
            return bad("seg.batch_size must be positive");
        }
        if self.parallel_episodes && self.oracle_mode == OracleMode::Human {
            return bad("parallel_episodes is only available in simulated mode");
        }
        self.propagation().validate()
    }

    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            tau: self.tau,
            conflict_rule: self.conflict_rule,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}
