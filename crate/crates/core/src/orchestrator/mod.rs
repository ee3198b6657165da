//! The outer loop: per round, interactive episodes over every image produce
//! pseudo-masks, the best are kept, the feature adapter and then the
//! segmentation learner are fitted on them, and everything is persisted.

mod config;
mod episode;
mod filter;
mod report;
mod run;
mod state;

pub use config::{AdapterConfig, AgentConfig, HumanConfig, OracleMode, QualityProxy, RunConfig};
pub use episode::{apply_update, interact, run_episode, EpisodeInput, EpisodeLog, EpisodeSettings, Interaction, StepLog};
pub use filter::filter_top_k;
pub use report::{
    build_report, csv_row, evaluate_learner, histogram, interactive_summary, to_csv, EvalSummary, InteractiveSummary,
    RewardStats, RoundReport, TrainingSummary, CSV_HEADER, HISTOGRAM_BINS,
};
pub use run::{
    completed_rounds, derive_seed, eval_round, evaluate_policy, initial_parameters, load_raw_features, resume, run,
    Progress, RunObserver, RunOutcome, RunRecord, PROGRESS_FILE, RUN_FILE,
};
pub use state::{load_report, round_dir, RoundArtifacts, RoundState, Timing, TrainingLog};
