use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::episode::EpisodeLog;
use super::report::{to_csv, RoundReport};
use crate::checkpoint::Checkpoint;
use crate::clicking_agent::PolicyParams;
use crate::error::{Error, Result};
use crate::feature_provider::{write_json, AdaptStats, AdapterParams};
use crate::oracle::VerdictSource;
use crate::seg_model::{SegModelParams, SegTrainStats};
use crate::types::{pnm, Mask};

pub const STATE_FILE: &str = "state.json";
pub const AGENT_CKPT: &str = "agent.ckpt";
pub const SEG_CKPT: &str = "seg.ckpt";
pub const ADAPTER_CKPT: &str = "adapter.ckpt";

pub fn round_dir(output_dir: &Path, round: usize) -> PathBuf {
    output_dir.join(format!("round_{round:03}"))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub training_images: usize,
    pub adapter: AdaptStats,
    pub seg: SegTrainStats,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Everything a finished round leaves behind apart from the binary files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    /// 1-based.
    pub round: usize,
    pub run_id: String,
    pub manifest: Option<PathBuf>,
    pub oracle: VerdictSource,
    /// Record id to pseudo-mask file, relative to the round directory.
    pub pseudo_labels: BTreeMap<String, String>,
    /// Ids that passed the top-K filter, in manifest order.
    pub kept: Vec<String>,
    pub episodes: Vec<EpisodeLog>,
    pub training: TrainingLog,
    pub checkpoints: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub episodes_secs: f64,
    pub adapter_secs: f64,
    pub seg_secs: f64,
    pub evaluation_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundArtifacts {
    pub state: RoundState,
    pub pseudo: BTreeMap<String, Mask>,
    /// Parameters at the end of the round.
    pub agent: PolicyParams<f32>,
    pub seg: SegModelParams<f32>,
    pub adapter: AdapterParams<f32>,
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

impl RoundArtifacts {
    pub fn save(&self, dir: &Path, report: &RoundReport, timing: &Timing) -> Result<()> {
        mkdir(&dir.join("pseudo"))?;
        for (id, file) in &self.state.pseudo_labels {
            let mask = self.pseudo.get(id).ok_or_else(|| {
                Error::Invariant(format!("pseudo-label for `{id}` listed but missing"))
            })?;
            pnm::write_mask(&dir.join(file), mask)?;
        }
        Checkpoint::from(&self.agent).save(&dir.join(AGENT_CKPT))?;
        Checkpoint::from(&self.seg).save(&dir.join(SEG_CKPT))?;
        Checkpoint::from(&self.adapter).save(&dir.join(ADAPTER_CKPT))?;
        write_json(&dir.join("report.json"), report)?;
        let csv = dir.join("report.csv");
        fs::write(&csv, to_csv(std::slice::from_ref(report))).map_err(|e| Error::io(&csv, e))?;
        write_json(&dir.join("timing.json"), timing)?;
        // written last: a round directory counts as complete once this exists
        write_json(&dir.join(STATE_FILE), &self.state)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let state: RoundState = read_json(&dir.join(STATE_FILE))?;
        let mut pseudo = BTreeMap::new();
        for (id, file) in &state.pseudo_labels {
            pseudo.insert(id.clone(), pnm::read_mask(&dir.join(file))?);
        }
        let ckpt = |name: &str| state.checkpoints.get(name.trim_end_matches(".ckpt")).map(|f| dir.join(f)).unwrap_or_else(|| dir.join(name));
        let agent = PolicyParams::try_from(&Checkpoint::load(&ckpt(AGENT_CKPT))?)?;
        let seg = SegModelParams::try_from(&Checkpoint::load(&ckpt(SEG_CKPT))?)?;
        let adapter = AdapterParams::try_from(&Checkpoint::load(&ckpt(ADAPTER_CKPT))?)?;
        Ok(Self {
            state,
            pseudo,
            agent,
            seg,
            adapter,
        })
    }
}

pub fn load_report(dir: &Path) -> Result<RoundReport> {
    read_json(&dir.join("report.json"))
}

pub(crate) fn checkpoint_names() -> BTreeMap<String, String> {
    [AGENT_CKPT, SEG_CKPT, ADAPTER_CKPT]
        .into_iter()
        .map(|n| (n.trim_end_matches(".ckpt").to_string(), n.to_string()))
        .collect()
}
