//! Rendezvous between the engine thread and a human reviewer.
//!
//! The engine posts one comparison at a time and blocks until a verdict
//! arrives or its timeout passes; reviewer-facing callers poll for the
//! pending comparison and submit verdicts by comparison id. Every mutation
//! goes through one mutex, and verdicts are recorded at most once per id.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::StepContext;
use crate::error::{Error, Result};
use crate::types::{pnm, Mask, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HumanVerdict {
    Better,
    Worse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    AwaitingVerdict,
    Finished,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub record_id: String,
    pub image: Tensor<f32>,
    pub mask_before: Mask,
    pub mask_after: Mask,
    pub context: StepContext,
}

/// Wire form of a pending comparison; images and masks are base64 PGM/PPM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonPayload {
    pub comparison_id: String,
    pub record_id: String,
    pub image: String,
    pub image_format: String,
    pub mask_before: String,
    pub mask_after: String,
    pub round: usize,
    pub step: usize,
    pub image_index: usize,
}

impl ComparisonPayload {
    fn from_comparison(id: &str, c: &Comparison) -> Result<Self> {
        let fmt = if c.image.dims()[0] == 3 { "ppm" } else { "pgm" };
        Ok(Self {
            comparison_id: id.to_string(),
            record_id: c.record_id.clone(),
            image: STANDARD.encode(pnm::encode_image(&c.image)?),
            image_format: fmt.into(),
            mask_before: STANDARD.encode(pnm::encode_mask(&c.mask_before)),
            mask_after: STANDARD.encode(pnm::encode_mask(&c.mask_after)),
            round: c.context.round,
            step: c.context.step,
            image_index: c.context.image_index,
        })
    }

    pub fn decode_masks(&self) -> Result<(Mask, Mask)> {
        let dec = |s: &str| {
            STANDARD
                .decode(s)
                .map_err(|e| Error::format("base64 mask", e.to_string()))
                .and_then(|b| pnm::decode_mask(&b))
        };
        Ok((dec(&self.mask_before)?, dec(&self.mask_after)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextComparison {
    AwaitingVerdict { comparison: ComparisonPayload },
    Idle,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitOutcome {
    Accepted(HumanVerdict),
    /// Already answered; carries the first verdict, engine not advanced.
    Duplicate(HumanVerdict),
    /// Timed out before an answer arrived.
    Expired,
    /// Never issued.
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunProgress {
    pub run_id: String,
    pub state: String,
    pub round: usize,
    pub total_rounds: usize,
    pub image_index: usize,
    pub total_images: usize,
    pub step: usize,
    pub steps_per_image: usize,
    /// `(round, mean end-of-round Dice if known, mean reward)`.
    pub completed_rounds: Vec<(usize, Option<f64>, f64)>,
}

struct Pending {
    id: String,
    comparison: Comparison,
    verdict: Option<HumanVerdict>,
}

struct HubState {
    status: SessionStatus,
    pending: Option<Pending>,
    answered: BTreeMap<String, HumanVerdict>,
    expired: BTreeSet<String>,
    next_seq: u64,
    progress: RunProgress,
}

pub struct FeedbackHub {
    session_id: String,
    state: Mutex<HubState>,
    changed: Condvar,
}

impl FeedbackHub {
    pub fn new(run_id: &str, session_id: &str) -> Self {
        Self {
            session_id: session_id.to_string(),
            state: Mutex::new(HubState {
                status: SessionStatus::Idle,
                pending: None,
                answered: BTreeMap::new(),
                expired: BTreeSet::new(),
                next_seq: 0,
                progress: RunProgress {
                    run_id: run_id.to_string(),
                    state: "starting".into(),
                    ..RunProgress::default()
                },
            }),
            changed: Condvar::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    fn lock(&self) -> MutexGuard<'_, HubState> {
        // a panicking holder cannot leave the state half-written
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn status(&self) -> SessionStatus {
        self.lock().status
    }

    pub fn progress(&self) -> RunProgress {
        self.lock().progress.clone()
    }

    pub fn set_progress(&self, progress: RunProgress) {
        self.lock().progress = progress;
    }

    pub fn verdict_count(&self) -> usize {
        self.lock().answered.len()
    }

    /// Marks the session finished and wakes every waiter.
    pub fn finish(&self) {
        let mut st = self.lock();
        st.status = SessionStatus::Finished;
        st.pending = None;
        self.changed.notify_all();
    }

    /// Engine side: posts a comparison and waits for its verdict.
    /// `Ok(None)` on timeout; the comparison id then expires.
    pub fn request_verdict(&self, comparison: Comparison, timeout: Duration) -> Result<Option<HumanVerdict>> {
        let mut st = self.lock();
        if st.status == SessionStatus::Finished {
            return Err(Error::Session("session already finished".into()));
        }
        if st.pending.is_some() {
            return Err(Error::Session("a comparison is already pending".into()));
        }
        st.next_seq += 1;
        let id = format!("c{:06}", st.next_seq);
        st.pending = Some(Pending {
            id: id.clone(),
            comparison,
            verdict: None,
        });
        st.status = SessionStatus::AwaitingVerdict;
        self.changed.notify_all();

        let deadline = Instant::now() + timeout;
        loop {
            match st.pending.as_ref() {
                Some(p) if p.id == id => {
                    if let Some(v) = p.verdict {
                        st.pending = None;
                        st.status = SessionStatus::Idle;
                        self.changed.notify_all();
                        return Ok(Some(v));
                    }
                }
                _ => return Err(Error::Session("session closed while awaiting verdict".into())),
            }
            let now = Instant::now();
            if now >= deadline {
                st.pending = None;
                st.expired.insert(id);
                st.status = SessionStatus::Idle;
                self.changed.notify_all();
                return Ok(None);
            }
            st = self
                .changed
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    fn check_session(&self, session: &str) -> Result<()> {
        if session != self.session_id {
            return Err(Error::Session(format!("unknown session `{session}`")));
        }
        Ok(())
    }

    /// Reviewer side: the unanswered comparison, waiting up to `wait` for one.
    /// The same comparison is served again until it is answered.
    pub fn next_comparison(&self, session: &str, wait: Duration) -> Result<NextComparison> {
        self.check_session(session)?;
        let deadline = Instant::now() + wait;
        let mut st = self.lock();
        loop {
            if let Some(p) = st.pending.as_ref().filter(|p| p.verdict.is_none()) {
                return Ok(NextComparison::AwaitingVerdict {
                    comparison: ComparisonPayload::from_comparison(&p.id, &p.comparison)?,
                });
            }
            if st.status == SessionStatus::Finished {
                return Ok(NextComparison::Finished);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(NextComparison::Idle);
            }
            st = self
                .changed
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    /// Records a verdict once per comparison id.
    pub fn submit_verdict(&self, comparison_id: &str, verdict: HumanVerdict) -> SubmitOutcome {
        let mut st = self.lock();
        if let Some(&first) = st.answered.get(comparison_id) {
            return SubmitOutcome::Duplicate(first);
        }
        if st.expired.contains(comparison_id) {
            return SubmitOutcome::Expired;
        }
        match st.pending.as_mut() {
            Some(p) if p.id == comparison_id && p.verdict.is_none() => {
                p.verdict = Some(verdict);
                st.answered.insert(comparison_id.to_string(), verdict);
                self.changed.notify_all();
                SubmitOutcome::Accepted(verdict)
            }
            _ => SubmitOutcome::Unknown,
        }
    }
}
