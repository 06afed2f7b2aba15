//! Task board shared between a blocking [`HumanOracle`] and an annotation frontend.
//!
//! The learner thread posts a batch and waits. Annotators lease tasks, which
//! fall back to open when the lease runs out, and submit tags, which are
//! BIO-checked before being accepted. Once every task of the batch is
//! submitted the learner wakes up with the tags in request order.
//!
//! Task ids are sentence ids. With a persistence path, the board rewrites a
//! JSON file after each change, and a restarted board merges a reposted
//! batch with the submissions found there.

use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{LabelRequest, Oracle};
use crate::corpus::{validate_bio, Tag};
use crate::error::{Error, Result};

pub const DEFAULT_LEASE: Duration = Duration::from_secs(600);

/// Time source for lease expiry.
pub trait Clock: Send + Sync {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(Mutex<Duration>);

impl ManualClock {
    pub fn advance(&self, by: Duration) {
        *self.0.lock().unwrap() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.0.lock().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Leased { until_ms: u64 },
    Submitted { tags: Vec<Tag> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub request: LabelRequest,
    #[serde(flatten)]
    pub status: TaskStatus,
}

/// What an annotator sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: usize,
    pub sentence_id: usize,
    pub tokens: Vec<String>,
    pub proposed: Vec<Tag>,
    pub token_probabilities: Vec<f64>,
    /// Position of the least certain proposed tag.
    pub weakest_position: usize,
    pub status: String,
}

impl TaskView {
    fn new(task: &Task) -> Self {
        let r = &task.request;
        let weakest_position = r
            .token_probabilities
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        let status = match task.status {
            TaskStatus::Open => "open",
            TaskStatus::Leased { .. } => "leased",
            TaskStatus::Submitted { .. } => "submitted",
        };
        Self {
            task_id: r.id,
            sentence_id: r.id,
            tokens: r.tokens.clone(),
            proposed: r.proposed.clone(),
            token_probabilities: r.token_probabilities.clone(),
            weakest_position,
            status: status.into(),
        }
    }
}

/// What the learner side is doing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Training,
    Labeling,
    Finished,
    Failed,
}

/// Why a submission was refused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubmitError {
    NotFound,
    AlreadySubmitted,
    Invalid { position: usize, reason: String },
}

impl std::fmt::Display for SubmitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubmitError::NotFound => f.write_str("unknown task"),
            SubmitError::AlreadySubmitted => f.write_str("task already submitted"),
            SubmitError::Invalid { position, reason } => write!(f, "position {position}: {reason}"),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Board {
    tasks: Vec<Task>,
    labels: Vec<Tag>,
    #[serde(skip)]
    phase: Phase,
    #[serde(skip)]
    closed: bool,
}

impl Board {
    fn counts(&self) -> (usize, usize) {
        let submitted = self
            .tasks
            .iter()
            .filter(|t| matches!(t.status, TaskStatus::Submitted { .. }))
            .count();
        (self.tasks.len() - submitted, submitted)
    }
}

pub struct TaskBoard {
    board: Mutex<Board>,
    changed: Condvar,
    clock: Arc<dyn Clock>,
    lease: Duration,
    persist: Option<PathBuf>,
}

impl std::fmt::Debug for TaskBoard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskBoard")
            .field("board", &self.board)
            .field("lease", &self.lease)
            .field("persist", &self.persist)
            .finish()
    }
}

impl TaskBoard {
    /// Loads persisted tasks from `persist` when the file exists.
    pub fn new(clock: Arc<dyn Clock>, lease: Duration, persist: Option<PathBuf>) -> Result<Self> {
        let board = match &persist {
            Some(p) if p.exists() => serde_json::from_slice(&std::fs::read(p)?)?,
            _ => Board::default(),
        };
        Ok(Self {
            board: Mutex::new(board),
            changed: Condvar::new(),
            clock,
            lease,
            persist,
        })
    }

    fn lock(&self) -> MutexGuard<'_, Board> {
        self.board.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn save(&self, board: &Board) -> Result<()> {
        if let Some(p) = &self.persist {
            let tmp = p.with_extension("tmp");
            std::fs::write(&tmp, serde_json::to_vec(board)?)?;
            std::fs::rename(&tmp, p)?;
        }
        Ok(())
    }

    fn now_ms(&self) -> u64 {
        self.clock.now().as_millis() as u64
    }

    /// Replaces the current batch. Submissions already on the board (for
    /// example from before a restart) are kept for sentences in the new batch.
    pub fn post_batch(&self, requests: &[LabelRequest], labels: &[Tag]) -> Result<()> {
        let mut b = self.lock();
        let old = std::mem::take(&mut b.tasks);
        b.tasks = requests
            .iter()
            .map(|r| {
                let status = old
                    .iter()
                    .find(|t| t.request.id == r.id && t.request.tokens == r.tokens)
                    .map(|t| &t.status)
                    .filter(|s| matches!(s, TaskStatus::Submitted { .. }))
                    .cloned()
                    .unwrap_or(TaskStatus::Open);
                Task {
                    request: r.clone(),
                    status,
                }
            })
            .collect();
        b.labels = labels.to_vec();
        b.phase = Phase::Labeling;
        self.save(&b)?;
        self.changed.notify_all();
        Ok(())
    }

    /// Leases the first open (or lease-expired) task. `None` outside the labeling phase.
    pub fn next_task(&self) -> Option<TaskView> {
        let mut b = self.lock();
        if b.phase != Phase::Labeling || b.closed {
            return None;
        }
        let now = self.now_ms();
        let until_ms = now + self.lease.as_millis() as u64;
        let task = b.tasks.iter_mut().find(|t| match t.status {
            TaskStatus::Open => true,
            TaskStatus::Leased { until_ms } => until_ms <= now,
            TaskStatus::Submitted { .. } => false,
        })?;
        task.status = TaskStatus::Leased { until_ms };
        let view = TaskView::new(task);
        // Leases are not worth failing a request over if the disk write fails.
        let _ = self.save(&b);
        Some(view)
    }

    pub fn task(&self, id: usize) -> Option<TaskView> {
        self.lock()
            .tasks
            .iter()
            .find(|t| t.request.id == id)
            .map(TaskView::new)
    }

    /// Accepts `tags` for task `id` if they align with the tokens, use known
    /// labels, and form valid BIO.
    pub fn submit(&self, id: usize, tags: Vec<Tag>) -> std::result::Result<(), SubmitError> {
        let mut b = self.lock();
        let labels = b.labels.clone();
        let task = b
            .tasks
            .iter_mut()
            .find(|t| t.request.id == id)
            .ok_or(SubmitError::NotFound)?;
        if matches!(task.status, TaskStatus::Submitted { .. }) {
            return Err(SubmitError::AlreadySubmitted);
        }
        let n = task.request.tokens.len();
        if tags.len() != n {
            return Err(SubmitError::Invalid {
                position: tags.len().min(n),
                reason: format!("{} tags for {n} tokens", tags.len()),
            });
        }
        if let Some(pos) = tags.iter().position(|t| !labels.contains(t)) {
            return Err(SubmitError::Invalid {
                position: pos,
                reason: format!("unknown label {}", tags[pos]),
            });
        }
        validate_bio(&tags).map_err(|v| SubmitError::Invalid {
            position: v.position,
            reason: v.message,
        })?;
        task.status = TaskStatus::Submitted { tags };
        if let Err(e) = self.save(&b) {
            eprintln!("warning: could not persist task board: {e}");
        }
        self.changed.notify_all();
        Ok(())
    }

    /// Blocks until every task of the batch is submitted, then returns the
    /// tags in batch order and switches to the training phase.
    pub fn wait_for_batch(&self) -> Result<Vec<Vec<Tag>>> {
        let mut b = self.lock();
        loop {
            if b.closed {
                return Err(Error::SessionClosed);
            }
            if b.phase == Phase::Labeling && b.counts().0 == 0 {
                b.phase = Phase::Training;
                return Ok(b
                    .tasks
                    .iter()
                    .map(|t| match &t.status {
                        TaskStatus::Submitted { tags } => tags.clone(),
                        _ => unreachable!("all submitted"),
                    })
                    .collect());
            }
            b = self.changed.wait(b).unwrap_or_else(|e| e.into_inner());
        }
    }

    pub fn set_phase(&self, phase: Phase) {
        self.lock().phase = phase;
        self.changed.notify_all();
    }

    pub fn phase(&self) -> Phase {
        self.lock().phase
    }

    /// `(not yet submitted, submitted)` in the current batch.
    pub fn counts(&self) -> (usize, usize) {
        self.lock().counts()
    }

    /// Wakes any waiting learner with [`Error::SessionClosed`].
    pub fn close(&self) {
        self.lock().closed = true;
        self.changed.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }
}

/// Oracle backed by a [`TaskBoard`].
#[derive(Debug, Clone)]
pub struct HumanOracle {
    board: Arc<TaskBoard>,
    labels: Vec<Tag>,
}

impl HumanOracle {
    /// `labels` is the label vocabulary submissions must stay within.
    pub fn new(board: Arc<TaskBoard>, labels: Vec<Tag>) -> Self {
        Self { board, labels }
    }
}

impl Oracle for HumanOracle {
    fn label(&mut self, requests: &[LabelRequest]) -> Result<Vec<Vec<Tag>>> {
        self.board.post_batch(requests, &self.labels)?;
        self.board.wait_for_batch()
    }
}
