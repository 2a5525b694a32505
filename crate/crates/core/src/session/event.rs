use crate::allocator::{AllocationProposal, TaskKind};
use crate::env::AllocationAction;
use crate::hpm::IsaScore;
use serde::{Deserialize, Serialize};

use super::SessionConfig;

/// Version of the event log and wire schema.
pub const SCHEMA_VERSION: u32 = 1;

pub const HIT_DELTA: i32 = 1;
pub const PENALTY_DELTA: i32 = -3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Abnormal,
    Normal,
}

impl ObjectKind {
    pub fn score_delta(self) -> i32 {
        match self {
            ObjectKind::Abnormal => HIT_DELTA,
            ObjectKind::Normal => PENALTY_DELTA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurveyKind {
    #[serde(rename = "SAM")]
    Sam,
    #[serde(rename = "ISA")]
    Isa,
    #[serde(rename = "NASA-TLX")]
    NasaTlx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickRejection {
    NotInSet,
    ViewNotAssigned,
    UnknownOperator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveSource {
    Simulated,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    SessionStart {
        session_id: String,
        schema_version: u32,
        seed: u64,
        config: Box<SessionConfig>,
    },
    TaskStart {
        task: TaskKind,
        task_index: usize,
    },
    SetStart {
        set: usize,
        assignment: AllocationAction,
    },
    ObjectSpawn {
        view: usize,
        object_id: u64,
        kind: ObjectKind,
    },
    ObjectExpire {
        view: usize,
        object_id: u64,
    },
    Click {
        operator: usize,
        view: usize,
        object_id: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rejected: Option<ClickRejection>,
    },
    ScoreUpdate {
        operator: usize,
        delta: i32,
        team_total: i64,
    },
    IsaPrompt {
        operator: usize,
        deadline_t: u64,
    },
    IsaResponse {
        operator: usize,
        score: IsaScore,
        defaulted: bool,
    },
    ObjectiveSample {
        operator: usize,
        s_obj: f64,
        source: ObjectiveSource,
    },
    ApprovalPrompt {
        operator: usize,
        proposal: AllocationProposal,
        deadline_t: u64,
    },
    ApprovalDecision {
        operator: usize,
        accept: bool,
        timed_out: bool,
    },
    ReallocationApplied {
        action: AllocationAction,
        changed: bool,
    },
    SetEnd {
        set: usize,
    },
    SurveySubmitted {
        operator: Option<usize>,
        kind: SurveyKind,
        payload: serde_json::Value,
    },
    TaskEnd {
        task: TaskKind,
    },
    SessionEnd {
        team_total: i64,
    },
}

/// One line of the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    /// Milliseconds since the session was created.
    pub t: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreLedger {
    pub team_total: i64,
    pub per_operator: Vec<i64>,
    /// Indexed by global set number.
    pub per_set: Vec<i64>,
    pub abnormal_hits: u64,
    pub normal_hits: u64,
    pub misses: u64,
}

impl ScoreLedger {
    pub fn new(n_operators: usize, n_sets: usize) -> Self {
        Self {
            per_operator: vec![0; n_operators],
            per_set: vec![0; n_sets],
            ..Self::default()
        }
    }

    pub fn record(&mut self, operator: usize, set: usize, kind: ObjectKind) -> i32 {
        let delta = kind.score_delta();
        self.team_total += i64::from(delta);
        self.per_operator[operator] += i64::from(delta);
        self.per_set[set] += i64::from(delta);
        match kind {
            ObjectKind::Abnormal => self.abnormal_hits += 1,
            ObjectKind::Normal => self.normal_hits += 1,
        }
        delta
    }
}
