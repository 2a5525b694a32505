//! Operator WebSocket messages. Every message is a JSON object with a `type`
//! tag and a millisecond `t` on the server clock. Client `t` values are
//! accepted but ignored.

use awac_core::env::AllocationAction;
use awac_core::session::{owner_of, views_of, LogRecord, ObjectKind, SessionEvent, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        t: u64,
        schema_version: u32,
        session_id: String,
        operator: usize,
        team_total: i64,
    },
    SetStart {
        t: u64,
        set: usize,
    },
    ViewGrid {
        t: u64,
        views: Vec<usize>,
        assignment: AllocationAction,
    },
    ObjectSpawn {
        t: u64,
        view: usize,
        object_id: u64,
        sprite: Sprite,
    },
    ObjectExpire {
        t: u64,
        view: usize,
        object_id: u64,
    },
    /// `delta` is present only for the operator who clicked.
    ScoreUpdate {
        t: u64,
        team_total: i64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<i32>,
    },
    IsaPrompt {
        t: u64,
        deadline_t: u64,
    },
    ApprovalPrompt {
        t: u64,
        deadline_t: u64,
        current: AllocationAction,
        proposed: AllocationAction,
    },
    SetEnd {
        t: u64,
        set: usize,
    },
    TaskEnd {
        t: u64,
    },
    SessionEnd {
        t: u64,
        team_total: i64,
    },
    Error {
        t: u64,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sprite {
    Skeleton,
    Crewmate,
}

impl From<ObjectKind> for Sprite {
    fn from(k: ObjectKind) -> Self {
        match k {
            ObjectKind::Abnormal => Sprite::Skeleton,
            ObjectKind::Normal => Sprite::Crewmate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Click {
        view: usize,
        #[serde(default)]
        object_id: Option<u64>,
        #[serde(default)]
        t: Option<u64>,
    },
    IsaResponse {
        score: i32,
        #[serde(default)]
        t: Option<u64>,
    },
    ApprovalDecision {
        accept: bool,
        #[serde(default)]
        t: Option<u64>,
    },
}

/// Turns the session log into one operator's message stream.
#[derive(Debug, Clone)]
pub struct OperatorView {
    operator: usize,
    assignment: Option<AllocationAction>,
    live: BTreeMap<u64, ServerMessage>,
    prompt: Option<ServerMessage>,
}

impl OperatorView {
    pub fn new(operator: usize) -> Self {
        Self {
            operator,
            assignment: None,
            live: BTreeMap::new(),
            prompt: None,
        }
    }

    /// Messages that rebuild the operator's screen after (re)connecting.
    pub fn resume(&self, t: u64) -> Vec<ServerMessage> {
        let mut out: Vec<ServerMessage> = self.grid(t).into_iter().collect();
        out.extend(self.live.values().cloned());
        out.extend(self.prompt.clone());
        out
    }

    fn grid(&self, t: u64) -> Option<ServerMessage> {
        let a = self.assignment.as_ref()?;
        Some(ServerMessage::ViewGrid {
            t,
            views: views_of(a, self.operator).collect(),
            assignment: a.clone(),
        })
    }

    fn mine(&self, view: usize) -> bool {
        self.assignment
            .as_ref()
            .is_some_and(|a| owner_of(a, view) == Some(self.operator))
    }

    /// Messages for this operator caused by one log record.
    pub fn translate(&mut self, rec: &LogRecord) -> Vec<ServerMessage> {
        let out = self.translate_inner(rec);
        for m in &out {
            match m {
                ServerMessage::ObjectSpawn { object_id, .. } => {
                    self.live.insert(*object_id, m.clone());
                }
                ServerMessage::ObjectExpire { object_id, .. } => {
                    self.live.remove(object_id);
                }
                ServerMessage::IsaPrompt { .. } | ServerMessage::ApprovalPrompt { .. } => self.prompt = Some(m.clone()),
                ServerMessage::SetStart { .. } | ServerMessage::SetEnd { .. } => {
                    self.live.clear();
                    self.prompt = None;
                }
                _ => {}
            }
        }
        match &rec.event {
            SessionEvent::IsaResponse { operator, .. } | SessionEvent::ApprovalDecision { operator, .. }
                if *operator == self.operator =>
            {
                self.prompt = None;
            }
            SessionEvent::ReallocationApplied { .. } => self.prompt = None,
            _ => {}
        }
        out
    }

    fn translate_inner(&mut self, rec: &LogRecord) -> Vec<ServerMessage> {
        let t = rec.t;
        let me = self.operator;
        match &rec.event {
            SessionEvent::SetStart { set, assignment } => {
                self.assignment = Some(assignment.clone());
                let mut out = vec![ServerMessage::SetStart { t, set: *set }];
                out.extend(self.grid(t));
                out
            }
            SessionEvent::ReallocationApplied { action, .. } => {
                self.assignment = Some(action.clone());
                self.grid(t).into_iter().collect()
            }
            SessionEvent::ObjectSpawn { view, object_id, kind } if self.mine(*view) => {
                vec![ServerMessage::ObjectSpawn {
                    t,
                    view: *view,
                    object_id: *object_id,
                    sprite: (*kind).into(),
                }]
            }
            SessionEvent::ObjectExpire { view, object_id } if self.mine(*view) => {
                vec![ServerMessage::ObjectExpire {
                    t,
                    view: *view,
                    object_id: *object_id,
                }]
            }
            SessionEvent::ScoreUpdate {
                operator,
                delta,
                team_total,
            } => vec![ServerMessage::ScoreUpdate {
                t,
                team_total: *team_total,
                delta: (*operator == me).then_some(*delta),
            }],
            SessionEvent::Click {
                view,
                object_id: Some(id),
                rejected: None,
                ..
            } if self.live.contains_key(id) => vec![ServerMessage::ObjectExpire {
                t,
                view: *view,
                object_id: *id,
            }],
            SessionEvent::Click {
                operator,
                rejected: Some(why),
                view,
                ..
            } if *operator == me => vec![ServerMessage::Error {
                t,
                message: format!("click on view {view} rejected: {why:?}"),
            }],
            SessionEvent::IsaPrompt { operator, deadline_t } if *operator == me => {
                vec![ServerMessage::IsaPrompt {
                    t,
                    deadline_t: *deadline_t,
                }]
            }
            SessionEvent::ApprovalPrompt {
                operator,
                proposal,
                deadline_t,
            } if *operator == me => vec![ServerMessage::ApprovalPrompt {
                t,
                deadline_t: *deadline_t,
                current: proposal.current.clone(),
                proposed: proposal.proposed.clone(),
            }],
            SessionEvent::SetEnd { set } => vec![ServerMessage::SetEnd { t, set: *set }],
            SessionEvent::TaskEnd { .. } => vec![ServerMessage::TaskEnd { t }],
            SessionEvent::SessionEnd { team_total } => vec![ServerMessage::SessionEnd {
                t,
                team_total: *team_total,
            }],
            _ => Vec::new(),
        }
    }
}

pub fn hello(t: u64, session_id: &str, operator: usize, team_total: i64) -> ServerMessage {
    ServerMessage::Hello {
        t,
        schema_version: SCHEMA_VERSION,
        session_id: session_id.to_string(),
        operator,
        team_total,
    }
}
