use super::event::{LogRecord, ObjectKind, ScoreLedger, SessionEvent, SCHEMA_VERSION};
use super::{views_of, SessionConfig, SessionError};
use crate::allocator::TaskKind;
use crate::env::{AllocationAction, EnvConfig};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::BufRead;

/// What a log reconstructs to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub ledger: ScoreLedger,
    pub assignment: Option<AllocationAction>,
    pub sets_completed: usize,
    pub tasks_completed: usize,
    pub finished: bool,
    pub records: usize,
}

/// Parses and verifies a JSONL session log. Errors carry the 1-based line.
pub fn replay<R: BufRead>(reader: R) -> Result<ReplayOutcome, SessionError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SessionError::Replay {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(&line).map_err(|e| SessionError::Replay {
            line: i + 1,
            message: format!("malformed record: {e}"),
        })?;
        records.push((i + 1, rec));
    }
    run(records.iter().map(|(l, r)| (*l, r)))
}

/// Verifies in-memory records; line numbers are 1-based positions.
pub fn replay_records(records: &[LogRecord]) -> Result<ReplayOutcome, SessionError> {
    run(records.iter().enumerate().map(|(i, r)| (i + 1, r)))
}

struct State {
    config: SessionConfig,
    env: EnvConfig,
    out: ReplayOutcome,
    last_seq: u64,
    last_t: u64,
    task: Option<TaskKind>,
    task_index: usize,
    sets_in_task: usize,
    in_set: Option<usize>,
    live: HashMap<u64, (usize, ObjectKind)>,
    pending_score: Option<(usize, i32)>,
    open_isa: Vec<bool>,
    open_approval: Vec<bool>,
}

fn run<'a>(mut records: impl Iterator<Item = (usize, &'a LogRecord)>) -> Result<ReplayOutcome, SessionError> {
    let Some((line, first)) = records.next() else {
        return Ok(ReplayOutcome::default());
    };
    let fail = |line: usize, message: String| SessionError::Replay { line, message };
    let SessionEvent::SessionStart {
        schema_version, config, ..
    } = &first.event
    else {
        return Err(fail(line, "log must begin with session_start".into()));
    };
    if *schema_version != SCHEMA_VERSION {
        return Err(fail(line, format!("unsupported schema version {schema_version}")));
    }
    if first.seq != 0 {
        return Err(fail(line, "first record must have seq 0".into()));
    }
    config.validate().map_err(|e| fail(line, e.to_string()))?;
    let n = config.n_operators;
    let mut st = State {
        env: config.env_config(),
        out: ReplayOutcome {
            ledger: ScoreLedger::new(n, config.total_sets()),
            records: 1,
            ..ReplayOutcome::default()
        },
        config: (**config).clone(),
        last_seq: 0,
        last_t: first.t,
        task: None,
        task_index: 0,
        sets_in_task: 0,
        in_set: None,
        live: HashMap::new(),
        pending_score: None,
        open_isa: vec![false; n],
        open_approval: vec![false; n],
    };
    let mut last_line = line;
    for (line, rec) in records {
        st.apply(rec).map_err(|m| fail(line, m))?;
        last_line = line;
    }
    if st.pending_score.is_some() {
        return Err(fail(last_line, "scored click without a score_update".into()));
    }
    Ok(st.out)
}

impl State {
    fn operator(&self, k: usize) -> Result<(), String> {
        if k >= self.config.n_operators {
            return Err(format!("unknown operator {k}"));
        }
        Ok(())
    }

    fn between_sets(&self, what: &str) -> Result<(), String> {
        if self.in_set.is_some() {
            return Err(format!("{what} during an active set"));
        }
        Ok(())
    }

    fn apply(&mut self, rec: &LogRecord) -> Result<(), String> {
        if self.out.finished {
            return Err("record after session_end".into());
        }
        if rec.seq != self.last_seq + 1 {
            return Err(format!("seq {} follows {}", rec.seq, self.last_seq));
        }
        if rec.t < self.last_t {
            return Err(format!("timestamp {} ms precedes {} ms", rec.t, self.last_t));
        }
        self.last_seq = rec.seq;
        self.last_t = rec.t;
        self.out.records += 1;

        if let Some((op, delta)) = self.pending_score.take() {
            let SessionEvent::ScoreUpdate {
                operator,
                delta: d,
                team_total,
            } = &rec.event
            else {
                return Err("scored click not followed by score_update".into());
            };
            if *operator != op || *d != delta || *team_total != self.out.ledger.team_total {
                return Err(format!(
                    "score_update ({operator}, {d}, {team_total}) disagrees with replayed ({op}, {delta}, {})",
                    self.out.ledger.team_total
                ));
            }
            return Ok(());
        }

        match &rec.event {
            SessionEvent::SessionStart { .. } => return Err("duplicate session_start".into()),
            SessionEvent::TaskStart { task, task_index } => {
                self.between_sets("task_start")?;
                if self.task.is_some() {
                    return Err("task_start before task_end".into());
                }
                if *task_index != self.task_index || self.config.task_plan.get(*task_index) != Some(task) {
                    return Err(format!("task_start {task:?} #{task_index} is not next in the plan"));
                }
                self.task = Some(*task);
                self.sets_in_task = 0;
            }
            SessionEvent::SetStart { set, assignment } => {
                self.between_sets("set_start")?;
                if self.task.is_none() {
                    return Err("set_start outside a task".into());
                }
                if self.open_isa.iter().chain(&self.open_approval).any(|&o| o) {
                    return Err("set_start with an open prompt".into());
                }
                if *set != self.out.sets_completed || self.sets_in_task >= self.config.sets_per_task {
                    return Err(format!("unexpected set_start {set}"));
                }
                if !assignment.is_feasible(&self.env) {
                    return Err(format!("infeasible assignment {assignment}"));
                }
                if self.out.assignment.as_ref().is_some_and(|a| a != assignment) {
                    return Err("set_start assignment differs from last reallocation".into());
                }
                self.out.assignment = Some(assignment.clone());
                self.in_set = Some(*set);
            }
            SessionEvent::ObjectSpawn { view, object_id, kind } => {
                if self.in_set.is_none() {
                    return Err("object_spawn outside a set".into());
                }
                if *view >= self.config.total_views {
                    return Err(format!("view {view} out of range"));
                }
                if self.live.insert(*object_id, (*view, *kind)).is_some() {
                    return Err(format!("object {object_id} spawned twice"));
                }
            }
            SessionEvent::ObjectExpire { view, object_id } => match self.live.remove(object_id) {
                Some((v, _)) if v == *view => {}
                _ => return Err(format!("object {object_id} is not live in view {view}")),
            },
            SessionEvent::Click {
                operator,
                view,
                object_id,
                rejected,
            } => {
                if rejected.is_some() {
                    return Ok(());
                }
                self.operator(*operator)?;
                let Some(set) = self.in_set else {
                    return Err("accepted click outside a set".into());
                };
                let assignment = self.out.assignment.as_ref().expect("set has an assignment");
                if !views_of(assignment, *operator).contains(view) {
                    return Err(format!("view {view} not assigned to operator {operator}"));
                }
                match object_id.and_then(|id| self.live.get(&id).map(|&(v, k)| (id, v, k))) {
                    Some((id, v, kind)) if v == *view => {
                        self.live.remove(&id);
                        let delta = self.out.ledger.record(*operator, set, kind);
                        self.pending_score = Some((*operator, delta));
                    }
                    _ => self.out.ledger.misses += 1,
                }
            }
            SessionEvent::ScoreUpdate { .. } => return Err("score_update without a scored click".into()),
            SessionEvent::IsaPrompt { operator, .. } => {
                self.operator(*operator)?;
                self.between_sets("isa_prompt")?;
                self.open_isa[*operator] = true;
            }
            SessionEvent::IsaResponse { operator, .. } => {
                self.operator(*operator)?;
                if !std::mem::take(&mut self.open_isa[*operator]) {
                    return Err(format!("isa_response without open prompt for operator {operator}"));
                }
            }
            SessionEvent::ObjectiveSample { operator, s_obj, .. } => {
                self.operator(*operator)?;
                self.between_sets("objective_sample")?;
                if !(0.0..=1.0).contains(s_obj) {
                    return Err(format!("objective sample {s_obj} outside [0, 1]"));
                }
            }
            SessionEvent::ApprovalPrompt { operator, proposal, .. } => {
                self.operator(*operator)?;
                self.between_sets("approval_prompt")?;
                if !proposal.proposed.is_feasible(&self.env) {
                    return Err("approval_prompt proposes an infeasible assignment".into());
                }
                self.open_approval[*operator] = true;
            }
            SessionEvent::ApprovalDecision { operator, .. } => {
                self.operator(*operator)?;
                if !std::mem::take(&mut self.open_approval[*operator]) {
                    return Err(format!("approval_decision without open prompt for operator {operator}"));
                }
            }
            SessionEvent::ReallocationApplied { action, .. } => {
                self.between_sets("reallocation")?;
                if self.open_approval.iter().any(|&o| o) {
                    return Err("reallocation while approval is pending".into());
                }
                if !action.is_feasible(&self.env) {
                    return Err(format!("infeasible reallocation {action}"));
                }
                self.out.assignment = Some(action.clone());
            }
            SessionEvent::SetEnd { set } => {
                if self.in_set != Some(*set) {
                    return Err(format!("set_end {set} without matching set_start"));
                }
                if !self.live.is_empty() {
                    return Err("set_end with live objects".into());
                }
                self.in_set = None;
                self.out.sets_completed += 1;
                self.sets_in_task += 1;
            }
            SessionEvent::SurveySubmitted { operator, .. } => {
                if let Some(k) = operator {
                    self.operator(*k)?;
                }
            }
            SessionEvent::TaskEnd { task } => {
                self.between_sets("task_end")?;
                if self.task != Some(*task) || self.sets_in_task != self.config.sets_per_task {
                    return Err(format!("task_end {task:?} before its sets completed"));
                }
                self.task = None;
                self.task_index += 1;
                self.out.tasks_completed += 1;
            }
            SessionEvent::SessionEnd { team_total } => {
                self.between_sets("session_end")?;
                if *team_total != self.out.ledger.team_total {
                    return Err(format!(
                        "session_end total {team_total} differs from replayed {}",
                        self.out.ledger.team_total
                    ));
                }
                self.out.finished = true;
            }
        }
        Ok(())
    }
}
