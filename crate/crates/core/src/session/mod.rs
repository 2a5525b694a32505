//! Live session engine: timed sets over a synthetic anomaly stream, +1/−3
//! scoring, ISA and approval prompts between sets, and reallocation of
//! camera views. Every state change is appended to an event log that
//! [`replay`] can verify and reconstruct.
//!
//! The engine never reads a clock. Callers pass the current time in
//! milliseconds since creation; scheduled events are stamped with their own
//! due time, so a log depends only on the seed and the timed inputs.

mod event;
mod predictor;
mod replay;
mod schedule;

pub use event::{
    ClickRejection, LogRecord, ObjectKind, ObjectiveSource, ScoreLedger, SessionEvent, SurveyKind, HIT_DELTA,
    PENALTY_DELTA, SCHEMA_VERSION,
};
pub use predictor::{PredictorInput, SimulatedOperatorModel, WorkloadPredictor};
pub use replay::{replay, replay_records, ReplayOutcome};
pub use schedule::{AnomalySchedule, ScheduleParams, ScheduledObject};

use crate::allocator::{
    equal_split, negotiated_split, AllocationProposal, Allocator, ApprovalPolicy, StrategyKind, TaskKind,
};
use crate::env::{AllocationAction, EnvConfig, OperatorState, TeamState};
use crate::hpm::{isa_to_workload, predict_next_state, IsaScore, WorkloadLevel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("{action} not allowed while {phase:?}")]
    OutOfPhase { action: &'static str, phase: SessionPhase },
    #[error("unknown operator {0}")]
    UnknownOperator(usize),
    #[error("view {view} is not assigned to operator {operator}")]
    ViewNotAssigned { operator: usize, view: usize },
    #[error("operator {0} has no open prompt")]
    NoOpenPrompt(usize),
    #[error("time {now} ms is before the last event at {last} ms")]
    ClockWentBackwards { now: u64, last: u64 },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("log line {line}: {message}")]
    Replay { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub task_plan: Vec<TaskKind>,
    pub set_duration_s: f64,
    pub isa_window_s: f64,
    pub approval_window_s: f64,
    /// Minimum gap between the end of a set and the start of the next.
    pub break_s: f64,
    pub sets_per_task: usize,
    pub n_operators: usize,
    pub total_views: usize,
    pub min_views: usize,
    pub max_views: Option<usize>,
    /// Objects per view per minute.
    pub abnormal_rate: f64,
    pub normal_rate: f64,
    pub object_dwell_s: f64,
    pub kappa: f64,
    pub approval: ApprovalPolicy,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            task_plan: TaskKind::ALL.to_vec(),
            set_duration_s: 100.0,
            isa_window_s: 10.0,
            approval_window_s: 10.0,
            break_s: 20.0,
            sets_per_task: 3,
            n_operators: 2,
            total_views: 6,
            min_views: 1,
            max_views: None,
            abnormal_rate: 3.0,
            normal_rate: 1.5,
            object_dwell_s: 4.0,
            kappa: 0.1,
            approval: ApprovalPolicy::Interactive,
        }
    }
}

fn to_ms(s: f64) -> u64 {
    (s * 1000.0).round() as u64
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: &str| Err(SessionError::InvalidConfig(m.to_string()));
        if self.task_plan.is_empty() {
            return bad("task_plan is empty");
        }
        for (name, v) in [
            ("set_duration_s", self.set_duration_s),
            ("isa_window_s", self.isa_window_s),
            ("approval_window_s", self.approval_window_s),
            ("object_dwell_s", self.object_dwell_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.break_s.is_finite() && self.break_s >= 0.0) {
            return bad("break_s must be non-negative");
        }
        for (name, v) in [("abnormal_rate", self.abnormal_rate), ("normal_rate", self.normal_rate)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be non-negative"));
            }
        }
        if self.sets_per_task == 0 {
            return bad("sets_per_task must be at least 1");
        }
        if let ApprovalPolicy::Simulated { accept_prob } = self.approval {
            if !(0.0..=1.0).contains(&accept_prob) {
                return bad("approval accept_prob must lie in [0, 1]");
            }
        }
        self.env_config()
            .validate()
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))
    }

    /// Allocation shape shared with the simulator and allocator.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            n_operators: self.n_operators,
            total_views: self.total_views,
            min_views: self.min_views,
            max_views: self.max_views,
            sets_per_mission: self.sets_per_task,
            kappa: self.kappa,
            ..EnvConfig::default()
        }
    }

    pub fn total_sets(&self) -> usize {
        self.task_plan.len() * self.sets_per_task
    }

    pub fn schedule_params(&self) -> ScheduleParams {
        ScheduleParams {
            n_sets: self.total_sets(),
            n_views: self.total_views,
            set_duration_ms: to_ms(self.set_duration_s),
            abnormal_rate: self.abnormal_rate,
            normal_rate: self.normal_rate,
            dwell_ms: to_ms(self.object_dwell_s),
        }
    }
}

/// Views owned by `operator`: consecutive blocks in operator order.
pub fn views_of(assignment: &AllocationAction, operator: usize) -> Range<usize> {
    let start: usize = assignment.views[..operator].iter().sum();
    start..start + assignment.views[operator]
}

pub fn owner_of(assignment: &AllocationAction, view: usize) -> Option<usize> {
    (0..assignment.views.len()).find(|&k| views_of(assignment, k).contains(&view))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Created,
    InSet,
    IsaPrompt,
    ApprovalPrompt,
    Break,
    Finished,
}

#[derive(Debug, Clone, PartialEq)]
enum Stage {
    Created,
    InSet {
        set_end: u64,
        set_start: u64,
        cursor: usize,
    },
    Isa {
        deadline: u64,
        responses: Vec<Option<IsaScore>>,
        resume_at: u64,
    },
    Approval {
        deadline: u64,
        proposal: AllocationProposal,
        required: Vec<bool>,
        decisions: Vec<Option<bool>>,
        resume_at: u64,
    },
    Waiting {
        next_start: u64,
    },
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LiveObject {
    object_id: u64,
    view: usize,
    kind: ObjectKind,
    expire_at: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct SetActivity {
    abnormal_seen: u32,
    abnormal_hits: u32,
    normal_hits: u32,
}

/// The engine's running estimate of one operator's workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorEstimate {
    pub s_subj: WorkloadLevel,
    pub s_obj: WorkloadLevel,
    pub last_isa: IsaScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickOutcome {
    pub delta: i32,
    pub team_total: i64,
    pub object_id: Option<u64>,
}

/// Externally visible session status. Only the team score is exposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub phase: SessionPhase,
    pub t: u64,
    pub task: Option<TaskKind>,
    pub task_index: usize,
    pub set: Option<usize>,
    pub sets_completed: usize,
    pub assignment: AllocationAction,
    pub team_total: i64,
    pub open_isa: Vec<usize>,
    pub open_approval: Vec<usize>,
    pub pending_proposal: Option<AllocationProposal>,
    pub events: u64,
}

pub struct SessionEngine {
    id: String,
    config: SessionConfig,
    env: EnvConfig,
    allocator: Allocator,
    predictor: Box<dyn WorkloadPredictor>,
    simulated: SimulatedOperatorModel,
    seed: u64,
    rng: ChaCha8Rng,
    schedule: AnomalySchedule,
    stage: Stage,
    task_index: usize,
    set_in_task: usize,
    global_set: usize,
    sets_completed: usize,
    assignment: AllocationAction,
    estimates: Vec<OperatorEstimate>,
    external: Vec<Option<WorkloadLevel>>,
    activity: Vec<SetActivity>,
    live: Vec<LiveObject>,
    ledger: ScoreLedger,
    log: Vec<LogRecord>,
    flushed: usize,
    last_t: u64,
}

impl std::fmt::Debug for SessionEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionEngine")
            .field("id", &self.id)
            .field("stage", &self.stage)
            .field("events", &self.log.len())
            .finish_non_exhaustive()
    }
}

impl SessionEngine {
    /// Creates a session in the `Created` phase with its anomaly schedule
    /// drawn from `seed`, and logs `SessionStart` at t = 0.
    pub fn new(
        id: impl Into<String>,
        config: SessionConfig,
        allocator: Allocator,
        seed: u64,
    ) -> Result<Self, SessionError> {
        config.validate()?;
        let env = config.env_config();
        let ac = allocator.config();
        if ac.n_operators != env.n_operators
            || ac.total_views != env.total_views
            || ac.min_views != env.min_views
            || ac.max_views() != env.max_views()
        {
            return Err(SessionError::InvalidConfig(
                "allocator shape differs from the session".into(),
            ));
        }
        let schedule = AnomalySchedule::draw(&config.schedule_params(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(4);
        let n = config.n_operators;
        let neutral = OperatorEstimate {
            s_subj: isa_to_workload(IsaScore::default()),
            s_obj: isa_to_workload(IsaScore::default()),
            last_isa: IsaScore::default(),
        };
        let mut engine = Self {
            id: id.into(),
            simulated: SimulatedOperatorModel { kappa: config.kappa },
            predictor: Box::new(SimulatedOperatorModel { kappa: config.kappa }),
            assignment: equal_split(&env),
            ledger: ScoreLedger::new(n, config.total_sets()),
            estimates: vec![neutral; n],
            external: vec![None; n],
            activity: vec![SetActivity::default(); n],
            env,
            allocator,
            seed,
            rng,
            schedule,
            stage: Stage::Created,
            task_index: 0,
            set_in_task: 0,
            global_set: 0,
            sets_completed: 0,
            live: Vec::new(),
            log: Vec::new(),
            flushed: 0,
            last_t: 0,
            config,
        };
        let start = SessionEvent::SessionStart {
            session_id: engine.id.clone(),
            schema_version: SCHEMA_VERSION,
            seed,
            config: Box::new(engine.config.clone()),
        };
        engine.emit(0, start);
        Ok(engine)
    }

    pub fn with_predictor(mut self, predictor: Box<dyn WorkloadPredictor>) -> Self {
        self.predictor = predictor;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn schedule(&self) -> &AnomalySchedule {
        &self.schedule
    }

    pub fn ledger(&self) -> &ScoreLedger {
        &self.ledger
    }

    pub fn assignment(&self) -> &AllocationAction {
        &self.assignment
    }

    pub fn estimates(&self) -> &[OperatorEstimate] {
        &self.estimates
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    /// Records appended since the previous call.
    pub fn take_new_records(&mut self) -> &[LogRecord] {
        let from = self.flushed;
        self.flushed = self.log.len();
        &self.log[from..]
    }

    pub fn last_event_t(&self) -> u64 {
        self.last_t
    }

    pub fn current_task(&self) -> Option<TaskKind> {
        self.config.task_plan.get(self.task_index).copied()
    }

    pub fn phase(&self) -> SessionPhase {
        match self.stage {
            Stage::Created => SessionPhase::Created,
            Stage::InSet { .. } => SessionPhase::InSet,
            Stage::Isa { .. } => SessionPhase::IsaPrompt,
            Stage::Approval { .. } => SessionPhase::ApprovalPrompt,
            Stage::Waiting { .. } => SessionPhase::Break,
            Stage::Finished => SessionPhase::Finished,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.stage == Stage::Finished
    }

    /// Time of the next scheduled transition, if any.
    pub fn next_deadline(&self) -> Option<u64> {
        match &self.stage {
            Stage::Created | Stage::Finished => None,
            Stage::InSet {
                set_end,
                set_start,
                cursor,
            } => {
                let spawn = self.schedule.sets[self.global_set]
                    .get(*cursor)
                    .map(|o| set_start + o.spawn_ms);
                let expire = self.live.iter().map(|o| o.expire_at).min();
                [spawn, expire, Some(*set_end)].into_iter().flatten().min()
            }
            Stage::Isa { deadline, .. } | Stage::Approval { deadline, .. } => Some(*deadline),
            Stage::Waiting { next_start } => Some(*next_start),
        }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let (open_isa, open_approval, pending_proposal) = match &self.stage {
            Stage::Isa { responses, .. } => (
                (0..responses.len()).filter(|&k| responses[k].is_none()).collect(),
                Vec::new(),
                None,
            ),
            Stage::Approval {
                required,
                decisions,
                proposal,
                ..
            } => (
                Vec::new(),
                (0..required.len())
                    .filter(|&k| required[k] && decisions[k].is_none())
                    .collect(),
                Some(proposal.clone()),
            ),
            _ => (Vec::new(), Vec::new(), None),
        };
        SessionSnapshot {
            session_id: self.id.clone(),
            phase: self.phase(),
            t: self.last_t,
            task: self.current_task(),
            task_index: self.task_index,
            set: matches!(self.stage, Stage::InSet { .. }).then_some(self.global_set),
            sets_completed: self.sets_completed,
            assignment: self.assignment.clone(),
            team_total: self.ledger.team_total,
            open_isa,
            open_approval,
            pending_proposal,
            events: self.log.len() as u64,
        }
    }

    fn emit(&mut self, t: u64, event: SessionEvent) {
        debug_assert!(t >= self.last_t);
        self.last_t = t;
        let seq = self.log.len() as u64;
        self.log.push(LogRecord { seq, t, event });
    }

    fn check_clock(&self, now: u64) -> Result<(), SessionError> {
        if now < self.last_t {
            return Err(SessionError::ClockWentBackwards {
                now,
                last: self.last_t,
            });
        }
        Ok(())
    }

    fn out_of_phase(&self, action: &'static str) -> SessionError {
        SessionError::OutOfPhase {
            action,
            phase: self.phase(),
        }
    }

    fn check_operator(&self, operator: usize) -> Result<(), SessionError> {
        if operator >= self.config.n_operators {
            return Err(SessionError::UnknownOperator(operator));
        }
        Ok(())
    }

    pub fn start(&mut self, now: u64) -> Result<(), SessionError> {
        self.check_clock(now)?;
        if self.stage != Stage::Created {
            return Err(self.out_of_phase("start"));
        }
        self.enter_task(now, now);
        Ok(())
    }

    /// Processes every scheduled transition due at or before `now`.
    pub fn advance(&mut self, now: u64) -> Result<(), SessionError> {
        self.check_clock(now)?;
        while let Some(due) = self.next_deadline() {
            if due > now {
                break;
            }
            self.step_scheduled();
        }
        Ok(())
    }

    fn step_scheduled(&mut self) {
        match self.stage.clone() {
            Stage::InSet {
                set_end,
                set_start,
                cursor,
            } => {
                let spawn = self.schedule.sets[self.global_set]
                    .get(cursor)
                    .copied()
                    .map(|o| (set_start + o.spawn_ms, o));
                let expire = self
                    .live
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, o)| (o.expire_at, o.object_id))
                    .map(|(i, o)| (o.expire_at, i));
                let spawn_t = spawn.map_or(u64::MAX, |s| s.0);
                let expire_t = expire.map_or(u64::MAX, |e| e.0);
                if expire_t <= spawn_t && expire_t <= set_end {
                    let (t, i) = expire.expect("expire present");
                    let obj = self.live.remove(i);
                    self.emit(
                        t,
                        SessionEvent::ObjectExpire {
                            view: obj.view,
                            object_id: obj.object_id,
                        },
                    );
                } else if spawn_t < set_end {
                    let (t, o) = spawn.expect("spawn present");
                    self.stage = Stage::InSet {
                        set_end,
                        set_start,
                        cursor: cursor + 1,
                    };
                    if o.kind == ObjectKind::Abnormal {
                        if let Some(k) = owner_of(&self.assignment, o.view) {
                            self.activity[k].abnormal_seen += 1;
                        }
                    }
                    self.live.push(LiveObject {
                        object_id: o.object_id,
                        view: o.view,
                        kind: o.kind,
                        expire_at: set_start + o.expire_ms,
                    });
                    self.emit(
                        t,
                        SessionEvent::ObjectSpawn {
                            view: o.view,
                            object_id: o.object_id,
                            kind: o.kind,
                        },
                    );
                } else {
                    self.end_set(set_end);
                }
            }
            Stage::Isa { deadline, .. } => self.resolve_isa(deadline),
            Stage::Approval { deadline, .. } => self.resolve_approval(deadline),
            Stage::Waiting { next_start } => self.start_set(next_start),
            Stage::Created | Stage::Finished => {}
        }
    }

    fn task(&self) -> TaskKind {
        self.config.task_plan[self.task_index]
    }

    fn break_ms(&self) -> u64 {
        to_ms(self.config.break_s)
    }

    fn enter_task(&mut self, t: u64, earliest_start: u64) {
        let task = self.task();
        self.set_in_task = 0;
        self.emit(
            t,
            SessionEvent::TaskStart {
                task,
                task_index: self.task_index,
            },
        );
        let equal = equal_split(&self.env);
        self.apply_assignment(t, equal.clone(), false);
        if task.strategy() == StrategyKind::FixedNegotiated && task.flags().approval {
            let state = self.team_state();
            let proposed = negotiated_split(&state, self.allocator.hpm(), &self.env);
            if proposed != equal {
                let proposal = AllocationProposal {
                    current: equal,
                    predicted_gain: crate::allocator::predicted_team_performance(
                        &state,
                        &proposed,
                        self.allocator.hpm(),
                        &self.env,
                    ) - state.current_team_perf.value(),
                    proposed,
                };
                let required = vec![true; self.config.n_operators];
                self.open_approval(t, proposal, required, earliest_start);
                return;
            }
        }
        self.stage = Stage::Waiting {
            next_start: earliest_start.max(t),
        };
        if earliest_start <= t {
            self.start_set(t);
        }
    }

    fn start_set(&mut self, t: u64) {
        self.activity = vec![SetActivity::default(); self.config.n_operators];
        self.live.clear();
        self.emit(
            t,
            SessionEvent::SetStart {
                set: self.global_set,
                assignment: self.assignment.clone(),
            },
        );
        self.stage = Stage::InSet {
            set_start: t,
            set_end: t + to_ms(self.config.set_duration_s),
            cursor: 0,
        };
    }

    fn end_set(&mut self, t: u64) {
        let mut remaining = std::mem::take(&mut self.live);
        remaining.sort_by_key(|o| o.object_id);
        for o in remaining {
            self.emit(
                t,
                SessionEvent::ObjectExpire {
                    view: o.view,
                    object_id: o.object_id,
                },
            );
        }
        self.emit(t, SessionEvent::SetEnd { set: self.global_set });
        self.global_set += 1;
        self.sets_completed += 1;
        self.set_in_task += 1;
        let task = self.task();
        if self.set_in_task < self.config.sets_per_task {
            if task.flags().fixed {
                self.stage = Stage::Waiting {
                    next_start: t + self.break_ms(),
                };
            } else if task.flags().isa {
                let deadline = t + to_ms(self.config.isa_window_s);
                for k in 0..self.config.n_operators {
                    self.emit(
                        t,
                        SessionEvent::IsaPrompt {
                            operator: k,
                            deadline_t: deadline,
                        },
                    );
                }
                self.stage = Stage::Isa {
                    deadline,
                    responses: vec![None; self.config.n_operators],
                    resume_at: t + self.break_ms(),
                };
            } else {
                self.decide(t, t + self.break_ms());
            }
            return;
        }
        self.emit(t, SessionEvent::TaskEnd { task });
        self.task_index += 1;
        if self.task_index < self.config.task_plan.len() {
            let earliest = t + self.break_ms();
            self.enter_task(t, earliest);
        } else {
            self.emit(
                t,
                SessionEvent::SessionEnd {
                    team_total: self.ledger.team_total,
                },
            );
            self.stage = Stage::Finished;
        }
    }

    fn team_state(&self) -> TeamState {
        let ops = self
            .estimates
            .iter()
            .zip(&self.assignment.views)
            .map(|(e, &views)| OperatorState {
                s_subj: e.s_subj,
                s_obj: e.s_obj,
                views,
            })
            .collect();
        TeamState::new(ops, self.allocator.hpm())
    }

    fn resolve_isa(&mut self, t: u64) {
        let Stage::Isa {
            responses, resume_at, ..
        } = self.stage.clone()
        else {
            return;
        };
        for (k, r) in responses.iter().enumerate() {
            if r.is_none() {
                let score = self.estimates[k].last_isa;
                self.emit(
                    t,
                    SessionEvent::IsaResponse {
                        operator: k,
                        score,
                        defaulted: true,
                    },
                );
                self.estimates[k].s_subj = isa_to_workload(score);
            }
        }
        self.decide(t, resume_at);
    }

    fn decide(&mut self, t: u64, resume_at: u64) {
        let task = self.task();
        let flags = task.flags();
        if flags.prediction {
            let mean_views = self.config.total_views as f64 / self.config.n_operators as f64;
            for k in 0..self.config.n_operators {
                let input = PredictorInput {
                    operator: k,
                    set: self.global_set.saturating_sub(1),
                    views: self.assignment.views[k],
                    mean_views,
                    abnormal_seen: self.activity[k].abnormal_seen,
                    abnormal_hits: self.activity[k].abnormal_hits,
                    normal_hits: self.activity[k].normal_hits,
                    prior_s_obj: self.estimates[k].s_obj.value(),
                };
                let (s_obj, source) = match self.external[k].take() {
                    Some(s) => (s, ObjectiveSource::External),
                    None => match self.predictor.predict(&input) {
                        Some(s) => (s, ObjectiveSource::Simulated),
                        None => (self.simulated.estimate(&input), ObjectiveSource::Simulated),
                    },
                };
                self.estimates[k].s_obj = s_obj;
                self.emit(
                    t,
                    SessionEvent::ObjectiveSample {
                        operator: k,
                        s_obj: s_obj.value(),
                        source,
                    },
                );
            }
        }
        let state = self.team_state();
        let proposal = self
            .allocator
            .propose(&state, task.strategy(), None, &mut self.rng)
            .unwrap_or_else(|_| AllocationProposal {
                current: self.assignment.clone(),
                proposed: self.assignment.clone(),
                predicted_gain: 0.0,
            });
        if proposal.proposed == proposal.current || !flags.approval {
            self.apply_assignment(t, proposal.proposed, true);
            self.stage = Stage::Waiting {
                next_start: resume_at.max(t),
            };
            return;
        }
        let required = proposal
            .proposed
            .views
            .iter()
            .zip(&proposal.current.views)
            .map(|(p, c)| p > c)
            .collect();
        self.open_approval(t, proposal, required, resume_at);
    }

    fn open_approval(&mut self, t: u64, proposal: AllocationProposal, required: Vec<bool>, resume_at: u64) {
        let n = self.config.n_operators;
        match self.config.approval {
            ApprovalPolicy::NoApproval => {
                self.apply_assignment(t, proposal.proposed, true);
                self.stage = Stage::Waiting {
                    next_start: resume_at.max(t),
                };
            }
            ApprovalPolicy::Simulated { accept_prob } => {
                let mut all = true;
                for k in (0..n).filter(|&k| required[k]) {
                    self.emit(
                        t,
                        SessionEvent::ApprovalPrompt {
                            operator: k,
                            proposal: proposal.clone(),
                            deadline_t: t,
                        },
                    );
                    let accept = self.rng.random::<f64>() < accept_prob;
                    all &= accept;
                    self.emit(
                        t,
                        SessionEvent::ApprovalDecision {
                            operator: k,
                            accept,
                            timed_out: false,
                        },
                    );
                }
                let action = if all { proposal.proposed } else { proposal.current };
                self.apply_assignment(t, action, true);
                self.stage = Stage::Waiting {
                    next_start: resume_at.max(t),
                };
            }
            ApprovalPolicy::Interactive => {
                let deadline = t + to_ms(self.config.approval_window_s);
                for k in (0..n).filter(|&k| required[k]) {
                    self.emit(
                        t,
                        SessionEvent::ApprovalPrompt {
                            operator: k,
                            proposal: proposal.clone(),
                            deadline_t: deadline,
                        },
                    );
                }
                self.stage = Stage::Approval {
                    deadline,
                    proposal,
                    required,
                    decisions: vec![None; n],
                    resume_at,
                };
            }
        }
    }

    fn resolve_approval(&mut self, t: u64) {
        let Stage::Approval {
            proposal,
            required,
            decisions,
            resume_at,
            ..
        } = self.stage.clone()
        else {
            return;
        };
        let mut all = true;
        for k in 0..required.len() {
            if !required[k] {
                continue;
            }
            match decisions[k] {
                Some(accept) => all &= accept,
                None => {
                    all = false;
                    self.emit(
                        t,
                        SessionEvent::ApprovalDecision {
                            operator: k,
                            accept: false,
                            timed_out: true,
                        },
                    );
                }
            }
        }
        let action = if all { proposal.proposed } else { proposal.current };
        self.apply_assignment(t, action, true);
        self.stage = Stage::Waiting {
            next_start: resume_at.max(t),
        };
    }

    fn apply_assignment(&mut self, t: u64, action: AllocationAction, always_log: bool) {
        let changed = action != self.assignment;
        for (k, e) in self.estimates.iter_mut().enumerate() {
            let dw = self.config.kappa * (action.views[k] as f64 - self.assignment.views[k] as f64);
            e.s_subj = predict_next_state(e.s_subj, dw);
            e.s_obj = predict_next_state(e.s_obj, dw);
        }
        self.assignment = action.clone();
        if changed || always_log {
            self.emit(t, SessionEvent::ReallocationApplied { action, changed });
        }
    }

    /// A click on `view` by `operator`. Rejected clicks are logged and
    /// returned as errors; a click on an empty view scores 0.
    pub fn handle_click(
        &mut self,
        operator: usize,
        view: usize,
        object_id: Option<u64>,
        now: u64,
    ) -> Result<ClickOutcome, SessionError> {
        self.advance(now)?;
        let reject = |engine: &mut Self, why: ClickRejection| {
            engine.emit(
                now,
                SessionEvent::Click {
                    operator,
                    view,
                    object_id,
                    rejected: Some(why),
                },
            );
        };
        if operator >= self.config.n_operators {
            reject(self, ClickRejection::UnknownOperator);
            return Err(SessionError::UnknownOperator(operator));
        }
        if !matches!(self.stage, Stage::InSet { .. }) {
            reject(self, ClickRejection::NotInSet);
            return Err(self.out_of_phase("click"));
        }
        if !views_of(&self.assignment, operator).contains(&view) {
            reject(self, ClickRejection::ViewNotAssigned);
            return Err(SessionError::ViewNotAssigned { operator, view });
        }
        let hit = self
            .live
            .iter()
            .enumerate()
            .filter(|(_, o)| o.view == view && object_id.is_none_or(|id| id == o.object_id))
            .min_by_key(|(_, o)| o.object_id)
            .map(|(i, _)| i);
        match hit {
            Some(i) => {
                let obj = self.live.remove(i);
                self.emit(
                    now,
                    SessionEvent::Click {
                        operator,
                        view,
                        object_id: Some(obj.object_id),
                        rejected: None,
                    },
                );
                let delta = self.ledger.record(operator, self.global_set, obj.kind);
                match obj.kind {
                    ObjectKind::Abnormal => self.activity[operator].abnormal_hits += 1,
                    ObjectKind::Normal => self.activity[operator].normal_hits += 1,
                }
                let team_total = self.ledger.team_total;
                self.emit(
                    now,
                    SessionEvent::ScoreUpdate {
                        operator,
                        delta,
                        team_total,
                    },
                );
                Ok(ClickOutcome {
                    delta,
                    team_total,
                    object_id: Some(obj.object_id),
                })
            }
            None => {
                self.ledger.misses += 1;
                self.emit(
                    now,
                    SessionEvent::Click {
                        operator,
                        view,
                        object_id,
                        rejected: None,
                    },
                );
                Ok(ClickOutcome {
                    delta: 0,
                    team_total: self.ledger.team_total,
                    object_id: None,
                })
            }
        }
    }

    pub fn submit_isa(&mut self, operator: usize, score: IsaScore, now: u64) -> Result<(), SessionError> {
        self.advance(now)?;
        self.check_operator(operator)?;
        let Stage::Isa { responses, .. } = &mut self.stage else {
            return Err(self.out_of_phase("isa_response"));
        };
        if responses[operator].is_some() {
            return Err(SessionError::NoOpenPrompt(operator));
        }
        responses[operator] = Some(score);
        let done = responses.iter().all(Option::is_some);
        self.estimates[operator].last_isa = score;
        self.estimates[operator].s_subj = isa_to_workload(score);
        self.emit(
            now,
            SessionEvent::IsaResponse {
                operator,
                score,
                defaulted: false,
            },
        );
        if done {
            self.resolve_isa(now);
        }
        Ok(())
    }

    pub fn submit_approval(&mut self, operator: usize, accept: bool, now: u64) -> Result<(), SessionError> {
        self.advance(now)?;
        self.check_operator(operator)?;
        let Stage::Approval {
            required, decisions, ..
        } = &mut self.stage
        else {
            return Err(self.out_of_phase("approval_decision"));
        };
        if !required[operator] || decisions[operator].is_some() {
            return Err(SessionError::NoOpenPrompt(operator));
        }
        decisions[operator] = Some(accept);
        let done = (0..required.len()).all(|k| !required[k] || decisions[k].is_some());
        self.emit(
            now,
            SessionEvent::ApprovalDecision {
                operator,
                accept,
                timed_out: false,
            },
        );
        if done {
            self.resolve_approval(now);
        }
        Ok(())
    }

    /// Queues an external objective estimate, used at the next prediction step.
    pub fn set_objective_workload(&mut self, operator: usize, s_obj: f64) -> Result<(), SessionError> {
        self.check_operator(operator)?;
        let level = WorkloadLevel::new(s_obj).map_err(|e| SessionError::InvalidValue(e.to_string()))?;
        self.external[operator] = Some(level);
        Ok(())
    }

    pub fn submit_survey(
        &mut self,
        operator: Option<usize>,
        kind: SurveyKind,
        payload: serde_json::Value,
        now: u64,
    ) -> Result<(), SessionError> {
        self.advance(now)?;
        if let Some(k) = operator {
            self.check_operator(k)?;
        }
        self.emit(
            now,
            SessionEvent::SurveySubmitted {
                operator,
                kind,
                payload,
            },
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpm::HpmParams;

    fn engine(plan: Vec<TaskKind>, approval: ApprovalPolicy) -> SessionEngine {
        let cfg = SessionConfig {
            task_plan: plan,
            approval,
            ..SessionConfig::default()
        };
        let alloc = Allocator::new(cfg.env_config(), HpmParams::default());
        SessionEngine::new("t", cfg, alloc, 7).unwrap()
    }

    fn kinds(e: &SessionEngine) -> Vec<&'static str> {
        e.log()
            .iter()
            .map(|r| match r.event {
                SessionEvent::IsaPrompt { .. } => "isa_prompt",
                SessionEvent::ApprovalPrompt { .. } => "approval_prompt",
                SessionEvent::ReallocationApplied { .. } => "realloc",
                SessionEvent::SetStart { .. } => "set_start",
                SessionEvent::SetEnd { .. } => "set_end",
                _ => "",
            })
            .filter(|s| !s.is_empty())
            .collect()
    }

    #[test]
    fn views_partition() {
        let a = AllocationAction::new(vec![4, 2]);
        assert_eq!(views_of(&a, 0), 0..4);
        assert_eq!(views_of(&a, 1), 4..6);
        assert_eq!(owner_of(&a, 5), Some(1));
        assert_eq!(owner_of(&a, 6), None);
    }

    #[test]
    fn task_a_has_no_prompts() {
        let mut e = engine(vec![TaskKind::A], ApprovalPolicy::Interactive);
        e.start(0).unwrap();
        e.advance(10_000_000).unwrap();
        assert!(e.is_finished());
        let k = kinds(&e);
        assert!(!k.contains(&"isa_prompt") && !k.contains(&"approval_prompt"));
        assert_eq!(k.iter().filter(|&&s| s == "set_start").count(), 3);
        for r in e.log() {
            if let SessionEvent::SetStart { assignment, .. } = &r.event {
                assert_eq!(assignment.views, vec![3, 3]);
            }
        }
    }

    #[test]
    fn isa_timeout_defaults_to_previous() {
        let mut e = engine(vec![TaskKind::D], ApprovalPolicy::Interactive);
        e.start(0).unwrap();
        e.advance(100_000).unwrap();
        assert_eq!(e.phase(), SessionPhase::IsaPrompt);
        e.submit_isa(0, IsaScore::new(2).unwrap(), 101_000).unwrap();
        e.advance(110_000).unwrap();
        let defaulted: Vec<_> = e
            .log()
            .iter()
            .filter_map(|r| match r.event {
                SessionEvent::IsaResponse {
                    operator,
                    score,
                    defaulted,
                } => Some((operator, score.value(), defaulted)),
                _ => None,
            })
            .collect();
        assert_eq!(defaulted, vec![(0, 2, false), (1, 0, true)]);
    }

    #[test]
    fn clock_cannot_go_backwards() {
        let mut e = engine(vec![TaskKind::A], ApprovalPolicy::Interactive);
        e.start(500).unwrap();
        assert!(matches!(e.advance(100), Err(SessionError::ClockWentBackwards { .. })));
    }

    #[test]
    fn click_outside_set_is_logged_and_rejected() {
        let mut e = engine(vec![TaskKind::A], ApprovalPolicy::Interactive);
        let n = e.log().len();
        assert!(e.handle_click(0, 0, None, 10).is_err());
        assert_eq!(e.log().len(), n + 1);
        e.start(20).unwrap();
        assert_eq!(
            e.handle_click(0, 5, None, 30),
            Err(SessionError::ViewNotAssigned { operator: 0, view: 5 })
        );
    }
}
