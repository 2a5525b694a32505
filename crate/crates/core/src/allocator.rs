//! Allocation strategies: fixed splits, uniform random, and the adaptive
//! controller driven by the subjective channel, the objective channel, or
//! both, with optional operator approval of each proposed change.

use crate::env::{encode_observation, feasible_actions, AllocationAction, EnvConfig, OperatorState, TeamState};
use crate::hpm::{predict_next_performance, HpmParams};
use crate::ppo::PolicyParams;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

/// Share of approval prompts accepted by operators in the user study.
pub const OBSERVED_ACCEPT_RATE: f64 = 0.6493;

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("strategy {0} needs a trained policy and greedy fallback is disabled")]
    MissingPolicy(StrategyKind),
    #[error("interactive approval requires an operator decision")]
    MissingDecision,
    #[error("policy shape does not match the environment")]
    PolicyShape,
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    FixedEqual,
    FixedNegotiated,
    Random,
    AwacIS,
    AwacPS,
    AwacISPS,
}

/// Which workload channels a strategy may look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMask {
    Both,
    SubjectiveOnly,
    ObjectiveOnly,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::FixedEqual,
        StrategyKind::FixedNegotiated,
        StrategyKind::Random,
        StrategyKind::AwacIS,
        StrategyKind::AwacPS,
        StrategyKind::AwacISPS,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::FixedEqual => "fixed-equal",
            StrategyKind::FixedNegotiated => "fixed-negotiated",
            StrategyKind::Random => "random",
            StrategyKind::AwacIS => "awac-is",
            StrategyKind::AwacPS => "awac-ps",
            StrategyKind::AwacISPS => "awac-isps",
        }
    }

    pub fn channels(self) -> ChannelMask {
        match self {
            StrategyKind::AwacIS => ChannelMask::SubjectiveOnly,
            StrategyKind::AwacPS => ChannelMask::ObjectiveOnly,
            _ => ChannelMask::Both,
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, StrategyKind::AwacIS | StrategyKind::AwacPS | StrategyKind::AwacISPS)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = AllocError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| AllocError::UnknownStrategy(s.to_string()))
    }
}

/// The eight experimental tasks: which workload is fixed, which sessions run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFlags {
    pub fixed: bool,
    pub isa: bool,
    pub prediction: bool,
    pub approval: bool,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::A,
        TaskKind::B,
        TaskKind::C,
        TaskKind::D,
        TaskKind::E,
        TaskKind::F,
        TaskKind::G,
        TaskKind::H,
    ];

    pub fn flags(self) -> TaskFlags {
        let f = |fixed, isa, prediction, approval| TaskFlags {
            fixed,
            isa,
            prediction,
            approval,
        };
        match self {
            TaskKind::A => f(true, false, false, false),
            TaskKind::B => f(true, false, false, true),
            TaskKind::C => f(false, true, false, true),
            TaskKind::D => f(false, true, false, false),
            TaskKind::E => f(false, false, true, true),
            TaskKind::F => f(false, false, true, false),
            TaskKind::G => f(false, true, true, true),
            TaskKind::H => f(false, true, true, false),
        }
    }

    pub fn strategy(self) -> StrategyKind {
        match self {
            TaskKind::A => StrategyKind::FixedEqual,
            TaskKind::B => StrategyKind::FixedNegotiated,
            TaskKind::C | TaskKind::D => StrategyKind::AwacIS,
            TaskKind::E | TaskKind::F => StrategyKind::AwacPS,
            TaskKind::G | TaskKind::H => StrategyKind::AwacISPS,
        }
    }

    pub fn letter(self) -> char {
        match self {
            TaskKind::A => 'A',
            TaskKind::B => 'B',
            TaskKind::C => 'C',
            TaskKind::D => 'D',
            TaskKind::E => 'E',
            TaskKind::F => 'F',
            TaskKind::G => 'G',
            TaskKind::H => 'H',
        }
    }
}

impl FromStr for TaskKind {
    type Err = AllocError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let t = t.strip_prefix("Task").or_else(|| t.strip_prefix("task")).unwrap_or(t).trim();
        TaskKind::ALL
            .into_iter()
            .find(|k| t.len() == 1 && t.eq_ignore_ascii_case(&k.letter().to_string()))
            .ok_or_else(|| AllocError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApprovalPolicy {
    NoApproval,
    Simulated { accept_prob: f64 },
    Interactive,
}

impl ApprovalPolicy {
    pub fn simulated_default() -> Self {
        ApprovalPolicy::Simulated {
            accept_prob: OBSERVED_ACCEPT_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProposal {
    pub current: AllocationAction,
    pub proposed: AllocationAction,
    /// Predicted team performance after the change minus the current one.
    pub predicted_gain: f64,
}

/// Replaces the channel a strategy may not see with the one it may.
pub fn mask_state(state: &TeamState, mask: ChannelMask) -> TeamState {
    let mut s = state.clone();
    for op in &mut s.operators {
        match mask {
            ChannelMask::Both => {}
            ChannelMask::SubjectiveOnly => op.s_obj = op.s_subj,
            ChannelMask::ObjectiveOnly => op.s_subj = op.s_obj,
        }
    }
    s
}

fn team_perf_of(ops: &[OperatorState], hpm: &HpmParams) -> f64 {
    let sum: f64 = ops
        .iter()
        .map(|o| predict_next_performance(o.s_subj, o.s_obj, 0.0, hpm).value())
        .sum();
    sum / ops.len() as f64
}

/// Team performance predicted for moving from the state's views to `action`.
pub fn predicted_team_performance(
    state: &TeamState,
    action: &AllocationAction,
    hpm: &HpmParams,
    config: &EnvConfig,
) -> f64 {
    let sum: f64 = state
        .operators
        .iter()
        .zip(&action.views)
        .map(|(o, &v)| {
            let dw = config.kappa * (v as f64 - o.views as f64);
            predict_next_performance(o.s_subj, o.s_obj, dw, hpm).value()
        })
        .sum();
    sum / state.operators.len() as f64
}

const TIE_TOL: f64 = 1e-12;

/// One-step lookahead: the feasible action with the highest predicted team
/// performance; ties go to the smallest total view change, then to the
/// lexicographically smallest action.
pub fn greedy_propose(state: &TeamState, hpm: &HpmParams, config: &EnvConfig) -> AllocationProposal {
    let current = state.views();
    let now = team_perf_of(&state.operators, hpm);
    let mut best: Option<(f64, usize, AllocationAction)> = None;
    for action in feasible_actions(config) {
        let p = predicted_team_performance(state, &action, hpm, config);
        let change = action.distance(&current);
        let better = match &best {
            None => true,
            Some((bp, bc, _)) => p > bp + TIE_TOL || ((p - bp).abs() <= TIE_TOL && change < *bc),
        };
        if better {
            best = Some((p, change, action));
        }
    }
    let (p, _, proposed) = best.expect("validated config has a feasible action");
    AllocationProposal {
        current,
        proposed,
        predicted_gain: p - now,
    }
}

/// The consensus split used by the negotiated-fixed strategy: the greedy
/// split from the state at episode start, then frozen.
pub fn negotiated_split(initial: &TeamState, hpm: &HpmParams, config: &EnvConfig) -> AllocationAction {
    greedy_propose(initial, hpm, config).proposed
}

pub fn equal_split(config: &EnvConfig) -> AllocationAction {
    let n = config.n_operators;
    let base = config.total_views / n;
    let rem = config.total_views % n;
    AllocationAction::new((0..n).map(|i| base + usize::from(i < rem)).collect())
}

/// Strategy dispatcher sharing one environment shape, HPM and (optional)
/// trained policy.
#[derive(Debug, Clone)]
pub struct Allocator {
    config: EnvConfig,
    hpm: HpmParams,
    actions: Vec<AllocationAction>,
    policy: Option<Arc<PolicyParams>>,
    greedy_fallback: bool,
}

impl Allocator {
    pub fn new(config: EnvConfig, hpm: HpmParams) -> Self {
        let actions = feasible_actions(&config);
        Self {
            config,
            hpm,
            actions,
            policy: None,
            greedy_fallback: true,
        }
    }

    pub fn with_policy(mut self, policy: Arc<PolicyParams>) -> Result<Self, AllocError> {
        policy
            .check_shape(self.config.observation_dim(), self.actions.len())
            .map_err(|_| AllocError::PolicyShape)?;
        self.policy = Some(policy);
        Ok(self)
    }

    pub fn with_greedy_fallback(mut self, enabled: bool) -> Self {
        self.greedy_fallback = enabled;
        self
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn hpm(&self) -> &HpmParams {
        &self.hpm
    }

    pub fn has_policy(&self) -> bool {
        self.policy.is_some()
    }

    /// Proposes the next assignment.
    ///
    /// `negotiated` is the frozen split for [`StrategyKind::FixedNegotiated`];
    /// when absent it is derived from `state`.
    pub fn propose<R: Rng + ?Sized>(
        &self,
        state: &TeamState,
        strategy: StrategyKind,
        negotiated: Option<&AllocationAction>,
        rng: &mut R,
    ) -> Result<AllocationProposal, AllocError> {
        let masked = mask_state(state, strategy.channels());
        let proposed = match strategy {
            StrategyKind::FixedEqual => equal_split(&self.config),
            StrategyKind::FixedNegotiated => negotiated
                .cloned()
                .unwrap_or_else(|| negotiated_split(state, &self.hpm, &self.config)),
            StrategyKind::Random => self.actions[rng.random_range(0..self.actions.len())].clone(),
            StrategyKind::AwacIS | StrategyKind::AwacPS | StrategyKind::AwacISPS => match &self.policy {
                Some(policy) => {
                    let obs = encode_observation(&masked, &self.config);
                    self.actions[policy.greedy_action(obs.as_slice())].clone()
                }
                None if self.greedy_fallback => {
                    return Ok(greedy_propose(&masked, &self.hpm, &self.config));
                }
                None => return Err(AllocError::MissingPolicy(strategy)),
            },
        };
        let gain = predicted_team_performance(&masked, &proposed, &self.hpm, &self.config)
            - team_perf_of(&masked.operators, &self.hpm);
        Ok(AllocationProposal {
            current: state.views(),
            proposed,
            predicted_gain: gain,
        })
    }
}

/// Resolves a proposal: accepted returns the proposed split, rejected keeps
/// the current one.
pub fn apply_approval<R: Rng + ?Sized>(
    proposal: &AllocationProposal,
    policy: ApprovalPolicy,
    decision: Option<bool>,
    rng: &mut R,
) -> Result<AllocationAction, AllocError> {
    let accepted = match policy {
        ApprovalPolicy::NoApproval => true,
        ApprovalPolicy::Simulated { accept_prob } => rng.random::<f64>() < accept_prob,
        ApprovalPolicy::Interactive => decision.ok_or(AllocError::MissingDecision)?,
    };
    Ok(if accepted {
        proposal.proposed.clone()
    } else {
        proposal.current.clone()
    })
}
