//! Simulated experiment: every condition (strategy or task) runs one mission
//! per simulated team from the same initial workloads and noise stream, then
//! team scores are normalized per team and compared with rmANOVA.

use crate::allocator::{
    equal_split, negotiated_split, AllocError, Allocator, StrategyKind, TaskKind, OBSERVED_ACCEPT_RATE,
};
use crate::env::{derive_seed, reset, simulate_isa_response, AllocationAction, EnvConfig, EnvError, TeamState};
use crate::hpm::{isa_to_workload, operator_performance, predict_next_state, HpmParams, WorkloadLevel};
use crate::stats::{normalize_rows, AnovaReport, StatsError, TrialMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least 2 conditions and 2 teams, got {conditions} and {teams}")]
    TooSmall { conditions: usize, teams: usize },
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// A column of the benchmark matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Condition {
    Strategy(StrategyKind),
    Task(TaskKind),
}

impl Condition {
    pub fn strategy(self) -> StrategyKind {
        match self {
            Condition::Strategy(s) => s,
            Condition::Task(t) => t.strategy(),
        }
    }

    fn uses_isa(self) -> bool {
        match self {
            Condition::Strategy(s) => matches!(s, StrategyKind::AwacIS | StrategyKind::AwacISPS),
            Condition::Task(t) => t.flags().isa,
        }
    }

    fn needs_approval(self) -> bool {
        match self {
            Condition::Strategy(_) => false,
            Condition::Task(t) => t.flags().approval,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Strategy(s) => write!(f, "{s}"),
            Condition::Task(t) => write!(f, "{}", t.letter()),
        }
    }
}

impl FromStr for Condition {
    type Err = AllocError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<StrategyKind>()
            .map(Condition::Strategy)
            .or_else(|_| s.parse::<TaskKind>().map(Condition::Task))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub teams: usize,
    /// Sets per mission; reallocation happens in the breaks between them.
    pub sets: usize,
    /// Per-set drift of each workload channel.
    pub noise_sigma: f64,
    /// Report the subjective channel through the five-point ISA scale.
    pub isa_quantized: bool,
    /// Error of the objective-channel estimate.
    pub predictor_sigma: f64,
    /// Probability an operator accepts a proposed increase.
    pub accept_prob: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            teams: 16,
            sets: 3,
            noise_sigma: 0.05,
            isa_quantized: true,
            predictor_sigma: 0.05,
            accept_prob: OBSERVED_ACCEPT_RATE,
            alpha: 0.1,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.to_string()));
        if self.sets == 0 {
            return bad("sets must be at least 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        if !(self.predictor_sigma >= 0.0 && self.predictor_sigma.is_finite()) {
            return bad("predictor_sigma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.accept_prob) {
            return bad("accept_prob must lie in [0, 1]");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub raw: TrialMatrix,
    pub normalized: TrialMatrix,
    pub report: AnovaReport,
}

fn team_perf(state: &TeamState, hpm: &HpmParams) -> f64 {
    let n = state.operators.len() as f64;
    state
        .operators
        .iter()
        .map(|o| operator_performance(o.s_subj, o.s_obj, hpm).value())
        .sum::<f64>()
        / n
}

fn transition(state: &mut TeamState, action: &AllocationAction, kappa: f64) {
    for (o, &v) in state.operators.iter_mut().zip(&action.views) {
        let dw = kappa * (v as f64 - o.views as f64);
        o.s_subj = predict_next_state(o.s_subj, dw);
        o.s_obj = predict_next_state(o.s_obj, dw);
        o.views = v;
    }
}

fn approve<R: Rng>(current: &AllocationAction, proposed: &AllocationAction, everyone: bool, p: f64, rng: &mut R) -> bool {
    current
        .views
        .iter()
        .zip(&proposed.views)
        .filter(|(c, q)| everyone || q > c)
        .fold(true, |acc, _| rng.random::<f64>() < p && acc)
}

/// Mean true team performance over the sets of one simulated mission.
pub fn simulate_mission(
    condition: Condition,
    team_seed: u64,
    env: &EnvConfig,
    allocator: &Allocator,
    bench: &BenchConfig,
) -> Result<f64, BenchError> {
    let hpm = allocator.hpm();
    let (mut truth, _) = reset(env, hpm, team_seed)?;
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(team_seed);
        r.set_stream(k);
        r
    };
    let mut noise_rng = stream(11);
    let mut obs_rng = stream(12);
    let mut dec_rng = stream(13);
    let drift = Normal::new(0.0, bench.noise_sigma).map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
    let pred = Normal::new(0.0, bench.predictor_sigma).map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
    let strategy = condition.strategy();

    let observe = |truth: &TeamState, rng: &mut ChaCha8Rng| {
        let mut seen = truth.clone();
        for o in &mut seen.operators {
            if condition.uses_isa() && bench.isa_quantized {
                o.s_subj = isa_to_workload(simulate_isa_response(o.s_subj, None, rng));
            }
            o.s_obj = WorkloadLevel::clamped(o.s_obj.value() + pred.sample(rng));
        }
        seen
    };

    let mut negotiated = None;
    if strategy == StrategyKind::FixedNegotiated {
        let seen = observe(&truth, &mut obs_rng);
        let proposed = negotiated_split(&seen, hpm, env);
        let equal = equal_split(env);
        let accepted = !condition.needs_approval()
            || proposed == equal
            || approve(&equal, &proposed, true, bench.accept_prob, &mut dec_rng);
        let split = if accepted { proposed } else { equal };
        transition(&mut truth, &split, env.kappa);
        negotiated = Some(split);
    }

    let mut total = 0.0;
    for set in 0..bench.sets {
        total += team_perf(&truth, hpm);
        if set + 1 == bench.sets {
            break;
        }
        for o in &mut truth.operators {
            o.s_subj = WorkloadLevel::clamped(o.s_subj.value() + drift.sample(&mut noise_rng));
            o.s_obj = WorkloadLevel::clamped(o.s_obj.value() + drift.sample(&mut noise_rng));
        }
        let current = truth.views();
        let next = match strategy {
            StrategyKind::FixedEqual | StrategyKind::FixedNegotiated => current.clone(),
            _ => {
                let seen = observe(&truth, &mut obs_rng);
                let p = allocator.propose(&seen, strategy, negotiated.as_ref(), &mut dec_rng)?;
                if p.proposed != current
                    && condition.needs_approval()
                    && !approve(&current, &p.proposed, false, bench.accept_prob, &mut dec_rng)
                {
                    current.clone()
                } else {
                    p.proposed
                }
            }
        };
        transition(&mut truth, &next, env.kappa);
    }
    Ok(total / bench.sets as f64)
}

/// Column labels; repeated conditions get a `#k` suffix.
pub fn condition_labels(conditions: &[Condition]) -> Vec<String> {
    let mut labels = Vec::with_capacity(conditions.len());
    for (i, c) in conditions.iter().enumerate() {
        let k = conditions[..i].iter().filter(|d| *d == c).count();
        labels.push(if k == 0 { c.to_string() } else { format!("{c}#{}", k + 1) });
    }
    labels
}

pub fn run_bench(
    conditions: &[Condition],
    env: &EnvConfig,
    allocator: &Allocator,
    bench: &BenchConfig,
) -> Result<BenchOutcome, BenchError> {
    bench.validate()?;
    env.validate()?;
    if conditions.len() < 2 || bench.teams < 2 {
        return Err(BenchError::TooSmall {
            conditions: conditions.len(),
            teams: bench.teams,
        });
    }
    let mut rows = Vec::with_capacity(bench.teams);
    for team in 0..bench.teams {
        let seed = derive_seed(bench.seed, team as u64);
        rows.push(
            conditions
                .iter()
                .map(|&c| simulate_mission(c, seed, env, allocator, bench))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let row_labels = (1..=bench.teams).map(|t| format!("T{t}")).collect();
    let raw = TrialMatrix::new(row_labels, condition_labels(conditions), rows)?;
    let normalized = normalize_rows(&raw)?;
    let report = AnovaReport::build(&normalized, bench.alpha);
    Ok(BenchOutcome { raw, normalized, report })
}
