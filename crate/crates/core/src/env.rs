//! Workload allocation environment.
//!
//! `n` operators share a pool of camera views. Each step the controller
//! assigns an absolute view count to every operator; the change in views
//! shifts both workload channels by `kappa` per view, the team performance
//! is re-evaluated with the HPM, and the step earns `0.33` when team
//! performance did not drop. Episodes end on an infeasible assignment, on a
//! performance drop, or after `sets_per_mission` steps.

use crate::hpm::{
    operator_performance, predict_next_state, team_performance, HpmParams, IsaScore,
    PerformanceScore, WorkloadLevel,
};
use crate::ppo::{Environment, EnvStep};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

/// Reward for a step that did not lower team performance.
pub const STEP_REWARD: f64 = 0.33;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("episode already terminated")]
    Terminated,
    #[error("action has {got} entries, expected {expected}")]
    ActionLength { got: usize, expected: usize },
    #[error("observation has length {got}, expected {expected}")]
    ObservationLength { got: usize, expected: usize },
    #[error("action index {0} out of range")]
    ActionIndex(usize),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace encoding: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_operators: usize,
    pub total_views: usize,
    pub min_views: usize,
    /// `None` means `total_views - (n_operators - 1) * min_views`.
    pub max_views: Option<usize>,
    pub sets_per_mission: usize,
    /// Workload units per camera view.
    pub kappa: f64,
    /// Std-dev of the additive per-step, per-channel workload noise.
    pub noise_sigma: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_operators: 2,
            total_views: 6,
            min_views: 1,
            max_views: None,
            sets_per_mission: 3,
            kappa: 0.1,
            noise_sigma: 0.0,
            gamma: 0.99,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn max_views(&self) -> usize {
        self.max_views.unwrap_or_else(|| {
            self.total_views
                .saturating_sub(self.n_operators.saturating_sub(1) * self.min_views)
        })
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if self.n_operators < 2 {
            return bad(format!("n_operators must be >= 2, got {}", self.n_operators));
        }
        if self.total_views < self.n_operators {
            return bad(format!(
                "total_views ({}) must be >= n_operators ({})",
                self.total_views, self.n_operators
            ));
        }
        let max = self.max_views();
        if self.min_views > max {
            return bad(format!("min_views {} exceeds max_views {max}", self.min_views));
        }
        if self.n_operators * self.min_views > self.total_views
            || self.total_views > self.n_operators * max
        {
            return bad(format!(
                "no feasible split of {} views over {} operators within [{}, {max}]",
                self.total_views, self.n_operators, self.min_views
            ));
        }
        if self.sets_per_mission == 0 {
            return bad("sets_per_mission must be >= 1".into());
        }
        if !self.kappa.is_finite() {
            return bad("kappa must be finite".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and >= 0".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        Ok(())
    }

    pub fn observation_dim(&self) -> usize {
        3 * self.n_operators
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorState {
    pub s_subj: WorkloadLevel,
    pub s_obj: WorkloadLevel,
    pub views: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamState {
    pub operators: Vec<OperatorState>,
    pub set_index: usize,
    pub current_team_perf: PerformanceScore,
    pub terminated: bool,
}

impl TeamState {
    /// Builds a state at set 0 and evaluates its team performance.
    pub fn new(operators: Vec<OperatorState>, hpm: &HpmParams) -> Self {
        let perf = evaluate_team(&operators, hpm);
        Self {
            operators,
            set_index: 0,
            current_team_perf: perf,
            terminated: false,
        }
    }

    pub fn views(&self) -> AllocationAction {
        AllocationAction::new(self.operators.iter().map(|o| o.views).collect())
    }
}

fn evaluate_team(operators: &[OperatorState], hpm: &HpmParams) -> PerformanceScore {
    let perfs: Vec<PerformanceScore> = operators
        .iter()
        .map(|o| operator_performance(o.s_subj, o.s_obj, hpm))
        .collect();
    team_performance(&perfs).unwrap_or(PerformanceScore(0.0))
}

/// Absolute view assignment, one entry per operator.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AllocationAction {
    pub views: Vec<usize>,
}

impl AllocationAction {
    pub fn new(views: Vec<usize>) -> Self {
        Self { views }
    }

    pub fn is_feasible(&self, config: &EnvConfig) -> bool {
        let max = config.max_views();
        self.views.len() == config.n_operators
            && self.views.iter().sum::<usize>() == config.total_views
            && self
                .views
                .iter()
                .all(|&v| v >= config.min_views && v <= max)
    }

    /// Sum of absolute per-operator view changes.
    pub fn distance(&self, other: &AllocationAction) -> usize {
        self.views
            .iter()
            .zip(&other.views)
            .map(|(&a, &b)| a.abs_diff(b))
            .sum()
    }
}

impl std::fmt::Display for AllocationAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.views.iter().map(|v| v.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// `(s_obj_1..n, s_subj_1..n, views_1..n / total_views)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Observable fields recovered from an [`Observation`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedObservation {
    pub s_obj: Vec<WorkloadLevel>,
    pub s_subj: Vec<WorkloadLevel>,
    pub views: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    InfeasibleAction,
    PerformanceDecrease,
    MissionComplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub team_perf_before: f64,
    pub team_perf_after: f64,
    pub operator_perf: Vec<f64>,
    pub termination: Option<TerminationReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub info: StepInfo,
}

fn equal_split(config: &EnvConfig) -> Vec<usize> {
    let n = config.n_operators;
    let base = config.total_views / n;
    let rem = config.total_views % n;
    (0..n).map(|i| base + usize::from(i < rem)).collect()
}

/// Draws both workload channels uniformly on `[0, 1]` and assigns an equal
/// split of views, remainder to the lowest-index operators.
pub fn reset(
    config: &EnvConfig,
    hpm: &HpmParams,
    seed: u64,
) -> Result<(TeamState, Observation), EnvError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let operators = equal_split(config)
        .into_iter()
        .map(|views| {
            let s_subj = WorkloadLevel::clamped(rng.random::<f64>());
            let s_obj = WorkloadLevel::clamped(rng.random::<f64>());
            OperatorState {
                s_subj,
                s_obj,
                views,
            }
        })
        .collect();
    let state = TeamState::new(operators, hpm);
    let obs = encode_observation(&state, config);
    Ok((state, obs))
}

/// Every composition of `total_views` into `n_operators` parts within the
/// per-operator bounds, in lexicographic order.
pub fn feasible_actions(config: &EnvConfig) -> Vec<AllocationAction> {
    fn extend(
        prefix: &mut Vec<usize>,
        remaining: usize,
        slots: usize,
        min: usize,
        max: usize,
        out: &mut Vec<AllocationAction>,
    ) {
        if slots == 1 {
            if (min..=max).contains(&remaining) {
                prefix.push(remaining);
                out.push(AllocationAction::new(prefix.clone()));
                prefix.pop();
            }
            return;
        }
        for v in min..=max.min(remaining) {
            let rest = remaining - v;
            let rest_slots = slots - 1;
            if rest < rest_slots * min || rest > rest_slots * max {
                continue;
            }
            prefix.push(v);
            extend(prefix, rest, rest_slots, min, max, out);
            prefix.pop();
        }
    }

    let mut out = Vec::new();
    if config.n_operators == 0 {
        return out;
    }
    extend(
        &mut Vec::with_capacity(config.n_operators),
        config.total_views,
        config.n_operators,
        config.min_views,
        config.max_views(),
        &mut out,
    );
    out
}

/// Applies one allocation decision.
///
/// An infeasible action ends the episode with reward 0 and leaves the
/// workloads and views untouched.
pub fn step<R: Rng + ?Sized>(
    state: &mut TeamState,
    action: &AllocationAction,
    config: &EnvConfig,
    hpm: &HpmParams,
    rng: &mut R,
) -> Result<StepResult, EnvError> {
    if state.terminated {
        return Err(EnvError::Terminated);
    }
    if action.views.len() != config.n_operators {
        return Err(EnvError::ActionLength {
            got: action.views.len(),
            expected: config.n_operators,
        });
    }
    let before = state.current_team_perf.value();

    if !action.is_feasible(config) {
        state.terminated = true;
        let operator_perf = state
            .operators
            .iter()
            .map(|o| operator_performance(o.s_subj, o.s_obj, hpm).value())
            .collect();
        return Ok(StepResult {
            observation: encode_observation(state, config),
            reward: 0.0,
            terminated: true,
            info: StepInfo {
                team_perf_before: before,
                team_perf_after: before,
                operator_perf,
                termination: Some(TerminationReason::InfeasibleAction),
            },
        });
    }

    let noise = (config.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, config.noise_sigma).expect("validated sigma"));
    for (op, &new_views) in state.operators.iter_mut().zip(&action.views) {
        let delta_w = config.kappa * (new_views as f64 - op.views as f64);
        let mut s_obj = predict_next_state(op.s_obj, delta_w);
        let mut s_subj = predict_next_state(op.s_subj, delta_w);
        if let Some(n) = &noise {
            s_obj = WorkloadLevel::clamped(s_obj.value() + n.sample(rng));
            s_subj = WorkloadLevel::clamped(s_subj.value() + n.sample(rng));
        }
        op.s_obj = s_obj;
        op.s_subj = s_subj;
        op.views = new_views;
    }

    let operator_perf: Vec<f64> = state
        .operators
        .iter()
        .map(|o| operator_performance(o.s_subj, o.s_obj, hpm).value())
        .collect();
    let after = evaluate_team(&state.operators, hpm).value();
    state.current_team_perf = PerformanceScore(after);
    state.set_index += 1;

    let improved = after >= before;
    let reward = if improved { STEP_REWARD } else { 0.0 };
    let termination = if !improved {
        Some(TerminationReason::PerformanceDecrease)
    } else if state.set_index >= config.sets_per_mission {
        Some(TerminationReason::MissionComplete)
    } else {
        None
    };
    state.terminated = termination.is_some();

    Ok(StepResult {
        observation: encode_observation(state, config),
        reward,
        terminated: state.terminated,
        info: StepInfo {
            team_perf_before: before,
            team_perf_after: after,
            operator_perf,
            termination,
        },
    })
}

pub fn encode_observation(state: &TeamState, config: &EnvConfig) -> Observation {
    let total = config.total_views.max(1) as f64;
    let mut v = Vec::with_capacity(3 * state.operators.len());
    v.extend(state.operators.iter().map(|o| o.s_obj.value()));
    v.extend(state.operators.iter().map(|o| o.s_subj.value()));
    v.extend(
        state
            .operators
            .iter()
            .map(|o| (o.views as f64 / total).clamp(0.0, 1.0)),
    );
    Observation(v)
}

pub fn decode_observation(
    obs: &Observation,
    config: &EnvConfig,
) -> Result<DecodedObservation, EnvError> {
    let n = config.n_operators;
    if obs.0.len() != 3 * n {
        return Err(EnvError::ObservationLength {
            got: obs.0.len(),
            expected: 3 * n,
        });
    }
    Ok(DecodedObservation {
        s_obj: obs.0[..n].iter().map(|&x| WorkloadLevel::clamped(x)).collect(),
        s_subj: obs.0[n..2 * n]
            .iter()
            .map(|&x| WorkloadLevel::clamped(x))
            .collect(),
        views: obs.0[2 * n..]
            .iter()
            .map(|&x| (x * config.total_views as f64).round() as usize)
            .collect(),
    })
}

/// Optional misreporting on simulated ISA answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsaBiasModel {
    pub probability: f64,
    pub offset: i32,
}

impl Default for IsaBiasModel {
    fn default() -> Self {
        Self {
            probability: 0.0,
            offset: 0,
        }
    }
}

/// Quantizes a subjective workload onto the five-point scale, optionally
/// shifted by the bias model.
pub fn simulate_isa_response<R: Rng + ?Sized>(
    s_subj: WorkloadLevel,
    bias: Option<&IsaBiasModel>,
    rng: &mut R,
) -> IsaScore {
    let mut level = (4.0 * s_subj.value()).round() as i32 - 2;
    if let Some(b) = bias {
        if b.probability > 0.0 && rng.random::<f64>() < b.probability {
            level += b.offset;
        }
    }
    IsaScore::new(level.clamp(-2, 2)).expect("clamped")
}

/// Seeded episode runner exposing the discrete feasible-action index set to
/// the trainer.
#[derive(Debug, Clone)]
pub struct AllocationEnv {
    config: EnvConfig,
    hpm: HpmParams,
    actions: Vec<AllocationAction>,
    state: TeamState,
    rng: ChaCha8Rng,
}

impl AllocationEnv {
    pub fn new(config: EnvConfig, hpm: HpmParams) -> Result<Self, EnvError> {
        let (state, _) = reset(&config, &hpm, config.seed)?;
        let actions = feasible_actions(&config);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            hpm,
            actions,
            state,
            rng,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn hpm(&self) -> &HpmParams {
        &self.hpm
    }

    pub fn actions(&self) -> &[AllocationAction] {
        &self.actions
    }

    pub fn state(&self) -> &TeamState {
        &self.state
    }

    pub fn reset_episode(&mut self, seed: u64) -> Observation {
        let (state, obs) = reset(&self.config, &self.hpm, seed).expect("config validated");
        self.state = state;
        // Noise stream is tied to the episode seed but separate from the initial draw.
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.rng.set_stream(1);
        obs
    }

    pub fn step_action(&mut self, action: &AllocationAction) -> Result<StepResult, EnvError> {
        step(
            &mut self.state,
            action,
            &self.config,
            &self.hpm,
            &mut self.rng,
        )
    }

    pub fn step_index(&mut self, index: usize) -> Result<StepResult, EnvError> {
        let action = self
            .actions
            .get(index)
            .cloned()
            .ok_or(EnvError::ActionIndex(index))?;
        self.step_action(&action)
    }
}

impl Environment for AllocationEnv {
    fn observation_dim(&self) -> usize {
        self.config.observation_dim()
    }

    fn action_count(&self) -> usize {
        self.actions.len()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.reset_episode(seed).0
    }

    fn step(&mut self, action: usize) -> EnvStep {
        let r = self
            .step_index(action)
            .expect("trainer only steps live episodes with valid indices");
        EnvStep {
            observation: r.observation.0,
            reward: r.reward,
            done: r.terminated,
        }
    }
}

/// Deterministic per-episode seed derived from a run seed (SplitMix64 mixing).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(index))
}

/// Outcome of one evaluated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    pub initial_team_perf: f64,
    /// Team performance of the state the episode ended in.
    pub final_team_perf: f64,
    /// Mean team performance over the states reached by each step.
    pub mean_team_perf: f64,
    pub episode_return: f64,
    pub steps: usize,
    pub termination: Option<TerminationReason>,
}

/// Plays `episodes` episodes whose initial states come from
/// `derive_seed(seed, i)`. The chooser gets a generator seeded from the same
/// episode seed, so two choosers are paired on identical inputs.
pub fn run_episodes<F>(
    config: &EnvConfig,
    hpm: &HpmParams,
    episodes: usize,
    seed: u64,
    mut choose: F,
) -> Result<Vec<EpisodeRecord>, EnvError>
where
    F: FnMut(&Observation, &TeamState, &mut ChaCha8Rng) -> AllocationAction,
{
    let mut env = AllocationEnv::new(config.clone(), *hpm)?;
    let mut out = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let ep_seed = derive_seed(seed, episode as u64);
        let mut obs = env.reset_episode(ep_seed);
        let mut chooser_rng = ChaCha8Rng::seed_from_u64(ep_seed);
        chooser_rng.set_stream(2);
        let initial = env.state().current_team_perf.value();
        let mut ret = 0.0;
        let mut perf_sum = 0.0;
        let mut steps = 0;
        let mut termination = None;
        while !env.state().terminated {
            let action = choose(&obs, env.state(), &mut chooser_rng);
            let r = env.step_action(&action)?;
            ret += r.reward;
            perf_sum += r.info.team_perf_after;
            steps += 1;
            termination = r.info.termination;
            obs = r.observation;
        }
        out.push(EpisodeRecord {
            episode,
            seed: ep_seed,
            initial_team_perf: initial,
            final_team_perf: env.state().current_team_perf.value(),
            mean_team_perf: if steps > 0 { perf_sum / steps as f64 } else { initial },
            episode_return: ret,
            steps,
            termination,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct TraceHeader<'a> {
    seed: u64,
    config: &'a EnvConfig,
    hpm: &'a HpmParams,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    step: usize,
    action: &'a AllocationAction,
    reward: f64,
    terminated: bool,
    state: &'a TeamState,
    info: BTreeMap<&'static str, f64>,
}

/// JSONL episode trace: one header line with the seed and config, then one
/// line per step.
pub struct EpisodeTraceWriter<W: Write> {
    out: W,
    steps: usize,
}

impl<W: Write> EpisodeTraceWriter<W> {
    pub fn new(
        mut out: W,
        seed: u64,
        config: &EnvConfig,
        hpm: &HpmParams,
    ) -> Result<Self, EnvError> {
        serde_json::to_writer(&mut out, &TraceHeader { seed, config, hpm })?;
        out.write_all(b"\n")?;
        Ok(Self { out, steps: 0 })
    }

    pub fn record(
        &mut self,
        state_after: &TeamState,
        action: &AllocationAction,
        result: &StepResult,
    ) -> Result<(), EnvError> {
        let mut info = BTreeMap::new();
        info.insert("team_perf_before", result.info.team_perf_before);
        info.insert("team_perf_after", result.info.team_perf_after);
        let line = TraceLine {
            step: self.steps,
            action,
            reward: result.reward,
            terminated: result.terminated,
            state: state_after,
            info,
        };
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n")?;
        self.steps += 1;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
