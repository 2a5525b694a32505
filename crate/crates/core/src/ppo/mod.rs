//! Proximal policy optimization for the discrete allocation policy.
//!
//! ```text
//! repeat until total_steps transitions are consumed:
//!   1. roll out the current categorical policy (auto-resetting episodes)
//!   2. GAE(gamma, lambda) advantages, normalized over the batch
//!   3. epochs x shuffled minibatches of the clipped surrogate + value + entropy loss
//! ```

pub mod adam;
pub mod checkpoint;
pub mod net;

use crate::env::{run_episodes, AllocationEnv, EnvConfig, EnvError, EpisodeRecord};
use crate::hpm::HpmParams;
use adam::{clip_grad_norm, Adam};
use net::{softmax, Mlp};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Instant;
use thiserror::Error;

pub use checkpoint::{load_policy, load_policy_for, save_policy};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {0} ratios vs {1} advantages")]
    LengthMismatch(usize, usize),
    #[error("probability ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("shape mismatch: policy expects obs_dim={policy_obs}, n_actions={policy_actions}; environment has obs_dim={env_obs}, n_actions={env_actions}")]
    ShapeMismatch {
        policy_obs: usize,
        policy_actions: usize,
        env_obs: usize,
        env_actions: usize,
    },
    #[error("non-finite weights after update {update} ({detail})")]
    NonFinite { update: usize, detail: String },
    #[error("checkpoint version {found} is not supported (expected {supported})")]
    Version { found: u32, supported: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One transition outcome reported by an [`Environment`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Episodic environment with a fixed discrete action set.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: usize) -> EnvStep;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub rollout_steps: usize,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    pub total_steps: usize,
    pub hidden_sizes: Vec<usize>,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            learning_rate: 3e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            rollout_steps: 2048,
            epochs_per_update: 10,
            minibatch_size: 64,
            total_steps: 100_000,
            hidden_sizes: vec![64, 64],
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.rollout_steps == 0 || self.epochs_per_update == 0 || self.minibatch_size == 0 {
            return bad("rollout_steps, epochs_per_update and minibatch_size must be >= 1");
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden layer sizes must be >= 1");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || self.max_grad_norm < 0.0 {
            return bad("loss coefficients and max_grad_norm must be >= 0");
        }
        Ok(())
    }
}

/// Categorical policy network plus a scalar value network over the same input.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub(crate) hidden_sizes: Vec<usize>,
    pub(crate) policy: Mlp,
    pub(crate) value: Mlp,
}

fn layer_sizes(obs_dim: usize, hidden: &[usize], out: usize) -> Vec<usize> {
    std::iter::once(obs_dim)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(out))
        .collect()
}

impl PolicyParams {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, n_actions: usize, hidden: &[usize], rng: &mut R) -> Self {
        let policy = Mlp::new(&layer_sizes(obs_dim, hidden, n_actions), 0.01, rng);
        let value = Mlp::new(&layer_sizes(obs_dim, hidden, 1), 1.0, rng);
        Self {
            hidden_sizes: hidden.to_vec(),
            policy,
            value,
        }
    }

    /// A policy whose action distribution is uniform everywhere.
    pub fn uniform<R: Rng + ?Sized>(obs_dim: usize, n_actions: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut p = Self::new(obs_dim, n_actions, hidden, rng);
        p.policy.zero_output_layer();
        p
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.policy.output_dim()
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.hidden_sizes
    }

    pub fn policy_net(&self) -> &Mlp {
        &self.policy
    }

    pub fn value_net(&self) -> &Mlp {
        &self.value
    }

    pub fn policy_net_mut(&mut self) -> &mut Mlp {
        &mut self.policy
    }

    pub fn value_net_mut(&mut self) -> &mut Mlp {
        &mut self.value
    }

    pub fn is_finite(&self) -> bool {
        self.policy.is_finite() && self.value.is_finite()
    }

    pub fn check_shape(&self, obs_dim: usize, n_actions: usize) -> Result<(), PpoError> {
        if self.obs_dim() != obs_dim || self.n_actions() != n_actions {
            return Err(PpoError::ShapeMismatch {
                policy_obs: self.obs_dim(),
                policy_actions: self.n_actions(),
                env_obs: obs_dim,
                env_actions: n_actions,
            });
        }
        Ok(())
    }

    pub fn action_probs(&self, obs: &[f64]) -> Vec<f64> {
        softmax(&self.policy.forward(obs), None)
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.value.forward(obs)[0]
    }

    /// Argmax action; ties go to the lowest index.
    pub fn greedy_action(&self, obs: &[f64]) -> usize {
        let logits = self.policy.forward(obs);
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        best
    }

    /// Samples from the categorical distribution; returns the action and its log-probability.
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> (usize, f64) {
        let probs = self.action_probs(obs);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = i;
                break;
            }
        }
        // floating-point tail: never pick a zero-probability action
        while probs[chosen] == 0.0 && chosen > 0 {
            chosen -= 1;
        }
        (chosen, probs[chosen].ln())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// Value estimate of the observation following the last transition
    /// (ignored when that transition ended its episode).
    pub bootstrap_value: f64,
    /// Undiscounted returns of the episodes that finished inside this batch.
    pub completed_returns: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Generalized advantage estimates (not normalized).
pub fn compute_advantages(traj: &Trajectory, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = traj.transitions.len();
    let mut adv = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let tr = &traj.transitions[t];
        let next_value = if t + 1 < n {
            traj.transitions[t + 1].value
        } else {
            traj.bootstrap_value
        };
        let live = if tr.done { 0.0 } else { 1.0 };
        let delta = tr.reward + gamma * next_value * live - tr.value;
        gae = delta + gamma * lambda * live * gae;
        adv[t] = gae;
    }
    adv
}

/// Shifts and scales to zero mean, unit (population) variance; a constant
/// vector becomes all zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { 0.0 };
    }
}

/// Negated mean of `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate_loss(ratios: &[f64], advantages: &[f64], clip_eps: f64) -> Result<f64, PpoError> {
    if ratios.len() != advantages.len() {
        return Err(PpoError::LengthMismatch(ratios.len(), advantages.len()));
    }
    if let Some(&r) = ratios.iter().find(|&&r| r.is_nan() || r <= 0.0) {
        return Err(PpoError::NonPositiveRatio(r));
    }
    if ratios.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| surrogate(r, a, clip_eps))
        .sum();
    Ok(-sum / ratios.len() as f64)
}

fn surrogate(ratio: f64, adv: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * adv).min(clipped * adv)
}

/// Training samples for one gradient step.
#[derive(Debug, Clone, Default)]
pub struct Minibatch {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients {
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
}

impl From<&PpoConfig> for LossCoefficients {
    fn from(c: &PpoConfig) -> Self {
        Self {
            clip_eps: c.clip_eps,
            entropy_coef: c.entropy_coef,
            value_coef: c.value_coef,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    /// `policy_loss - entropy_coef * entropy + value_coef * value_loss`.
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Evaluates the PPO loss on a minibatch and accumulates its gradient with
/// respect to the policy and value parameters.
pub fn loss_and_gradients(
    params: &PolicyParams,
    batch: &Minibatch,
    coefs: LossCoefficients,
    grad_policy: &mut [f64],
    grad_value: &mut [f64],
) -> LossBreakdown {
    let b = batch.len();
    if b == 0 {
        return LossBreakdown::default();
    }
    let inv_b = 1.0 / b as f64;
    let mut out = LossBreakdown::default();
    let mut clipped = 0usize;
    let mut grad_logits = vec![0.0; params.n_actions()];

    for i in 0..b {
        let obs = &batch.observations[i];
        let action = batch.actions[i];
        let adv = batch.advantages[i];

        let cache = params.policy.forward_cached(obs);
        let probs = softmax(cache.output(), None);
        let log_p = probs[action].ln();
        let ratio = (log_p - batch.old_log_probs[i]).exp();
        let unclipped = ratio * adv;
        let clipped_obj = ratio.clamp(1.0 - coefs.clip_eps, 1.0 + coefs.clip_eps) * adv;
        out.policy_loss -= unclipped.min(clipped_obj) * inv_b;
        if (ratio - 1.0).abs() > coefs.clip_eps {
            clipped += 1;
        }
        out.approx_kl += (batch.old_log_probs[i] - log_p) * inv_b;

        let entropy: f64 = -probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>();
        out.entropy += entropy * inv_b;

        // d(-min(..))/d log_p is -r A on the unclipped branch, 0 when clipped.
        let d_logp = if unclipped <= clipped_obj {
            -ratio * adv * inv_b
        } else {
            0.0
        };
        for (j, g) in grad_logits.iter_mut().enumerate() {
            let p = probs[j];
            let onehot = if j == action { 1.0 } else { 0.0 };
            *g = d_logp * (onehot - p);
            if p > 0.0 {
                *g += coefs.entropy_coef * p * (p.ln() + entropy) * inv_b;
            }
        }
        params.policy.backward(&cache, &grad_logits, grad_policy);

        let vcache = params.value.forward_cached(obs);
        let err = vcache.output()[0] - batch.returns[i];
        out.value_loss += err * err * inv_b;
        params
            .value
            .backward(&vcache, &[coefs.value_coef * 2.0 * err * inv_b], grad_value);
    }
    out.clip_fraction = clipped as f64 * inv_b;
    out.total = out.policy_loss - coefs.entropy_coef * out.entropy + coefs.value_coef * out.value_loss;
    out
}

/// Keeps an environment and its in-progress episode between rollouts.
pub struct RolloutCollector<E: Environment> {
    env: E,
    obs: Option<Vec<f64>>,
    episode_return: f64,
}

impl<E: Environment> RolloutCollector<E> {
    pub fn new(env: E) -> Self {
        Self {
            env,
            obs: None,
            episode_return: 0.0,
        }
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    /// Gathers exactly `steps` transitions, resetting finished episodes with
    /// seeds drawn from `rng`.
    pub fn collect<R: Rng + ?Sized>(
        &mut self,
        policy: &PolicyParams,
        steps: usize,
        rng: &mut R,
    ) -> Result<Trajectory, PpoError> {
        policy.check_shape(self.env.observation_dim(), self.env.action_count())?;
        let mut traj = Trajectory {
            transitions: Vec::with_capacity(steps),
            ..Trajectory::default()
        };
        for _ in 0..steps {
            let obs = match self.obs.take() {
                Some(o) => o,
                None => {
                    self.episode_return = 0.0;
                    self.env.reset(rng.next_u64())
                }
            };
            let (action, log_prob) = policy.sample_action(&obs, rng);
            let value = policy.value(&obs);
            let out = self.env.step(action);
            self.episode_return += out.reward;
            if out.done {
                traj.completed_returns.push(self.episode_return);
            } else {
                self.obs = Some(out.observation);
            }
            traj.transitions.push(Transition {
                observation: obs,
                action,
                log_prob,
                reward: out.reward,
                value,
                done: out.done,
            });
        }
        traj.bootstrap_value = self.obs.as_deref().map_or(0.0, |o| policy.value(o));
        Ok(traj)
    }
}

/// One-shot rollout from a freshly built environment.
pub fn collect_rollout<E, F>(
    env_factory: F,
    policy: &PolicyParams,
    steps: usize,
    seed: u64,
) -> Result<Trajectory, PpoError>
where
    E: Environment,
    F: FnOnce() -> E,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RolloutCollector::new(env_factory()).collect(policy, steps, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateStats {
    pub update: usize,
    pub steps: usize,
    /// Mean undiscounted return of episodes completed in this update's
    /// rollout; `None` when no episode finished.
    pub mean_episode_reward: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub updates: Vec<UpdateStats>,
    /// Mean return over the last [`TRAILING_WINDOW`] completed episodes.
    pub trailing_mean_episode_reward: Option<f64>,
    pub episodes: usize,
    pub wall_clock_s: f64,
}

pub const TRAILING_WINDOW: usize = 100;

impl TrainReport {
    /// `step,mean_ep_reward,policy_loss,value_loss,entropy,clip_fraction,approx_kl`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "update",
            "step",
            "mean_ep_reward",
            "policy_loss",
            "value_loss",
            "entropy",
            "clip_fraction",
            "approx_kl",
        ])?;
        for u in &self.updates {
            w.write_record([
                u.update.to_string(),
                u.steps.to_string(),
                u.mean_episode_reward.map(|r| r.to_string()).unwrap_or_default(),
                u.policy_loss.to_string(),
                u.value_loss.to_string(),
                u.entropy.to_string(),
                u.clip_fraction.to_string(),
                u.approx_kl.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub checkpoint_dir: Option<PathBuf>,
    /// Save every this many updates (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
}

/// Trains on the allocation environment.
pub fn train(
    env_config: &EnvConfig,
    ppo_config: &PpoConfig,
    hpm: &HpmParams,
) -> Result<(PolicyParams, TrainReport), PpoError> {
    train_with_options(env_config, ppo_config, hpm, &TrainOptions::default())
}

pub fn train_with_options(
    env_config: &EnvConfig,
    ppo_config: &PpoConfig,
    hpm: &HpmParams,
    options: &TrainOptions,
) -> Result<(PolicyParams, TrainReport), PpoError> {
    let env = AllocationEnv::new(env_config.clone(), *hpm)?;
    train_env(env, ppo_config, options)
}

/// Trains on any [`Environment`].
pub fn train_env<E: Environment>(
    env: E,
    cfg: &PpoConfig,
    options: &TrainOptions,
) -> Result<(PolicyParams, TrainReport), PpoError> {
    cfg.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = PolicyParams::new(env.observation_dim(), env.action_count(), &cfg.hidden_sizes, &mut rng);
    let mut opt_policy = Adam::new(params.policy.params().len(), cfg.learning_rate);
    let mut opt_value = Adam::new(params.value.params().len(), cfg.learning_rate);
    let mut collector = RolloutCollector::new(env);
    let coefs = LossCoefficients::from(cfg);

    let mut updates = Vec::new();
    let mut recent_returns: Vec<f64> = Vec::new();
    let mut episodes = 0;
    let mut consumed = 0;

    while consumed < cfg.total_steps {
        let steps = cfg.rollout_steps.min(cfg.total_steps - consumed);
        let traj = collector.collect(&params, steps, &mut rng)?;
        consumed += steps;
        episodes += traj.completed_returns.len();
        recent_returns.extend(&traj.completed_returns);
        if recent_returns.len() > TRAILING_WINDOW {
            recent_returns.drain(..recent_returns.len() - TRAILING_WINDOW);
        }

        let raw_adv = compute_advantages(&traj, cfg.gamma, cfg.gae_lambda);
        let returns: Vec<f64> = raw_adv
            .iter()
            .zip(&traj.transitions)
            .map(|(a, t)| a + t.value)
            .collect();
        let mut adv = raw_adv;
        normalize_advantages(&mut adv);

        let mut indices: Vec<usize> = (0..traj.len()).collect();
        let mut sums = LossBreakdown::default();
        let mut n_batches = 0usize;
        for _ in 0..cfg.epochs_per_update {
            indices.shuffle(&mut rng);
            for chunk in indices.chunks(cfg.minibatch_size) {
                let batch = Minibatch {
                    observations: chunk.iter().map(|&i| traj.transitions[i].observation.clone()).collect(),
                    actions: chunk.iter().map(|&i| traj.transitions[i].action).collect(),
                    old_log_probs: chunk.iter().map(|&i| traj.transitions[i].log_prob).collect(),
                    advantages: chunk.iter().map(|&i| adv[i]).collect(),
                    returns: chunk.iter().map(|&i| returns[i]).collect(),
                };
                let mut gp = vec![0.0; params.policy.params().len()];
                let mut gv = vec![0.0; params.value.params().len()];
                let l = loss_and_gradients(&params, &batch, coefs, &mut gp, &mut gv);
                clip_grad_norm(&mut gp, cfg.max_grad_norm);
                clip_grad_norm(&mut gv, cfg.max_grad_norm);
                opt_policy.step(params.policy.params_mut(), &gp);
                opt_value.step(params.value.params_mut(), &gv);
                sums.policy_loss += l.policy_loss;
                sums.value_loss += l.value_loss;
                sums.entropy += l.entropy;
                sums.clip_fraction += l.clip_fraction;
                sums.approx_kl += l.approx_kl;
                n_batches += 1;
            }
        }

        let update = updates.len();
        if !params.is_finite() {
            return Err(PpoError::NonFinite {
                update,
                detail: format!("policy_loss={} value_loss={}", sums.policy_loss, sums.value_loss),
            });
        }
        let nb = n_batches.max(1) as f64;
        let mean_episode_reward = (!traj.completed_returns.is_empty()).then(|| {
            traj.completed_returns.iter().sum::<f64>() / traj.completed_returns.len() as f64
        });
        updates.push(UpdateStats {
            update,
            steps: consumed,
            mean_episode_reward,
            policy_loss: sums.policy_loss / nb,
            value_loss: sums.value_loss / nb,
            entropy: sums.entropy / nb,
            clip_fraction: sums.clip_fraction / nb,
            approx_kl: sums.approx_kl / nb,
        });

        if let Some(dir) = &options.checkpoint_dir {
            if options.checkpoint_every > 0 && (update + 1) % options.checkpoint_every == 0 {
                std::fs::create_dir_all(dir)?;
                save_policy(&params, &dir.join(format!("checkpoint_{:05}.json", update + 1)))?;
            }
        }
    }

    let trailing = (!recent_returns.is_empty())
        .then(|| recent_returns.iter().sum::<f64>() / recent_returns.len() as f64);
    Ok((
        params,
        TrainReport {
            updates,
            trailing_mean_episode_reward: trailing,
            episodes,
            wall_clock_s: started.elapsed().as_secs_f64(),
        },
    ))
}

/// How an evaluated policy turns its distribution into an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSelection {
    Greedy,
    Sample,
}

/// Runs `episodes` seeded episodes with argmax action selection.
pub fn evaluate_policy(
    policy: &PolicyParams,
    env_config: &EnvConfig,
    hpm: &HpmParams,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeRecord>, PpoError> {
    evaluate_policy_with(policy, env_config, hpm, episodes, seed, ActionSelection::Greedy)
}

pub fn evaluate_policy_with(
    policy: &PolicyParams,
    env_config: &EnvConfig,
    hpm: &HpmParams,
    episodes: usize,
    seed: u64,
    selection: ActionSelection,
) -> Result<Vec<EpisodeRecord>, PpoError> {
    let actions = crate::env::feasible_actions(env_config);
    policy.check_shape(env_config.observation_dim(), actions.len())?;
    let records = run_episodes(env_config, hpm, episodes, seed, |obs, _state, rng| {
        let idx = match selection {
            ActionSelection::Greedy => policy.greedy_action(obs.as_slice()),
            ActionSelection::Sample => policy.sample_action(obs.as_slice(), rng).0,
        };
        actions[idx].clone()
    })?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(reward: f64, value: f64, done: bool) -> Transition {
        Transition {
            observation: vec![],
            action: 0,
            log_prob: 0.0,
            reward,
            value,
            done,
        }
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(clipped_surrogate_loss(&[1.0], &[0.7], 0.2).unwrap(), -0.7);
        assert!((clipped_surrogate_loss(&[1.5], &[1.0], 0.2).unwrap() + 1.2).abs() < 1e-12);
        assert!((clipped_surrogate_loss(&[0.5], &[-1.0], 0.2).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn surrogate_errors() {
        assert!(matches!(
            clipped_surrogate_loss(&[1.0, 1.0], &[1.0], 0.2),
            Err(PpoError::LengthMismatch(2, 1))
        ));
        assert!(matches!(
            clipped_surrogate_loss(&[0.0], &[1.0], 0.2),
            Err(PpoError::NonPositiveRatio(_))
        ));
    }

    #[test]
    fn huge_clip_matches_unclipped_surrogate() {
        let r = [0.3, 1.7, 0.9, 2.5];
        let a = [1.0, -2.0, 0.5, 3.0];
        let unclipped = -r.iter().zip(&a).map(|(r, a)| r * a).sum::<f64>() / 4.0;
        let l = clipped_surrogate_loss(&r, &a, 1e9).unwrap();
        assert!((l - unclipped).abs() < 1e-12);
    }

    #[test]
    fn advantages_zero_for_zero_rewards_and_values() {
        let traj = Trajectory {
            transitions: vec![tr(0.0, 0.0, false), tr(0.0, 0.0, false), tr(0.0, 0.0, true)],
            ..Default::default()
        };
        assert_eq!(compute_advantages(&traj, 0.99, 0.95), vec![0.0; 3]);
    }

    #[test]
    fn single_step_episode_advantage_is_reward() {
        let traj = Trajectory {
            transitions: vec![tr(0.33, 0.0, true)],
            bootstrap_value: 123.0,
            ..Default::default()
        };
        for g in [0.5, 0.99, 1.0] {
            assert_eq!(compute_advantages(&traj, g, 0.95), vec![0.33]);
        }
    }

    #[test]
    fn normalization_zero_mean_unit_variance() {
        let mut a = vec![1.0, 2.0, 3.0, 4.0];
        normalize_advantages(&mut a);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        let mut c = vec![0.5; 3];
        normalize_advantages(&mut c);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        for bad in [
            PpoConfig { clip_eps: 0.0, ..Default::default() },
            PpoConfig { clip_eps: 1.0, ..Default::default() },
            PpoConfig { gamma: 0.0, ..Default::default() },
            PpoConfig { gae_lambda: 1.1, ..Default::default() },
            PpoConfig { minibatch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn policy_distribution_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = PolicyParams::new(6, 5, &[8], &mut rng);
        let probs = p.action_probs(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let (a, lp) = p.sample_action(&[0.1; 6], &mut rng);
        assert!((lp - p.action_probs(&[0.1; 6])[a].ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_total_steps_returns_initial_policy() {
        let cfg = PpoConfig {
            total_steps: 0,
            hidden_sizes: vec![8],
            ..Default::default()
        };
        let env = AllocationEnv::new(EnvConfig::default(), HpmParams::default()).unwrap();
        let (p, report) = train_env(env, &cfg, &TrainOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fresh = PolicyParams::new(6, 5, &[8], &mut rng);
        assert_eq!(p, fresh);
        assert!(report.updates.is_empty());
    }

    #[test]
    fn shape_mismatch_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = PolicyParams::new(4, 5, &[8], &mut rng);
        let err = collect_rollout(
            || AllocationEnv::new(EnvConfig::default(), HpmParams::default()).unwrap(),
            &p,
            10,
            0,
        );
        assert!(matches!(err, Err(PpoError::ShapeMismatch { .. })));
    }
}
