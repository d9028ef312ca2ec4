//! Iterated best response with a tiny actor-critic trained by PPO.
//!
//! The actor maps the scaled observation `(n, t, m)` through two hidden
//! layers of four ReLU units to one logit per payment `0..=F`; payments that
//! would push the total above F are masked out before the softmax. The
//! critic has three hidden layers of 32 ReLU units. All agents in the queue
//! share the current policy and every terminal agent's trajectory is used
//! for the update. One outer iteration runs `cycles` rounds of
//! collect-then-update starting from the previous iterate's weights.

pub mod nn;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::QueueConfig;
use crate::error::{Error, Result};
use crate::game::{self, AgentId, Profile};
use crate::rng::{AgentStreams, SeedKey};
use crate::strategy::{ActionDistribution, Observation, Strategy};

pub use nn::{Mlp, Optimizer};

pub const ACTOR_HIDDEN: [usize; 2] = [4, 4];
pub const CRITIC_HIDDEN: [usize; 3] = [32, 32, 32];

/// Weights of both networks plus the observation scaling constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
    pub n_scale: f64,
    pub t_scale: f64,
    pub m_scale: f64,
}

impl PolicyParams {
    /// Random hidden layers; the actor's output layer starts at zero so the
    /// initial policy is uniform over feasible payments.
    pub fn init<R: Rng + ?Sized>(cfg: &QueueConfig, rng: &mut R) -> Self {
        let mut actor = Mlp::new_alive(&actor_widths(cfg.fine), &probe_inputs(), rng);
        if let Some(out) = actor.layers.last_mut() {
            out.weights.iter_mut().for_each(|w| *w = 0.0);
            out.bias.iter_mut().for_each(|w| *w = 0.0);
        }
        let critic = Mlp::new(&critic_widths(), rng);
        let [n_scale, t_scale, m_scale] = scales(cfg);
        PolicyParams {
            actor,
            critic,
            n_scale,
            t_scale,
            m_scale,
        }
    }

    pub fn check_shapes(&self, fine: u32) -> Result<()> {
        let want = actor_widths(fine);
        if self.actor.widths() != want {
            return Err(Error::validation(
                "policy",
                format!("actor widths {:?}, expected {:?}", self.actor.widths(), want),
            ));
        }
        if self.critic.widths() != critic_widths() {
            return Err(Error::validation(
                "policy",
                format!("critic widths {:?}", self.critic.widths()),
            ));
        }
        for l in self.actor.layers.iter().chain(&self.critic.layers) {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::validation("policy", "layer arrays do not match shapes"));
            }
        }
        if !self.actor.is_finite() || !self.critic.is_finite() {
            return Err(Error::validation("policy", "non-finite weights"));
        }
        Ok(())
    }

    pub fn scale(&self, obs: &Observation) -> [f64; 3] {
        [
            obs.n as f64 / self.n_scale,
            obs.t as f64 / self.t_scale,
            obs.m as f64 / self.m_scale,
        ]
    }

    pub fn value(&self, scaled: &[f64; 3]) -> f64 {
        self.critic.forward(scaled)[0]
    }
}

/// Corners of the scaled observation cube.
fn probe_inputs() -> Vec<Vec<f64>> {
    (0..8)
        .map(|i| vec![(i & 1) as f64, (i >> 1 & 1) as f64, (i >> 2 & 1) as f64])
        .collect()
}

fn actor_widths(fine: u32) -> Vec<usize> {
    let mut w = vec![3];
    w.extend(ACTOR_HIDDEN);
    w.push(fine as usize + 1);
    w
}

fn critic_widths() -> Vec<usize> {
    let mut w = vec![3];
    w.extend(CRITIC_HIDDEN);
    w.push(1);
    w
}

fn scales(cfg: &QueueConfig) -> [f64; 3] {
    [
        (cfg.max_queue_len() as f64).max(1.0),
        cfg.period as f64,
        cfg.fine as f64,
    ]
}

/// `(n / (x0 + x T), t / T, m / F)`.
pub fn scale_observation(obs: &Observation, cfg: &QueueConfig) -> [f64; 3] {
    let [a, b, c] = scales(cfg);
    [obs.n as f64 / a, obs.t as f64 / b, obs.m as f64 / c]
}

/// Softmax over the feasible payments `0..=F-m`; the rest get probability 0.
pub fn actor_forward(
    params: &PolicyParams,
    scaled: &[f64; 3],
    m: u32,
    fine: u32,
) -> Result<ActionDistribution> {
    if m > fine {
        return Err(Error::Invariant(format!("paid {m} exceeds the fine {fine}")));
    }
    let logits = params.actor.forward(scaled);
    if logits.len() != fine as usize + 1 {
        return Err(Error::validation("policy", "actor output does not match the fine"));
    }
    Ok(ActionDistribution::from_normalized(masked_softmax(&logits, (fine - m) as usize)))
}

fn masked_softmax(logits: &[f64], max_action: usize) -> Vec<f64> {
    let feasible = &logits[..=max_action];
    let top = feasible.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(feasible) {
        *p = (z - top).exp();
        sum += *p;
    }
    probs[..=max_action].iter_mut().for_each(|p| *p /= sum);
    probs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Learning hyperparameters; defaults are the reference table values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Minibatch updates per collect cycle.
    pub updates_per_cycle: usize,
    /// Collect-and-update cycles per outer iteration.
    pub cycles: usize,
    /// Transitions per collected buffer.
    pub buffer: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy: f64,
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
    pub normalize_advantages: bool,
    /// Share of agents following the policy being trained while the rest
    /// keep the previous iterate; 1 trains in pure self-play.
    pub learner_share: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            clip: 0.05,
            gamma: 1.0,
            lambda: 0.95,
            updates_per_cycle: 16,
            cycles: 512,
            buffer: 10_000,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            entropy: 1e-3,
            grad_clip: 0.1,
            optimizer: OptimizerKind::Adam,
            normalize_advantages: true,
            learner_share: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("clip", self.clip),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(Error::validation(name, "must be positive"));
            }
        }
        if self.clip >= 1.0 {
            return Err(Error::validation("clip", "must be below 1"));
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::validation(name, "must lie in (0, 1]"));
            }
        }
        if self.entropy < 0.0 {
            return Err(Error::validation("entropy", "must be non-negative"));
        }
        if !(self.learner_share > 0.0 && self.learner_share <= 1.0) {
            return Err(Error::validation("learner_share", "must lie in (0, 1]"));
        }
        if self.updates_per_cycle == 0 || self.buffer == 0 {
            return Err(Error::validation("updates_per_cycle", "must be positive"));
        }
        Ok(())
    }

    fn optimizer(&self, net: &Mlp) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Adam => Optimizer::adam(net),
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }
}

/// Generalised advantage estimates for one trajectory ending in a terminal
/// state (bootstrap value 0).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::validation(
            "trajectory",
            format!("{} rewards but {} values", rewards.len(), values.len()),
        ));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut next_value = 0.0;
    let mut running = 0.0;
    for i in (0..rewards.len()).rev() {
        let delta = rewards[i] + gamma * next_value - values[i];
        running = delta + gamma * lambda * running;
        adv[i] = running;
        next_value = values[i];
    }
    Ok(adv)
}

/// One decision of one terminal agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: [f64; 3],
    pub m: u32,
    pub action: u32,
    pub logp: f64,
    pub reward: f64,
}

/// Completed trajectories, stored back to back.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryBuffer {
    pub steps: Vec<Step>,
    /// `[start, end)` of each trajectory in `steps`.
    pub bounds: Vec<(usize, usize)>,
    pub capacity: usize,
}

impl TrajectoryBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &[Step]> {
        self.bounds.iter().map(|&(a, b)| &self.steps[a..b])
    }

    fn try_push(&mut self, traj: Vec<Step>) -> bool {
        if self.steps.len() + traj.len() > self.capacity {
            return false;
        }
        let start = self.steps.len();
        self.steps.extend(traj);
        self.bounds.push((start, self.steps.len()));
        true
    }
}

/// Runs episodes with every agent on `policy` and keeps whole trajectories of
/// terminal agents until the next one would not fit in `capacity`.
pub fn collect(
    policy: &Arc<PolicyParams>,
    cfg: &QueueConfig,
    key: SeedKey,
    capacity: usize,
) -> Result<TrajectoryBuffer> {
    collect_against(policy, policy, 1.0, cfg, key, capacity)
}

/// Like [`collect`], but each entrant follows `learner` only with
/// probability `share` and `frozen` otherwise; only the learner's
/// trajectories are kept.
pub fn collect_against(
    learner: &Arc<PolicyParams>,
    frozen: &Arc<PolicyParams>,
    share: f64,
    cfg: &QueueConfig,
    key: SeedKey,
    capacity: usize,
) -> Result<TrajectoryBuffer> {
    let learn = Strategy::policy(learner.clone(), cfg)?;
    let (profile, learner_tag) = if share >= 1.0 {
        (Profile::uniform(learn), 0)
    } else {
        (Profile::mixed(Strategy::policy(frozen.clone(), cfg)?, learn, share), 1)
    };
    let mut buffer = TrajectoryBuffer {
        capacity,
        ..Default::default()
    };
    let mut full = false;
    let mut episode = 0u64;
    while !full {
        let ep = key.child("episode", episode);
        let mut draws = AgentStreams::new(ep.child("agents", 0));
        let mut tags = ep.child("tags", 0).rng();
        let mut pending: HashMap<AgentId, Vec<Step>> = HashMap::new();
        let mut finished: Vec<Vec<Step>> = Vec::new();
        let mut terminals = 0usize;
        game::run_queue_with(cfg, &profile, &mut draws, &mut tags, |out| {
            for d in out.decisions.iter().filter(|d| d.tag == learner_tag) {
                pending.entry(d.id).or_default().push(Step {
                    obs: learner.scale(&d.obs),
                    m: d.obs.m,
                    action: d.action,
                    logp: d.prob.ln(),
                    reward: 0.0,
                });
            }
            terminals += out.terminals.len();
            for t in &out.terminals {
                if let Some(mut traj) = pending.remove(&t.agent.id) {
                    if let Some(last) = traj.last_mut() {
                        last.reward = t.utility as f64;
                    }
                    finished.push(traj);
                }
            }
        })?;
        if terminals == 0 {
            break;
        }
        for traj in finished {
            if !buffer.try_push(traj) {
                full = true;
                break;
            }
        }
        episode += 1;
        if episode > 1_000_000 {
            return Err(Error::Resource("could not fill the trajectory buffer".into()));
        }
    }
    Ok(buffer)
}

/// A training example with its advantage and return.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: [f64; 3],
    pub m: u32,
    pub action: u32,
    pub old_logp: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Values from the current critic, GAE per trajectory, optional advantage
/// normalisation over the whole buffer.
pub fn prepare_samples(
    buffer: &TrajectoryBuffer,
    params: &PolicyParams,
    hyper: &Hyperparams,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(buffer.len());
    for traj in buffer.trajectories() {
        let values: Vec<f64> = traj.iter().map(|s| params.value(&s.obs)).collect();
        let rewards: Vec<f64> = traj.iter().map(|s| s.reward).collect();
        let adv = gae(&rewards, &values, hyper.gamma, hyper.lambda)?;
        for ((s, a), v) in traj.iter().zip(adv).zip(values) {
            out.push(Sample {
                obs: s.obs,
                m: s.m,
                action: s.action,
                old_logp: s.logp,
                advantage: a,
                ret: a + v,
            });
        }
    }
    if hyper.normalize_advantages && out.len() > 1 {
        let n = out.len() as f64;
        let mean = out.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = out.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-8);
        out.iter_mut().for_each(|s| s.advantage = (s.advantage - mean) / sd);
    }
    Ok(out)
}

/// Clipped surrogate plus entropy bonus, negated for minimisation, with its
/// gradient.
pub fn actor_loss(
    actor: &Mlp,
    batch: &[Sample],
    fine: u32,
    hyper: &Hyperparams,
) -> (f64, Mlp) {
    let mut grad = actor.zeros_like();
    let b = batch.len().max(1) as f64;
    let mut loss = 0.0;
    for s in batch {
        let tape = actor.forward_tape(&s.obs);
        let feasible = (fine - s.m) as usize;
        let probs = masked_softmax(tape.output(), feasible);
        let a = s.action as usize;
        let logp = probs[a].ln();
        let ratio = (logp - s.old_logp).exp();
        let unclipped = ratio * s.advantage;
        let clipped = ratio.clamp(1.0 - hyper.clip, 1.0 + hyper.clip) * s.advantage;
        let surrogate = unclipped.min(clipped);
        let entropy: f64 = -probs[..=feasible]
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>();
        loss -= (surrogate + hyper.entropy * entropy) / b;

        // d surrogate / d logp(a)
        let ds = if unclipped <= clipped { unclipped } else { 0.0 };
        let mut d_logits = vec![0.0; probs.len()];
        for j in 0..=feasible {
            let dlogp = if j == a { 1.0 - probs[j] } else { -probs[j] };
            let dent = if probs[j] > 0.0 {
                -probs[j] * (probs[j].ln() + entropy)
            } else {
                0.0
            };
            d_logits[j] = -(ds * dlogp + hyper.entropy * dent) / b;
        }
        actor.backward(&tape, &d_logits, &mut grad);
    }
    (loss, grad)
}

/// Mean squared return error with its gradient.
pub fn critic_loss(critic: &Mlp, batch: &[Sample]) -> (f64, Mlp) {
    let mut grad = critic.zeros_like();
    let b = batch.len().max(1) as f64;
    let mut loss = 0.0;
    for s in batch {
        let tape = critic.forward_tape(&s.obs);
        let err = tape.output()[0] - s.ret;
        loss += err * err / b;
        critic.backward(&tape, &[2.0 * err / b], &mut grad);
    }
    (loss, grad)
}

fn clip_norm(grad: &mut Mlp, max: f64) {
    let n = grad.norm();
    if n > max {
        grad.scale(max / n);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
}

/// Optimiser state carried across the cycles of one outer iteration.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub actor: Optimizer,
    pub critic: Optimizer,
}

impl OptimState {
    pub fn new(params: &PolicyParams, hyper: &Hyperparams) -> Self {
        OptimState {
            actor: hyper.optimizer(&params.actor),
            critic: hyper.optimizer(&params.critic),
        }
    }
}

/// One pass over `samples` split into `updates_per_cycle` shuffled
/// minibatches.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    optim: &mut OptimState,
    samples: &mut [Sample],
    fine: u32,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<UpdateStats> {
    if samples.is_empty() {
        return Err(Error::validation("buffer", "no samples to train on"));
    }
    samples.shuffle(rng);
    let batches = hyper.updates_per_cycle.min(samples.len());
    let size = samples.len().div_ceil(batches);
    let mut stats = UpdateStats::default();
    for batch in samples.chunks(size) {
        let (la, mut ga) = actor_loss(&params.actor, batch, fine, hyper);
        let (lc, mut gc) = critic_loss(&params.critic, batch);
        if !la.is_finite() || !lc.is_finite() {
            return Err(Error::Diverged(format!(
                "actor loss {la}, critic loss {lc}"
            )));
        }
        clip_norm(&mut ga, hyper.grad_clip);
        clip_norm(&mut gc, hyper.grad_clip);
        optim.actor.step(&mut params.actor, &ga, hyper.actor_lr);
        optim.critic.step(&mut params.critic, &gc, hyper.critic_lr);
        stats.actor_loss = la;
        stats.critic_loss = lc;
    }
    if !params.actor.is_finite() || !params.critic.is_finite() {
        return Err(Error::Diverged("non-finite weights after update".into()));
    }
    Ok(stats)
}

/// One outer iteration: `hyper.cycles` collect/update cycles warm-started
/// from `policy`.
pub fn best_response_iterate(
    policy: &PolicyParams,
    cfg: &QueueConfig,
    hyper: &Hyperparams,
    seed: u64,
    tau: u64,
) -> Result<PolicyParams> {
    hyper.validate()?;
    let key = SeedKey::master(seed).child("iteration", tau);
    let mut params = policy.clone();
    let frozen = Arc::new(policy.clone());
    let mut optim = OptimState::new(&params, hyper);
    for cycle in 0..hyper.cycles as u64 {
        let shared = Arc::new(params.clone());
        let buffer = collect_against(
            &shared,
            &frozen,
            hyper.learner_share,
            cfg,
            key.child("collect", cycle),
            hyper.buffer,
        )?;
        if buffer.is_empty() {
            break;
        }
        let mut samples = prepare_samples(&buffer, &params, hyper)?;
        let mut rng = key.child("shuffle", cycle).rng();
        ppo_update(&mut params, &mut optim, &mut samples, cfg.fine, hyper, &mut rng)?;
    }
    Ok(params)
}

/// Initial policy of a training run.
pub fn initial_policy(cfg: &QueueConfig, seed: u64) -> PolicyParams {
    PolicyParams::init(cfg, &mut SeedKey::master(seed).child("init", 0).rng())
}

pub const CHECKPOINT_FORMAT: &str = "finequeue-policy/1";

/// Portable policy file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub iteration: u64,
    pub seed: u64,
    pub config: QueueConfig,
    pub hyper: Hyperparams,
    pub policy: PolicyParams,
}

impl Checkpoint {
    pub fn new(policy: PolicyParams, cfg: &QueueConfig, hyper: &Hyperparams, seed: u64, iteration: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            iteration,
            seed,
            config: cfg.clone(),
            hyper: hyper.clone(),
            policy,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format {:?}", c.format)));
        }
        c.policy.check_shapes(c.config.fine)?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}
