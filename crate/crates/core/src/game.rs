//! One Round and the Queue loop that repeats it.
//!
//! A Round has three phases: every agent declares a distribution and a
//! payment is sampled (with probability `p` it is replaced by 0); totals and
//! round counters are updated and the queue is stable-sorted by average
//! payment `m / t`; then agents are removed in order: those who reached the
//! fine, the first `k` remaining (charged `Q` on top), and those whose
//! judiciary period ran out.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::QueueConfig;
use crate::error::{Error, Result};
use crate::rng::{AgentStreams, DrawSource, SeedKey};
use crate::strategy::{sample_payment, BrsMemory, Observation, Strategy};

pub type AgentId = u64;

/// One offender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    /// 1-based position in the current ordering.
    pub n: usize,
    /// Rounds participated so far.
    pub t: u32,
    /// Total paid so far.
    pub m: u32,
    /// Index into the profile's strategy list.
    pub tag: usize,
    /// First round this agent plays.
    pub entry_round: u32,
    #[serde(skip)]
    pub memory: BrsMemory,
}

impl AgentState {
    pub fn fresh(id: AgentId, n: usize, tag: usize, entry_round: u32) -> Self {
        AgentState {
            id,
            n,
            t: 0,
            m: 0,
            tag,
            entry_round,
            memory: BrsMemory::default(),
        }
    }

    pub fn observation(&self) -> Observation {
        Observation {
            n: self.n,
            t: self.t,
            m: self.m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    PaidFine,
    Punished,
    Expired,
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub agent: AgentState,
    pub utility: i64,
    pub reason: Reason,
}

/// What one agent did in phase 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub id: AgentId,
    pub tag: usize,
    pub obs: Observation,
    /// Action drawn from the declared distribution.
    pub action: u32,
    /// Probability of `action` under the declared distribution.
    pub prob: f64,
    /// Amount actually paid (0 if the agent forgot).
    pub payment: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round: u32,
    pub survivors: Vec<AgentState>,
    pub terminals: Vec<Terminal>,
    pub payments: BTreeMap<AgentId, u32>,
    pub decisions: Vec<Decision>,
}

impl RoundOutcome {
    pub fn revenue(&self) -> u64 {
        self.terminals.iter().map(|t| t.agent.m as u64).sum()
    }
}

/// Strategy list plus the rule that assigns a strategy to each entrant.
#[derive(Debug, Clone)]
pub struct Profile {
    pub strategies: Vec<Strategy>,
    pub default_tag: usize,
    /// Each entrant independently takes tag `.1` with probability `.0`.
    pub mix: Option<(f64, usize)>,
    /// Fixed tags for specific agent ids; wins over `mix`.
    pub overrides: BTreeMap<AgentId, usize>,
}

impl Profile {
    pub fn uniform(strategy: Strategy) -> Self {
        Profile {
            strategies: vec![strategy],
            default_tag: 0,
            mix: None,
            overrides: BTreeMap::new(),
        }
    }

    /// Tag 0 follows `base`; each entrant switches to `other` (tag 1) with
    /// probability `rho`.
    pub fn mixed(base: Strategy, other: Strategy, rho: f64) -> Self {
        Profile {
            strategies: vec![base, other],
            default_tag: 0,
            mix: Some((rho, 1)),
            overrides: BTreeMap::new(),
        }
    }

    /// Makes agent `id` follow `strategy`; returns the tag used.
    pub fn with_override(mut self, id: AgentId, strategy: Strategy) -> Self {
        self.strategies.push(strategy);
        let tag = self.strategies.len() - 1;
        self.overrides.insert(id, tag);
        self
    }

    /// Makes several agents share one extra strategy.
    pub fn with_group(mut self, ids: impl IntoIterator<Item = AgentId>, strategy: Strategy) -> Self {
        self.strategies.push(strategy);
        let tag = self.strategies.len() - 1;
        for id in ids {
            self.overrides.insert(id, tag);
        }
        self
    }

    fn assign(&self, id: AgentId, tag_rng: &mut ChaCha8Rng) -> usize {
        let drawn = self.mix.map(|(rho, tag)| (tag_rng.random::<f64>() < rho, tag));
        if let Some(&tag) = self.overrides.get(&id) {
            return tag;
        }
        match drawn {
            Some((true, tag)) => tag,
            _ => self.default_tag,
        }
    }

    pub fn strategy(&self, tag: usize) -> Result<&Strategy> {
        self.strategies
            .get(tag)
            .ok_or_else(|| Error::Invariant(format!("no strategy for tag {tag}")))
    }
}

/// Ascending by `m / t` using exact cross-multiplication; stable on ties.
pub fn stable_sort_by_ratio(agents: &mut [AgentState]) -> Result<()> {
    if let Some(a) = agents.iter().find(|a| a.t == 0) {
        return Err(Error::Invariant(format!(
            "agent {} has t = 0 at sorting time",
            a.id
        )));
    }
    agents.sort_by(cmp_ratio);
    renumber(agents);
    Ok(())
}

fn cmp_ratio(a: &AgentState, b: &AgentState) -> Ordering {
    (a.m as u64 * b.t as u64).cmp(&(b.m as u64 * a.t as u64))
}

fn renumber(agents: &mut [AgentState]) {
    for (i, a) in agents.iter_mut().enumerate() {
        a.n = i + 1;
    }
}

/// Phase 1: declarations and sampled payments, in queue order.
pub fn declare(
    agents: &mut [AgentState],
    profile: &Profile,
    cfg: &QueueConfig,
    draws: &mut dyn DrawSource,
    round: u32,
) -> Result<Vec<Decision>> {
    let mut out = Vec::with_capacity(agents.len());
    for a in agents.iter_mut() {
        let obs = a.observation();
        let dist = profile.strategy(a.tag)?.decide(&obs, &mut a.memory, cfg)?;
        let draw = draws.draw(a.id, round);
        let action = dist.sample(draw.action_u);
        let payment = sample_payment(&dist, cfg.ignorance, draw);
        out.push(Decision {
            id: a.id,
            tag: a.tag,
            obs,
            action,
            prob: dist.probs()[action as usize],
            payment,
        });
    }
    Ok(out)
}

/// Phases 2 and 3 for already realised payments (`payments[i]` belongs to
/// `agents[i]`).
pub fn resolve_round(
    mut agents: Vec<AgentState>,
    payments: &[u32],
    cfg: &QueueConfig,
) -> Result<(Vec<AgentState>, Vec<Terminal>)> {
    if payments.len() != agents.len() {
        return Err(Error::Invariant("one payment per agent expected".into()));
    }
    for (a, &mu) in agents.iter_mut().zip(payments) {
        a.m += mu;
        a.t += 1;
    }
    stable_sort_by_ratio(&mut agents)?;

    let mut terminals = Vec::new();
    let mut remaining = Vec::with_capacity(agents.len());
    for a in agents {
        if a.m >= cfg.fine {
            terminals.push(terminal(a, Reason::PaidFine));
        } else {
            remaining.push(a);
        }
    }
    let punish = (cfg.punished as usize).min(remaining.len());
    let rest = remaining.split_off(punish);
    for mut a in remaining {
        a.m += cfg.legal_cost;
        terminals.push(terminal(a, Reason::Punished));
    }
    let mut survivors = Vec::with_capacity(rest.len());
    for a in rest {
        if a.t >= cfg.period {
            terminals.push(terminal(a, Reason::Expired));
        } else {
            survivors.push(a);
        }
    }
    renumber(&mut survivors);
    Ok((survivors, terminals))
}

fn terminal(agent: AgentState, reason: Reason) -> Terminal {
    Terminal {
        utility: -(agent.m as i64),
        agent,
        reason,
    }
}

/// One full Round.
pub fn play_round(
    mut agents: Vec<AgentState>,
    profile: &Profile,
    cfg: &QueueConfig,
    draws: &mut dyn DrawSource,
    round: u32,
) -> Result<RoundOutcome> {
    let decisions = declare(&mut agents, profile, cfg, draws, round)?;
    let payments: Vec<u32> = decisions.iter().map(|d| d.payment).collect();
    let map = decisions.iter().map(|d| (d.id, d.payment)).collect();
    let (survivors, terminals) = resolve_round(agents, &payments, cfg)?;
    Ok(RoundOutcome {
        round,
        survivors,
        terminals,
        payments: map,
        decisions,
    })
}

/// Runs one episode, handing each round to `sink` as it completes. The last
/// round's outcome already contains the horizon terminations.
pub fn run_queue_with(
    cfg: &QueueConfig,
    profile: &Profile,
    draws: &mut dyn DrawSource,
    tag_rng: &mut ChaCha8Rng,
    mut sink: impl FnMut(&RoundOutcome),
) -> Result<()> {
    cfg.validate()?;
    let mut next_id: AgentId = 0;
    let mut agents = Vec::with_capacity(cfg.max_queue_len());
    for i in 0..cfg.initial as usize {
        let tag = profile.assign(next_id, tag_rng);
        agents.push(AgentState::fresh(next_id, i + 1, tag, 1));
        next_id += 1;
    }
    for round in 1..=cfg.horizon {
        let mut outcome = play_round(agents, profile, cfg, draws, round)?;
        if round == cfg.horizon {
            for a in std::mem::take(&mut outcome.survivors) {
                outcome.terminals.push(terminal(a, Reason::Horizon));
            }
            agents = Vec::new();
        } else {
            agents = outcome.survivors.clone();
            let base = agents.len();
            for i in 0..cfg.entrants as usize {
                let tag = profile.assign(next_id, tag_rng);
                agents.push(AgentState::fresh(next_id, base + i + 1, tag, round + 1));
                next_id += 1;
            }
        }
        sink(&outcome);
    }
    Ok(())
}

/// Draw sources for episode `episode` of a run seeded with `seed`.
pub fn episode_streams(seed: u64, episode: u64) -> (AgentStreams, ChaCha8Rng) {
    let key = SeedKey::master(seed).child("episode", episode);
    (AgentStreams::new(key.child("agents", 0)), key.child("tags", 0).rng())
}

/// Full record of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub config: QueueConfig,
    pub seed: u64,
    pub episode: u64,
    pub rounds: Vec<RoundOutcome>,
}

/// Runs episode 0 of `cfg.seed`.
pub fn run_queue(cfg: &QueueConfig, profile: &Profile) -> Result<EpisodeLog> {
    run_episode(cfg, profile, 0)
}

pub fn run_episode(cfg: &QueueConfig, profile: &Profile, episode: u64) -> Result<EpisodeLog> {
    let (mut draws, mut tags) = episode_streams(cfg.seed, episode);
    let mut rounds = Vec::with_capacity(cfg.horizon as usize);
    run_queue_with(cfg, profile, &mut draws, &mut tags, |o| rounds.push(o.clone()))?;
    Ok(EpisodeLog {
        config: cfg.clone(),
        seed: cfg.seed,
        episode,
        rounds,
    })
}

#[derive(Serialize, Deserialize)]
struct RemovalLine {
    id: AgentId,
    reason: Reason,
    paid: u32,
}

#[derive(Serialize, Deserialize)]
struct RoundLine {
    round: u32,
    payments: BTreeMap<AgentId, u32>,
    removals: Vec<RemovalLine>,
    revenue: u64,
}

impl EpisodeLog {
    /// One JSON object per round, newline-terminated.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.rounds {
            let line = RoundLine {
                round: r.round,
                payments: r.payments.clone(),
                removals: r
                    .terminals
                    .iter()
                    .map(|t| RemovalLine {
                        id: t.agent.id,
                        reason: t.reason,
                        paid: t.agent.m,
                    })
                    .collect(),
                revenue: r.revenue(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn terminals(&self) -> impl Iterator<Item = &Terminal> {
        self.rounds.iter().flat_map(|r| r.terminals.iter())
    }
}

/// Per-round revenue lines parsed back from [`EpisodeLog::write_jsonl`].
pub fn read_jsonl_revenues(text: &str) -> Result<Vec<(u32, u64)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let r: RoundLine = serde_json::from_str(l)?;
            Ok((r.round, r.revenue))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Revenue {
    pub total: f64,
    pub per_round: f64,
    pub rounds: u32,
}

/// Streaming revenue counter. With `steady_state`, agents that entered in the
/// first `burn_in` rounds are ignored and the rate is taken over the
/// remaining rounds.
#[derive(Debug, Clone)]
pub struct RevenueCounter {
    burn_in: u32,
    horizon: u32,
    steady_state: bool,
    total: u64,
}

impl RevenueCounter {
    pub fn new(cfg: &QueueConfig, steady_state: bool) -> Self {
        RevenueCounter {
            burn_in: cfg.burn_in_rounds(),
            horizon: cfg.horizon,
            steady_state,
            total: 0,
        }
    }

    pub fn observe(&mut self, outcome: &RoundOutcome) {
        for t in &outcome.terminals {
            if !self.steady_state || t.agent.entry_round > self.burn_in {
                self.total += t.agent.m as u64;
            }
        }
    }

    pub fn finish(&self) -> Revenue {
        let rounds = if self.steady_state {
            self.horizon.saturating_sub(self.burn_in)
        } else {
            self.horizon
        };
        let total = self.total as f64;
        Revenue {
            total,
            per_round: if rounds == 0 { 0.0 } else { total / rounds as f64 },
            rounds,
        }
    }
}

pub fn revenue(log: &EpisodeLog, steady_state: bool) -> Revenue {
    let mut c = RevenueCounter::new(&log.config, steady_state);
    for r in &log.rounds {
        c.observe(r);
    }
    c.finish()
}
