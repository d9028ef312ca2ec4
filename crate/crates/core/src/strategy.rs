//! Strategies: maps from an agent's observation to a distribution over
//! payments `0..=F`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analytic::{self, CriticalPosition};
use crate::config::QueueConfig;
use crate::error::{Error, Result};
use crate::learner::{self, PolicyParams};

const SUM_TOL: f64 = 1e-9;

/// What an agent sees when it declares: position, rounds played, total paid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub n: usize,
    pub t: u32,
    pub m: u32,
}

/// Probability vector over payments `0..=F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::validation("distribution", "empty"));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::validation(
                "distribution",
                format!("entry {bad} is not a non-negative number"),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::validation(
                "distribution",
                format!("sums to {sum}, not 1"),
            ));
        }
        Ok(ActionDistribution { probs })
    }

    /// Point mass on `nu`.
    pub fn pure(nu: u32, fine: u32) -> Result<Self> {
        if nu > fine {
            return Err(Error::validation(
                "payment",
                format!("{nu} is outside 0..={fine}"),
            ));
        }
        let mut probs = vec![0.0; fine as usize + 1];
        probs[nu as usize] = 1.0;
        Ok(ActionDistribution { probs })
    }

    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        ActionDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn fine(&self) -> u32 {
        (self.probs.len() - 1) as u32
    }

    /// The single action carrying all the mass, if any.
    pub fn point_mass(&self) -> Option<u32> {
        self.probs.iter().position(|&p| p == 1.0).map(|i| i as u32)
    }

    /// Inverse-CDF sample for `u` in `[0, 1)`; zero-mass actions are never
    /// returned.
    pub fn sample(&self, u: f64) -> u32 {
        let mut cum = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            cum += p;
            last = i;
            if u < cum {
                return i as u32;
            }
        }
        last as u32
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }
}

/// Applies ignorance to a declared distribution: with probability `p` the
/// payment is 0, otherwise it is drawn from `dist`.
pub fn sample_payment(dist: &ActionDistribution, p: f64, draw: crate::rng::Draw) -> u32 {
    if draw.forget_u < p {
        0
    } else {
        dist.sample(draw.action_u)
    }
}

/// Same as [`sample_payment`] with a fresh draw from `rng`.
pub fn sample_payment_rng<R: rand::Rng + ?Sized>(
    dist: &ActionDistribution,
    p: f64,
    rng: &mut R,
) -> Result<u32> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::validation("ignorance", format!("{p} is not a probability")));
    }
    let draw = crate::rng::Draw {
        forget_u: rng.random(),
        action_u: rng.random(),
    };
    Ok(sample_payment(dist, p, draw))
}

/// Per-agent memory of the basic rational strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrsMemory {
    pub omega: u32,
    pub prev_n: Option<usize>,
}

/// How the "will I reach the front" test reads the position shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BrsRule {
    /// Shift is the forward movement `prev_n - n`.
    #[default]
    Forward,
    /// The formula with `n - prev_n`, which never fires while advancing.
    Literal,
}

/// One update of the basic rational strategy.
pub fn brs_step(
    mem: BrsMemory,
    obs: &Observation,
    cfg: &QueueConfig,
    rule: BrsRule,
) -> (BrsMemory, ActionDistribution) {
    let fine = cfg.fine;
    let omega = if obs.t == 0 {
        0
    } else {
        let n = obs.n as i64;
        let prev = mem.prev_n.map(|v| v as i64).unwrap_or(n);
        let shift = match rule {
            BrsRule::Forward => prev - n,
            BrsRule::Literal => n - prev,
        };
        let remaining = cfg.period as i64 - obs.t as i64;
        if n < shift * remaining {
            (mem.omega + 1).min(fine.saturating_sub(obs.m))
        } else {
            mem.omega.saturating_sub(1)
        }
    };
    let next = BrsMemory {
        omega,
        prev_n: Some(obs.n),
    };
    let dist = ActionDistribution::pure(omega, fine).expect("omega is clamped to the fine");
    (next, dist)
}

/// A resolved strategy ready to be queried.
#[derive(Debug, Clone)]
pub enum Strategy {
    /// Always declare `nu`.
    Pure(u32),
    /// Basic rational strategy.
    Brs(BrsRule),
    /// Pay F strictly in front of the one-round critical position.
    CriticalOne { r: CriticalPosition },
    /// Pay F strictly in front of `first` in the first round and `second` in
    /// the second.
    CriticalTwo {
        first: CriticalPosition,
        second: CriticalPosition,
    },
    /// Learned masked actor.
    Policy(Arc<PolicyParams>),
    /// Follow `plan[t]` in the agent's round `t` (last entry repeats).
    ByRound(Vec<Strategy>),
}

impl Strategy {
    pub fn pure(nu: u32, cfg: &QueueConfig) -> Result<Self> {
        if nu > cfg.fine {
            return Err(Error::validation(
                "pure",
                format!("payment {nu} is outside 0..={}", cfg.fine),
            ));
        }
        Ok(Strategy::Pure(nu))
    }

    /// Critical strategy of the one-sorting game.
    pub fn critical_one(cfg: &QueueConfig) -> Self {
        Strategy::CriticalOne {
            r: analytic::critical_position_w1(
                cfg.fine as f64,
                cfg.legal_cost as f64,
                cfg.ignorance,
                cfg.punished as i64,
            ),
        }
    }

    /// Critical strategy of the two-sorting game.
    pub fn critical_two(cfg: &QueueConfig) -> Self {
        let (f, q, p, k) = (
            cfg.fine as f64,
            cfg.legal_cost as f64,
            cfg.ignorance,
            cfg.punished as i64,
        );
        Strategy::CriticalTwo {
            first: analytic::critical_position_w2_first(f, q, p, k),
            second: analytic::critical_position_w1(f, q, p, k),
        }
    }

    pub fn policy(params: Arc<PolicyParams>, cfg: &QueueConfig) -> Result<Self> {
        params.check_shapes(cfg.fine)?;
        Ok(Strategy::Policy(params))
    }

    /// True when the strategy reads per-agent memory.
    pub fn is_markovian(&self) -> bool {
        match self {
            Strategy::Brs(_) => false,
            Strategy::ByRound(plan) => plan.iter().all(Strategy::is_markovian),
            _ => true,
        }
    }

    pub fn decide(
        &self,
        obs: &Observation,
        mem: &mut BrsMemory,
        cfg: &QueueConfig,
    ) -> Result<ActionDistribution> {
        match self {
            Strategy::Pure(nu) => ActionDistribution::pure(*nu, cfg.fine),
            Strategy::Brs(rule) => {
                let (next, dist) = brs_step(*mem, obs, cfg, *rule);
                *mem = next;
                Ok(dist)
            }
            Strategy::CriticalOne { r } => pay_in_front(obs.n, *r, cfg.fine),
            Strategy::CriticalTwo { first, second } => {
                let r = match obs.t {
                    0 => *first,
                    1 => *second,
                    t => {
                        return Err(Error::Domain(format!(
                            "two-round critical strategy queried in round {}",
                            t + 1
                        )))
                    }
                };
                pay_in_front(obs.n, r, cfg.fine)
            }
            Strategy::Policy(params) => {
                let scaled = params.scale(obs);
                learner::actor_forward(params, &scaled, obs.m, cfg.fine)
            }
            Strategy::ByRound(plan) => {
                let idx = (obs.t as usize).min(plan.len().saturating_sub(1));
                match plan.get(idx) {
                    Some(s) => s.decide(obs, mem, cfg),
                    None => Err(Error::validation("plan", "empty round plan")),
                }
            }
        }
    }
}

fn pay_in_front(n: usize, r: CriticalPosition, fine: u32) -> Result<ActionDistribution> {
    let pays = match r {
        CriticalPosition::Unbounded => true,
        CriticalPosition::Finite(r) => (n as u64) < r,
    };
    ActionDistribution::pure(if pays { fine } else { 0 }, fine)
}

/// Textual strategy selector used in run configurations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrategySpec {
    Pure(u32),
    Brs,
    BrsLiteral,
    Crit1,
    Crit2,
    Policy(String),
}

impl StrategySpec {
    /// Resolves everything except `policy:`, which needs a loaded checkpoint.
    pub fn resolve(&self, cfg: &QueueConfig, literal_brs: bool) -> Result<Strategy> {
        Ok(match self {
            StrategySpec::Pure(nu) => Strategy::pure(*nu, cfg)?,
            StrategySpec::Brs if literal_brs => Strategy::Brs(BrsRule::Literal),
            StrategySpec::Brs => Strategy::Brs(BrsRule::Forward),
            StrategySpec::BrsLiteral => Strategy::Brs(BrsRule::Literal),
            StrategySpec::Crit1 => Strategy::critical_one(cfg),
            StrategySpec::Crit2 => Strategy::critical_two(cfg),
            StrategySpec::Policy(path) => {
                let params = learner::Checkpoint::load(std::path::Path::new(path))?.policy;
                Strategy::policy(Arc::new(params), cfg)?
            }
        })
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(nu) = s.strip_prefix("pure:") {
            let nu = nu
                .parse()
                .map_err(|_| Error::validation("strategy", format!("bad payment in {s:?}")))?;
            return Ok(StrategySpec::Pure(nu));
        }
        if let Some(path) = s.strip_prefix("policy:") {
            if path.is_empty() {
                return Err(Error::validation("strategy", "policy needs a checkpoint path"));
            }
            return Ok(StrategySpec::Policy(path.to_string()));
        }
        match s {
            "brs" => Ok(StrategySpec::Brs),
            "brs-literal" => Ok(StrategySpec::BrsLiteral),
            "crit1" => Ok(StrategySpec::Crit1),
            "crit2" => Ok(StrategySpec::Crit2),
            other => Err(Error::validation(
                "strategy",
                format!("unknown strategy {other:?}"),
            )),
        }
    }
}

impl TryFrom<String> for StrategySpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StrategySpec> for String {
    fn from(s: StrategySpec) -> String {
        s.to_string()
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategySpec::Pure(nu) => write!(f, "pure:{nu}"),
            StrategySpec::Brs => f.write_str("brs"),
            StrategySpec::BrsLiteral => f.write_str("brs-literal"),
            StrategySpec::Crit1 => f.write_str("crit1"),
            StrategySpec::Crit2 => f.write_str("crit2"),
            StrategySpec::Policy(p) => write!(f, "policy:{p}"),
        }
    }
}
