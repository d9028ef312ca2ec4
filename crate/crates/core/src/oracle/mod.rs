//! Exhaustive enumeration of small sorting games.
//!
//! With pure strategies the only randomness is each payer's forget coin, so
//! every outcome of a round can be listed with its probability. Agents that
//! declare 0 have nothing to forget and do not branch.

use std::collections::BTreeMap;

use crate::analytic::{self, CriticalPosition};
use crate::config::QueueConfig;
use crate::error::{Error, Result};
use crate::game::{self, AgentId, AgentState, Profile, Reason, Terminal};
use crate::strategy::Strategy;

pub const W1_MAX_AGENTS: u32 = 16;
pub const W2_MAX_AGENTS: u32 = 10;

/// State of one round along an enumerated path.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub start: Vec<AgentState>,
    pub terminals: Vec<Terminal>,
    pub survivors: Vec<AgentState>,
}

impl RoundRecord {
    /// What `id` paid during this round, fine and punishment included.
    pub fn paid(&self, id: AgentId) -> Option<u32> {
        let before = self.start.iter().find(|a| a.id == id)?.m;
        let after = self
            .terminals
            .iter()
            .map(|t| &t.agent)
            .chain(&self.survivors)
            .find(|a| a.id == id)?
            .m;
        Some(after - before)
    }
}

/// Calls `visit(probability, rounds)` once per complete outcome path. The
/// last round's survivors are moved into its terminals with reason horizon.
pub fn enumerate(
    cfg: &QueueConfig,
    profile: &Profile,
    mut visit: impl FnMut(f64, &[RoundRecord]),
) -> Result<()> {
    cfg.validate()?;
    if cfg.entrants != 0 {
        return Err(Error::Domain("enumeration needs a game without entrants".into()));
    }
    let limit = match cfg.horizon {
        1 => W1_MAX_AGENTS,
        2 => W2_MAX_AGENTS,
        _ => 0,
    };
    if cfg.initial > limit {
        return Err(Error::Resource(format!(
            "{} agents over {} rounds is too many to enumerate",
            cfg.initial, cfg.horizon
        )));
    }
    if profile.mix.is_some() {
        return Err(Error::Domain("enumeration needs fixed strategy tags".into()));
    }
    let agents: Vec<AgentState> = (0..cfg.initial as u64)
        .map(|id| {
            let tag = profile.overrides.get(&id).copied().unwrap_or(profile.default_tag);
            AgentState::fresh(id, id as usize + 1, tag, 1)
        })
        .collect();
    let mut path = Vec::new();
    walk(cfg, profile, agents, 1, 1.0, &mut path, &mut visit)
}

fn walk(
    cfg: &QueueConfig,
    profile: &Profile,
    mut agents: Vec<AgentState>,
    round: u32,
    weight: f64,
    path: &mut Vec<RoundRecord>,
    visit: &mut dyn FnMut(f64, &[RoundRecord]),
) -> Result<()> {
    let mut planned = Vec::with_capacity(agents.len());
    for a in agents.iter_mut() {
        let obs = a.observation();
        let dist = profile.strategy(a.tag)?.decide(&obs, &mut a.memory, cfg)?;
        let nu = dist
            .point_mass()
            .ok_or_else(|| Error::Domain("enumeration needs pure strategies".into()))?;
        planned.push(nu);
    }
    let payers: Vec<usize> = (0..planned.len()).filter(|&i| planned[i] > 0).collect();
    let p = cfg.ignorance;
    let mut payments = planned.clone();
    for mask in 0u32..(1u32 << payers.len()) {
        let mut w = weight;
        for (bit, &i) in payers.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                payments[i] = 0;
                w *= p;
            } else {
                payments[i] = planned[i];
                w *= 1.0 - p;
            }
        }
        if w == 0.0 {
            continue;
        }
        let (survivors, mut terminals) = game::resolve_round(agents.clone(), &payments, cfg)?;
        let last = round == cfg.horizon || survivors.is_empty();
        let mut record = RoundRecord {
            start: agents.clone(),
            terminals: Vec::new(),
            survivors: Vec::new(),
        };
        if last {
            for a in survivors {
                terminals.push(Terminal {
                    utility: -(a.m as i64),
                    agent: a,
                    reason: Reason::Horizon,
                });
            }
            record.terminals = terminals;
            path.push(record);
            visit(w, path);
            path.pop();
        } else {
            record.terminals = terminals;
            record.survivors = survivors.clone();
            path.push(record);
            walk(cfg, profile, survivors, round + 1, w, path, visit)?;
            path.pop();
        }
    }
    Ok(())
}

/// Exact expectations indexed by starting position (`[n - 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ExactOutcome {
    /// Expected total payment.
    pub cost: Vec<f64>,
    /// `[round - 1][n - 1]`: expected payment made during that round.
    pub round_cost: Vec<Vec<f64>>,
    /// `[round - 1][n - 1]`: probability of still being in the queue at the
    /// start of that round.
    pub alive: Vec<Vec<f64>>,
    /// Total probability mass visited; 1 up to rounding.
    pub mass: f64,
}

impl ExactOutcome {
    /// Expected payment in `round` given the agent is still there.
    pub fn conditional_round_cost(&self, round: usize, n: usize) -> Option<f64> {
        let alive = self.alive[round - 1][n - 1];
        (alive > 0.0).then(|| self.round_cost[round - 1][n - 1] / alive)
    }
}

pub fn brute_force(cfg: &QueueConfig, profile: &Profile) -> Result<ExactOutcome> {
    let x0 = cfg.initial as usize;
    let rounds = cfg.horizon as usize;
    let mut out = ExactOutcome {
        cost: vec![0.0; x0],
        round_cost: vec![vec![0.0; x0]; rounds],
        alive: vec![vec![0.0; x0]; rounds],
        mass: 0.0,
    };
    enumerate(cfg, profile, |w, path| {
        out.mass += w;
        for (r, rec) in path.iter().enumerate() {
            for a in &rec.start {
                let i = a.id as usize;
                out.alive[r][i] += w;
                out.round_cost[r][i] += w * rec.paid(a.id).unwrap_or(0) as f64;
            }
            for t in &rec.terminals {
                out.cost[t.agent.id as usize] += w * t.agent.m as f64;
            }
        }
    })?;
    Ok(out)
}

/// One-sorting game with `x0` agents.
pub fn brute_force_w1(
    x0: u32,
    fine: u32,
    legal_cost: u32,
    p: f64,
    k: u32,
    profile: &Profile,
) -> Result<ExactOutcome> {
    if x0 > W1_MAX_AGENTS {
        return Err(Error::Resource(format!("x0 = {x0} exceeds {W1_MAX_AGENTS}")));
    }
    brute_force(&QueueConfig::sorting_game(1, fine, legal_cost, k, p, x0), profile)
}

/// Two-sorting game with `x0` agents.
pub fn brute_force_w2(
    x0: u32,
    fine: u32,
    legal_cost: u32,
    p: f64,
    k: u32,
    profile: &Profile,
) -> Result<ExactOutcome> {
    if x0 > W2_MAX_AGENTS {
        return Err(Error::Resource(format!("x0 = {x0} exceeds {W2_MAX_AGENTS}")));
    }
    brute_force(&QueueConfig::sorting_game(2, fine, legal_cost, k, p, x0), profile)
}

/// Expected total payment of position `n` when it alone switches to
/// `deviation`.
pub fn deviation_cost(
    cfg: &QueueConfig,
    base: &Strategy,
    n: usize,
    deviation: Strategy,
) -> Result<f64> {
    let profile = Profile::uniform(base.clone()).with_override(n as AgentId - 1, deviation);
    Ok(brute_force(cfg, &profile)?.cost[n - 1])
}

/// A single-agent deviation and how much it changes the deviator's expected
/// payment (positive means worse for the deviator).
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationCheck {
    pub position: usize,
    pub deviation: String,
    pub equilibrium_cost: f64,
    pub deviation_cost: f64,
}

impl DeviationCheck {
    pub fn regret(&self) -> f64 {
        self.equilibrium_cost - self.deviation_cost
    }
}

/// Checks every position against every strategy in `deviations`.
pub fn deviation_checks(
    cfg: &QueueConfig,
    base: &Strategy,
    deviations: &[(String, Strategy)],
) -> Result<Vec<DeviationCheck>> {
    let eq = brute_force(cfg, &Profile::uniform(base.clone()))?;
    let mut out = Vec::new();
    for n in 1..=cfg.initial as usize {
        for (name, s) in deviations {
            out.push(DeviationCheck {
                position: n,
                deviation: name.clone(),
                equilibrium_cost: eq.cost[n - 1],
                deviation_cost: deviation_cost(cfg, base, n, s.clone())?,
            });
        }
    }
    Ok(out)
}

/// The two actions of the pay-or-not game.
pub fn binary_deviations(cfg: &QueueConfig) -> Vec<(String, Strategy)> {
    vec![
        ("pure:0".into(), Strategy::Pure(0)),
        (format!("pure:{}", cfg.fine), Strategy::Pure(cfg.fine)),
    ]
}

/// Every constant payment `0..=F`.
pub fn all_pure_deviations(cfg: &QueueConfig) -> Vec<(String, Strategy)> {
    (0..=cfg.fine).map(|nu| (format!("pure:{nu}"), Strategy::Pure(nu))).collect()
}

/// Round-by-round plans for the two-sorting game: first-round payment 0 or
/// F, then 0, F, or the second-round critical rule.
pub fn two_round_deviations(cfg: &QueueConfig) -> Vec<(String, Strategy)> {
    let crit = Strategy::critical_two(cfg);
    let mut out = Vec::new();
    for a in [0, cfg.fine] {
        for (name, second) in [
            ("0".to_string(), Strategy::Pure(0)),
            (cfg.fine.to_string(), Strategy::Pure(cfg.fine)),
            ("crit".to_string(), crit.clone()),
        ] {
            out.push((
                format!("{a}then{name}"),
                Strategy::ByRound(vec![Strategy::Pure(a), second]),
            ));
        }
    }
    out
}

/// Smallest position at which paying nothing in the first round (then
/// playing the second-round critical rule) is no more expensive than paying
/// the fine, with everyone else on the two-round critical strategy.
pub fn best_response_boundary_w2(cfg: &QueueConfig) -> Result<CriticalPosition> {
    let base = Strategy::critical_two(cfg);
    let crit = base.clone();
    for n in 1..=cfg.initial as usize {
        let zero = deviation_cost(
            cfg,
            &base,
            n,
            Strategy::ByRound(vec![Strategy::Pure(0), crit.clone()]),
        )?;
        if analytic::le_tol(zero, cfg.fine as f64) {
            return Ok(CriticalPosition::Finite(n as u64));
        }
    }
    Ok(CriticalPosition::Unbounded)
}

/// Cost-sharing coalition in a one-sorting game, evaluated exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionReport {
    pub members: Vec<usize>,
    /// Probability that the shared cost is positive.
    pub p_positive: f64,
    /// Expected shared cost.
    pub shared_cost: f64,
    /// Expected deviator gain given a positive shared cost.
    pub gain_given_positive: f64,
    /// Smallest gain over outcomes with positive shared cost.
    pub min_gain: f64,
    /// Outcomes with positive shared cost but no positive gain.
    pub violations: usize,
    /// Probability that every member is punished.
    pub p_all_punished: f64,
    /// Gain of the fine-paying deviator in the all-punished outcomes.
    pub all_punished_gain: Option<f64>,
}

/// Members (1-based positions) pay nothing and share their total cost; the
/// others follow `others`. In each outcome with shared cost `u > 0`:
/// if some member escaped, that member gains `u` by keeping its own zero
/// cost; if all were punished, any member switches to paying F and
/// gains `Q` minus its expected cost after the switch.
pub fn coalition_analysis(
    cfg: &QueueConfig,
    others: &Strategy,
    members: &[usize],
) -> Result<CoalitionReport> {
    if cfg.horizon != 1 {
        return Err(Error::Domain("coalition analysis is for one sorting".into()));
    }
    if members.is_empty() {
        return Err(Error::validation("coalition", "needs at least one member"));
    }
    let ids: Vec<AgentId> = members.iter().map(|&n| n as AgentId - 1).collect();
    if ids.iter().any(|&i| i >= cfg.initial as u64) {
        return Err(Error::validation("coalition", "member position beyond the queue"));
    }
    let profile = Profile::uniform(others.clone()).with_group(ids.clone(), Strategy::Pure(0));
    let q = cfg.legal_cost as f64;
    let mut report = CoalitionReport {
        members: members.to_vec(),
        p_positive: 0.0,
        shared_cost: 0.0,
        gain_given_positive: 0.0,
        min_gain: f64::INFINITY,
        violations: 0,
        p_all_punished: 0.0,
        all_punished_gain: None,
    };
    let mut gain_mass = 0.0;
    enumerate(cfg, &profile, |w, path| {
        let costs: BTreeMap<AgentId, u32> = path[0]
            .terminals
            .iter()
            .filter(|t| ids.contains(&t.agent.id))
            .map(|t| (t.agent.id, t.agent.m))
            .collect();
        let shared = costs.values().map(|&m| m as f64).sum::<f64>() / ids.len() as f64;
        report.shared_cost += w * shared;
        if shared <= 0.0 {
            return;
        }
        let gain = if costs.values().any(|&m| m == 0) {
            shared
        } else {
            report.p_all_punished += w;
            q - switched_cost(cfg)
        };
        report.p_positive += w;
        gain_mass += w * gain;
        report.min_gain = report.min_gain.min(gain);
        if gain <= 0.0 {
            report.violations += 1;
        }
    })?;
    if report.p_positive > 0.0 {
        report.gain_given_positive = gain_mass / report.p_positive;
    }
    if report.p_all_punished > 0.0 {
        report.all_punished_gain = Some(q - switched_cost(cfg));
    }
    if !report.min_gain.is_finite() {
        report.min_gain = 0.0;
    }
    Ok(report)
}

/// Expected cost of the switched deviator in an all-punished outcome: it
/// pays F unless it forgets, in which case it is punished as before.
fn switched_cost(cfg: &QueueConfig) -> f64 {
    let p = cfg.ignorance;
    (1.0 - p) * cfg.fine as f64 + p * cfg.legal_cost as f64
}
