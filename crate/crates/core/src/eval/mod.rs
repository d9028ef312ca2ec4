//! Monte Carlo estimators and experiment sweeps.
//!
//! Episode `e` of a run with seed `s` always uses the same random streams, so
//! every estimate is reproducible from `(config, seed, episodes)` and two
//! profiles evaluated with the same seed share their randomness. Episodes run
//! on the rayon pool and are reduced in episode order.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::QueueConfig;
use crate::error::{Error, Result};
use crate::game::{self, AgentId, Profile, Revenue, RevenueCounter};
use crate::rng::SeedKey;
use crate::strategy::{Strategy, StrategySpec};

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub episodes: u64,
    pub seed: u64,
}

impl McEstimate {
    /// Plain mean of one value per episode.
    pub fn from_samples(xs: &[f64], seed: u64) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        McEstimate {
            mean,
            stderr: stderr_of(xs.iter().map(|x| x - mean), xs.len()),
            episodes: xs.len() as u64,
            seed,
        }
    }

    /// `sum(s) / sum(c)` over episodes with a delta-method standard error.
    pub fn ratio(sums: &[f64], counts: &[f64], seed: u64) -> Self {
        let (mean, lin) = ratio_terms(sums, counts);
        McEstimate {
            mean,
            stderr: stderr_of(lin.iter().copied(), lin.len()),
            episodes: sums.len() as u64,
            seed,
        }
    }

    /// True when `value` lies within `z` standard errors (or `1e-12` when the
    /// estimate is exact).
    pub fn covers(&self, value: f64, z: f64) -> bool {
        (self.mean - value).abs() <= z * self.stderr + 1e-12
    }
}

impl fmt::Display for McEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} ± {:.6} ({} episodes)", self.mean, self.stderr, self.episodes)
    }
}

/// Ratio and its per-episode linearisation `(s_e - R c_e) / mean(c)`.
fn ratio_terms(sums: &[f64], counts: &[f64]) -> (f64, Vec<f64>) {
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return (0.0, vec![0.0; sums.len()]);
    }
    let r = sums.iter().sum::<f64>() / total;
    let mean_c = total / counts.len() as f64;
    let lin = sums.iter().zip(counts).map(|(s, c)| (s - r * c) / mean_c).collect();
    (r, lin)
}

/// Standard error of the mean of centred values.
fn stderr_of(centred: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let ss: f64 = centred.map(|d| d * d).sum();
    (ss / (n as f64 - 1.0) / n as f64).sqrt()
}

/// Runs `f(episode)` for every episode on the current rayon pool and returns
/// the results in episode order.
pub fn par_episodes<T: Send>(
    episodes: u64,
    f: impl Fn(u64) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if episodes == 0 {
        return Err(Error::validation("episodes", "must be at least 1"));
    }
    (0..episodes).into_par_iter().map(f).collect()
}

/// What one episode contributes to the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    /// Whole-horizon revenue.
    pub revenue: Revenue,
    /// Revenue of agents that entered after the burn-in, per counted round.
    pub steady: Revenue,
    /// Sum and count of terminal utilities per strategy tag.
    pub tag_sums: Vec<f64>,
    pub tag_counts: Vec<f64>,
    /// Utility of each initial agent, by id.
    pub initial: Vec<f64>,
}

pub fn summarize_episode(
    cfg: &QueueConfig,
    profile: &Profile,
    seed: u64,
    episode: u64,
) -> Result<EpisodeSummary> {
    let (mut draws, mut tags) = game::episode_streams(seed, episode);
    let mut total = RevenueCounter::new(cfg, false);
    let mut steady = RevenueCounter::new(cfg, true);
    let n_tags = profile.strategies.len();
    let mut s = EpisodeSummary {
        revenue: total.finish(),
        steady: steady.finish(),
        tag_sums: vec![0.0; n_tags],
        tag_counts: vec![0.0; n_tags],
        initial: vec![0.0; cfg.initial as usize],
    };
    game::run_queue_with(cfg, profile, &mut draws, &mut tags, |out| {
        total.observe(out);
        steady.observe(out);
        for t in &out.terminals {
            s.tag_sums[t.agent.tag] += t.utility as f64;
            s.tag_counts[t.agent.tag] += 1.0;
            if t.agent.id < cfg.initial as AgentId {
                s.initial[t.agent.id as usize] = t.utility as f64;
            }
        }
    })?;
    s.revenue = total.finish();
    s.steady = steady.finish();
    Ok(s)
}

pub fn summarize(
    cfg: &QueueConfig,
    profile: &Profile,
    episodes: u64,
    seed: u64,
) -> Result<Vec<EpisodeSummary>> {
    cfg.validate()?;
    par_episodes(episodes, |e| summarize_episode(cfg, profile, seed, e))
}

/// Mean terminal utility, over all agents or over one strategy tag.
pub fn expected_utility(
    profile: &Profile,
    cfg: &QueueConfig,
    episodes: u64,
    seed: u64,
    tag: Option<usize>,
) -> Result<McEstimate> {
    let eps = summarize(cfg, profile, episodes, seed)?;
    Ok(utility_estimate(&eps, tag, seed))
}

fn utility_estimate(eps: &[EpisodeSummary], tag: Option<usize>, seed: u64) -> McEstimate {
    let pick = |v: &[f64]| match tag {
        Some(t) => v.get(t).copied().unwrap_or(0.0),
        None => v.iter().sum(),
    };
    let sums: Vec<f64> = eps.iter().map(|e| pick(&e.tag_sums)).collect();
    let counts: Vec<f64> = eps.iter().map(|e| pick(&e.tag_counts)).collect();
    McEstimate::ratio(&sums, &counts, seed)
}

/// Mean utility of each initial agent, indexed by starting position - 1.
pub fn position_utilities(
    profile: &Profile,
    cfg: &QueueConfig,
    episodes: u64,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    let eps = summarize(cfg, profile, episodes, seed)?;
    Ok((0..cfg.initial as usize)
        .map(|i| {
            let xs: Vec<f64> = eps.iter().map(|e| e.initial[i]).collect();
            McEstimate::from_samples(&xs, seed)
        })
        .collect())
}

/// Whole-horizon total and steady-state per-round revenue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevenueEstimate {
    pub total: McEstimate,
    pub per_round: McEstimate,
    /// Per-round rate times the judiciary period.
    pub per_period: McEstimate,
}

fn revenue_estimate(eps: &[EpisodeSummary], period: u32, seed: u64) -> RevenueEstimate {
    let total: Vec<f64> = eps.iter().map(|e| e.revenue.total).collect();
    let rate: Vec<f64> = eps.iter().map(|e| e.steady.per_round).collect();
    let per_round = McEstimate::from_samples(&rate, seed);
    let t = period as f64;
    RevenueEstimate {
        total: McEstimate::from_samples(&total, seed),
        per_round,
        per_period: McEstimate {
            mean: per_round.mean * t,
            stderr: per_round.stderr * t,
            ..per_round
        },
    }
}

pub fn total_revenue(
    profile: &Profile,
    cfg: &QueueConfig,
    episodes: u64,
    seed: u64,
) -> Result<RevenueEstimate> {
    let eps = summarize(cfg, profile, episodes, seed)?;
    Ok(revenue_estimate(&eps, cfg.period, seed))
}

/// Gain of a small group switching from `old` to `new`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NashConvReport {
    pub value: McEstimate,
    /// Standard error the same budget would give without pairing.
    pub unpaired_stderr: f64,
    pub tagged_utility: f64,
    pub baseline_utility: f64,
    pub rho: f64,
}

/// Mean utility of entrants tagged `new` (each with probability `rho`) in a
/// population otherwise on `old`, minus the mean utility when everyone is on
/// `old`. Both runs use the same episode streams.
pub fn nashconv(
    old: &Strategy,
    new: &Strategy,
    rho: f64,
    cfg: &QueueConfig,
    episodes: u64,
    seed: u64,
) -> Result<NashConvReport> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::validation("rho", format!("{rho} is not in (0, 1)")));
    }
    let base = summarize(cfg, &Profile::uniform(old.clone()), episodes, seed)?;
    let mixed = summarize(cfg, &Profile::mixed(old.clone(), new.clone(), rho), episodes, seed)?;
    let (b, b_lin) = ratio_terms(
        &base.iter().map(|e| e.tag_sums.iter().sum()).collect::<Vec<_>>(),
        &base.iter().map(|e| e.tag_counts.iter().sum()).collect::<Vec<_>>(),
    );
    let (m, m_lin) = ratio_terms(
        &mixed.iter().map(|e| e.tag_sums[1]).collect::<Vec<_>>(),
        &mixed.iter().map(|e| e.tag_counts[1]).collect::<Vec<_>>(),
    );
    let n = base.len();
    let paired = stderr_of(m_lin.iter().zip(&b_lin).map(|(x, y)| x - y), n);
    let unpaired = (stderr_of(m_lin.iter().copied(), n).powi(2)
        + stderr_of(b_lin.iter().copied(), n).powi(2))
    .sqrt();
    Ok(NashConvReport {
        value: McEstimate {
            mean: m - b,
            stderr: paired,
            episodes,
            seed,
        },
        unpaired_stderr: unpaired,
        tagged_utility: m,
        baseline_utility: b,
        rho,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len().min(y.len()) as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// One line of a sweep result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep: String,
    pub parameter: String,
    pub value: f64,
    pub strategy: String,
    pub period: u32,
    pub punished: u32,
    pub entrants: u32,
    pub initial: u32,
    pub groups: u32,
    pub revenue: RevenueEstimate,
    pub mean_utility: McEstimate,
}

pub const CSV_HEADER: &str = "sweep,parameter,value,strategy,period,punished,entrants,initial,groups,\
total_mean,total_stderr,per_round_mean,per_round_stderr,per_period_mean,per_period_stderr,\
mean_utility,mean_utility_stderr,episodes,seed";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        let r = &self.revenue;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.sweep,
            self.parameter,
            self.value,
            self.strategy,
            self.period,
            self.punished,
            self.entrants,
            self.initial,
            self.groups,
            r.total.mean,
            r.total.stderr,
            r.per_round.mean,
            r.per_round.stderr,
            r.per_period.mean,
            r.per_period.stderr,
            self.mean_utility.mean,
            self.mean_utility.stderr,
            r.total.episodes,
            r.total.seed
        )
    }
}

pub fn write_csv(mut w: impl Write, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Parameter varied by an avalanche sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Ignorance,
    Entrants,
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" | "ignorance" => Ok(Axis::Ignorance),
            "x" | "entrants" => Ok(Axis::Entrants),
            _ => Err(Error::validation("axis", format!("unknown axis {s:?} (p or x)"))),
        }
    }
}

/// Shared settings of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec<'a> {
    pub strategies: &'a [StrategySpec],
    pub episodes: u64,
    pub seed: u64,
    pub literal_brs: bool,
}

fn row_for(
    sweep: &str,
    parameter: &str,
    value: f64,
    cfg: &QueueConfig,
    spec: &StrategySpec,
    sweep_spec: &SweepSpec,
    groups: u32,
) -> Result<SweepRow> {
    let eps = if groups <= 1 {
        let profile = Profile::uniform(spec.resolve(cfg, sweep_spec.literal_brs)?);
        summarize(cfg, &profile, sweep_spec.episodes, sweep_spec.seed)?
    } else {
        grouped_summaries(cfg, spec, sweep_spec, groups)?
    };
    Ok(SweepRow {
        sweep: sweep.to_string(),
        parameter: parameter.to_string(),
        value,
        strategy: spec.to_string(),
        period: cfg.period,
        punished: cfg.punished,
        entrants: cfg.entrants,
        initial: cfg.initial,
        groups: groups.max(1),
        revenue: revenue_estimate(&eps, cfg.period, sweep_spec.seed),
        mean_utility: utility_estimate(&eps, None, sweep_spec.seed),
    })
}

/// Revenue as `p` or `x` varies, for each strategy.
pub fn avalanche_sweep(
    cfg: &QueueConfig,
    axis: Axis,
    grid: &[f64],
    spec: &SweepSpec,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::validation("grid", "must not be empty"));
    }
    let mut rows = Vec::new();
    for &v in grid {
        let mut c = cfg.clone();
        let name = match axis {
            Axis::Ignorance => {
                c.ignorance = v;
                "p"
            }
            Axis::Entrants => {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::validation("grid", format!("{v} is not an entrant count")));
                }
                c.entrants = v as u32;
                "x"
            }
        };
        c.validate()?;
        for s in spec.strategies {
            rows.push(row_for("avalanche", name, v, &c, s, spec, 1)?);
        }
    }
    Ok(rows)
}

/// How a division sweep splits the authority's work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivisionMode {
    /// Vary T with k, x and x0 per round unchanged.
    TimeFixedK,
    /// Vary T keeping `k T`, `x T` and `x0 T` at their base values.
    TimeFixedCapacity,
    /// Split into g independent queues.
    Group,
}

impl FromStr for DivisionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" | "time-fixed-k" => Ok(DivisionMode::TimeFixedK),
            "time-fixed-capacity" | "capacity" => Ok(DivisionMode::TimeFixedCapacity),
            "group" => Ok(DivisionMode::Group),
            _ => Err(Error::validation(
                "mode",
                format!("unknown division mode {s:?} (time, time-fixed-capacity, group)"),
            )),
        }
    }
}

fn scaled(name: &str, base: u32, base_t: u32, t: u32) -> Result<u32> {
    let cap = base as u64 * base_t as u64;
    if !cap.is_multiple_of(t as u64) {
        return Err(Error::validation(
            name,
            format!("{name} * T = {cap} is not divisible by T = {t}"),
        ));
    }
    Ok((cap / t as u64) as u32)
}

/// Configuration of the time division at period `t`.
pub fn time_division_config(cfg: &QueueConfig, mode: DivisionMode, t: u32) -> Result<QueueConfig> {
    if t == 0 {
        return Err(Error::validation("period", "must be positive"));
    }
    let mut c = cfg.clone();
    c.period = t;
    if mode == DivisionMode::TimeFixedCapacity {
        c.punished = scaled("punished", cfg.punished, cfg.period, t)?;
        c.entrants = scaled("entrants", cfg.entrants, cfg.period, t)?;
        c.initial = scaled("initial", cfg.initial, cfg.period, t)?;
    }
    c.validate()?;
    Ok(c)
}

/// Configuration of one of `g` groups.
pub fn group_config(cfg: &QueueConfig, g: u32) -> Result<QueueConfig> {
    if g == 0 {
        return Err(Error::validation("groups", "must be positive"));
    }
    for (name, v) in [
        ("entrants", cfg.entrants),
        ("punished", cfg.punished),
        ("initial", cfg.initial),
    ] {
        if v % g != 0 {
            return Err(Error::validation(
                name,
                format!("{name} = {v} is not divisible by g = {g}"),
            ));
        }
    }
    let mut c = cfg.clone();
    c.entrants /= g;
    c.punished /= g;
    c.initial /= g;
    c.validate()?;
    Ok(c)
}

/// Seed of group `i`; group 0 reuses the run seed so `g = 1` is the plain
/// game.
pub fn group_seed(seed: u64, i: u32) -> u64 {
    if i == 0 {
        seed
    } else {
        SeedKey::master(seed).child("group", i as u64).rng().next_u64()
    }
}

fn grouped_summaries(
    cfg: &QueueConfig,
    spec: &StrategySpec,
    sweep_spec: &SweepSpec,
    groups: u32,
) -> Result<Vec<EpisodeSummary>> {
    let sub = group_config(cfg, groups)?;
    let profile = Profile::uniform(spec.resolve(&sub, sweep_spec.literal_brs)?);
    let mut acc: Option<Vec<EpisodeSummary>> = None;
    for i in 0..groups {
        let eps = summarize(&sub, &profile, sweep_spec.episodes, group_seed(sweep_spec.seed, i))?;
        acc = Some(match acc {
            None => eps,
            Some(mut a) => {
                for (x, y) in a.iter_mut().zip(eps) {
                    add_summary(x, &y);
                }
                a
            }
        });
    }
    Ok(acc.unwrap_or_default())
}

fn add_summary(a: &mut EpisodeSummary, b: &EpisodeSummary) {
    a.revenue.total += b.revenue.total;
    a.revenue.per_round += b.revenue.per_round;
    a.steady.total += b.steady.total;
    a.steady.per_round += b.steady.per_round;
    for (x, y) in a.tag_sums.iter_mut().zip(&b.tag_sums) {
        *x += y;
    }
    for (x, y) in a.tag_counts.iter_mut().zip(&b.tag_counts) {
        *x += y;
    }
    a.initial.extend_from_slice(&b.initial);
}

/// Revenue as the period `T` or the number of groups `g` varies.
pub fn division_sweep(
    cfg: &QueueConfig,
    mode: DivisionMode,
    grid: &[u32],
    spec: &SweepSpec,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::validation("grid", "must not be empty"));
    }
    let mut rows = Vec::new();
    for &v in grid {
        for s in spec.strategies {
            let row = match mode {
                DivisionMode::Group => {
                    group_config(cfg, v)?;
                    row_for("division-group", "g", v as f64, cfg, s, spec, v)?
                }
                _ => {
                    let c = time_division_config(cfg, mode, v)?;
                    let name = if mode == DivisionMode::TimeFixedK {
                        "division-time"
                    } else {
                        "division-capacity"
                    };
                    row_for(name, "T", v as f64, &c, s, spec, 1)?
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Spearman correlation between the swept value and per-round revenue for
/// one strategy.
pub fn trend(rows: &[SweepRow], strategy: &str) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.strategy == strategy)
        .map(|r| (r.value, r.revenue.per_round.mean))
        .unzip();
    spearman(&x, &y)
}

/// Monte Carlo version of the coalition analysis for any configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionCheck {
    pub members: Vec<AgentId>,
    /// Episodes with positive shared cost.
    pub positive: u64,
    /// Of those, episodes where every member was punished.
    pub all_punished: u64,
    pub shared_cost: McEstimate,
    /// Deviator gain over episodes with positive shared cost.
    pub gain: McEstimate,
    /// Episodes with positive shared cost and a negative gain. A gain of 0
    /// happens when the switched deviator forgets to pay.
    pub violations: u64,
}

/// Initial agents spread evenly over the starting queue form a coalition
/// that pays nothing and shares its cost; everyone else follows `others`.
/// When some member escaped, that member's gain is the shared cost. When all
/// were punished, the last member is switched to paying F and the episode is
/// replayed with the same streams.
pub fn coalition_check(
    cfg: &QueueConfig,
    others: &Strategy,
    size: u32,
    episodes: u64,
    seed: u64,
) -> Result<CoalitionCheck> {
    cfg.validate()?;
    if size == 0 || size > cfg.initial {
        return Err(Error::validation(
            "coalition",
            format!("size must lie in 1..={}", cfg.initial),
        ));
    }
    let members: Vec<AgentId> = (0..size as u64)
        .map(|i| i * cfg.initial as u64 / size as u64)
        .collect();
    let deviator = *members.last().expect("size >= 1");
    let profile = Profile::uniform(others.clone()).with_group(members.clone(), Strategy::Pure(0));
    let switched = profile.clone().with_override(deviator, Strategy::Pure(cfg.fine));
    let q = cfg.legal_cost as f64;
    let per_episode = par_episodes(episodes, |e| {
        let s = summarize_episode(cfg, &profile, seed, e)?;
        let costs: Vec<f64> = members.iter().map(|&i| -s.initial[i as usize]).collect();
        let shared = costs.iter().sum::<f64>() / costs.len() as f64;
        if shared <= 0.0 {
            return Ok((shared, None));
        }
        if costs.contains(&0.0) {
            return Ok((shared, Some((false, shared))));
        }
        let alt = summarize_episode(cfg, &switched, seed, e)?;
        Ok((shared, Some((true, q + alt.initial[deviator as usize]))))
    })?;
    let shared: Vec<f64> = per_episode.iter().map(|x| x.0).collect();
    let gains: Vec<(bool, f64)> = per_episode.iter().filter_map(|x| x.1).collect();
    let g: Vec<f64> = gains.iter().map(|x| x.1).collect();
    Ok(CoalitionCheck {
        members,
        positive: gains.len() as u64,
        all_punished: gains.iter().filter(|x| x.0).count() as u64,
        shared_cost: McEstimate::from_samples(&shared, seed),
        gain: McEstimate::from_samples(&g, seed),
        violations: g.iter().filter(|&&x| x < 0.0).count() as u64,
    })
}

#[cfg(test)]
mod tests;
