//! Command-line front end.
//!
//! Settings are resolved in order default < config file < environment
//! (`FINEQUEUE_<SECTION>__<KEY>`) < `--set section.key=value` < dedicated
//! flags. Every command writes `run.json` with the resolved configuration
//! next to its outputs, and no output contains timestamps, so a rerun with
//! the same settings reproduces every file byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analytic::{self, CriticalPosition, SecondRound};
use crate::config::QueueConfig;
use crate::error::{Error, Result};
use crate::eval::{self, Axis, DivisionMode, SweepSpec};
use crate::game::{self, Profile};
use crate::learner::{self, Checkpoint, Hyperparams};
use crate::oracle;
use crate::rng::SeedKey;
use crate::strategy::{Strategy, StrategySpec};

pub const ENV_PREFIX: &str = "FINEQUEUE_";

#[derive(Debug, Parser)]
#[command(name = "finequeue", version, about = "Simulate, solve and learn fine-paying queues")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo episodes.
    #[arg(long, global = true)]
    pub episodes: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Use the BRS shift rule exactly as printed.
    #[arg(long, global = true)]
    pub brs_literal_formula: bool,
    /// Share of entrants switched to the new policy in NashConv.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Sweep mode: avalanche-p, avalanche-x, time, time-fixed-capacity, group.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Override any setting, e.g. `--set queue.fine=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes of one profile and report revenue.
    Simulate,
    /// Evaluate a closed-form quantity.
    Analytic(AnalyticArgs),
    /// Iterated best response with PPO.
    Train,
    /// Gain of switching a small share of entrants between two strategies.
    Nashconv,
    /// Revenue sweeps.
    Sweep,
    /// Cost-sharing coalition check.
    Coalition,
}

#[derive(Debug, Args)]
pub struct AnalyticArgs {
    /// alpha, chernoff, r, r21, alpha-crit, payment, payment2, total-w1,
    /// total-w2, division-compare, conjecture, chernoff-scan, conjecture-scan
    pub query: String,
    /// Queue position.
    #[arg(long, default_value_t = 1)]
    pub n: u64,
    /// Multiplier on k for total-w1.
    #[arg(long, default_value_t = 1)]
    pub k_mult: i64,
    /// Largest n for scans.
    #[arg(long, default_value_t = 256)]
    pub n_max: u64,
    /// Use the clamped second-round reading.
    #[arg(long)]
    pub clamped: bool,
}

/// Run-level options under `[run]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    pub episodes: u64,
    pub strategy: StrategySpec,
    pub strategies: Vec<StrategySpec>,
    pub old: StrategySpec,
    pub new: StrategySpec,
    pub rho: f64,
    pub mode: String,
    pub grid: Vec<f64>,
    pub iterations: u64,
    pub seeds: Vec<u64>,
    pub coalition_size: u32,
    pub brs_literal_formula: bool,
    pub workers: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            episodes: 2000,
            strategy: StrategySpec::Brs,
            strategies: vec![StrategySpec::Brs],
            old: StrategySpec::Brs,
            new: StrategySpec::Crit1,
            rho: 0.05,
            mode: "avalanche-p".into(),
            grid: Vec::new(),
            iterations: 20,
            seeds: Vec::new(),
            coalition_size: 4,
            brs_literal_formula: false,
            workers: None,
        }
    }
}

/// Everything a command needs, as written to `run.json`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub queue: QueueConfig,
    pub learner: Hyperparams,
    pub run: RunOptions,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.queue.validate()?;
        self.learner.validate()?;
        if self.run.episodes == 0 {
            return Err(Error::validation("run.episodes", "must be at least 1"));
        }
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        if self.run.seeds.is_empty() {
            vec![self.queue.seed]
        } else {
            self.run.seeds.clone()
        }
    }
}

/// Resolves the configuration from file, environment, `--set` and flags.
pub fn resolve_config(
    global: &GlobalArgs,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<RunConfig> {
    let mut table = match &global.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Error::Format(e.to_string()))?
        }
        None => toml::Table::new(),
    };
    let mut env: Vec<(String, String)> = env
        .into_iter()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|rest| (rest.to_ascii_lowercase().replace("__", "."), v))
        })
        .collect();
    env.sort();
    for (key, value) in env {
        set_key(&mut table, &key, &value)?;
    }
    for s in &global.sets {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Error::validation("set", format!("{s:?} is not KEY=VALUE")))?;
        set_key(&mut table, key.trim(), value.trim())?;
    }
    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Validation {
            field: "config".into(),
            reason: e.to_string(),
        })?;
    if let Some(seed) = global.seed {
        cfg.queue.seed = seed;
    }
    if let Some(e) = global.episodes {
        cfg.run.episodes = e;
    }
    if let Some(r) = global.rho {
        cfg.run.rho = r;
    }
    if let Some(m) = &global.mode {
        cfg.run.mode = m.clone();
    }
    if global.brs_literal_formula {
        cfg.run.brs_literal_formula = true;
    }
    if global.workers.is_some() {
        cfg.run.workers = global.workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set_key(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::validation("set", format!("empty key in {key:?}")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::validation(key, format!("{p} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn prepare_out(out: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    write_json(
        &out.join("run.json"),
        &RunRecord {
            command,
            seed: cfg.queue.seed,
            config: cfg,
        },
    )
}

/// Parses arguments and runs; returns the text printed to stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = resolve_config(&cli.global, std::env::vars())?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.run.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Resource(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli.command, &cfg, &cli.global.out))
}

fn dispatch(command: &Command, cfg: &RunConfig, out: &Path) -> Result<String> {
    match command {
        Command::Simulate => {
            prepare_out(out, "simulate", cfg)?;
            cmd_simulate(cfg, out)
        }
        Command::Analytic(a) => {
            prepare_out(out, "analytic", cfg)?;
            cmd_analytic(cfg, a, out)
        }
        Command::Train => {
            prepare_out(out, "train", cfg)?;
            cmd_train(cfg, out)
        }
        Command::Nashconv => {
            prepare_out(out, "nashconv", cfg)?;
            cmd_nashconv(cfg, out)
        }
        Command::Sweep => {
            prepare_out(out, "sweep", cfg)?;
            cmd_sweep(cfg, out)
        }
        Command::Coalition => {
            prepare_out(out, "coalition", cfg)?;
            cmd_coalition(cfg, out)
        }
    }
}

fn resolve(spec: &StrategySpec, cfg: &RunConfig, queue: &QueueConfig) -> Result<Strategy> {
    spec.resolve(queue, cfg.run.brs_literal_formula)
}

#[derive(Serialize)]
struct SimulateSummary {
    seed: u64,
    strategy: String,
    revenue: eval::RevenueEstimate,
    mean_utility: eval::McEstimate,
    first_episode_revenue: game::Revenue,
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<String> {
    let q = &cfg.queue;
    let profile = Profile::uniform(resolve(&cfg.run.strategy, cfg, q)?);
    let log = game::run_queue(q, &profile)?;
    fs::write(out.join("episode.jsonl"), log.to_jsonl())?;
    let revenue = eval::total_revenue(&profile, q, cfg.run.episodes, q.seed)?;
    let mean_utility = eval::expected_utility(&profile, q, cfg.run.episodes, q.seed, None)?;
    let summary = SimulateSummary {
        seed: q.seed,
        strategy: cfg.run.strategy.to_string(),
        revenue,
        mean_utility,
        first_episode_revenue: game::revenue(&log, false),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(format!(
        "seed {}\ntotal revenue {}\nper-round revenue (steady state) {}\nmean utility {}\n",
        q.seed, revenue.total, revenue.per_round, mean_utility
    ))
}

pub fn cmd_analytic(cfg: &RunConfig, a: &AnalyticArgs, out: &Path) -> Result<String> {
    let q = &cfg.queue;
    let (f, lc, p, k) = (q.fine as f64, q.legal_cost as f64, q.ignorance, q.punished as i64);
    let mode = if a.clamped {
        SecondRound::Clamped
    } else {
        SecondRound::Conditional
    };
    let position = |r: CriticalPosition| match r {
        CriticalPosition::Finite(r) => serde_json::json!(r),
        CriticalPosition::Unbounded => serde_json::json!("unbounded"),
    };
    let value = match a.query.as_str() {
        "alpha" => serde_json::json!(analytic::alpha(p, a.n, k)?),
        "chernoff" => serde_json::json!(analytic::chernoff_bound(p, a.n, k)?),
        "r" => position(analytic::critical_position_w1(f, lc, p, k)),
        "r21" => position(analytic::critical_position_w2_first_with(f, lc, p, k, mode)),
        "alpha-crit" => serde_json::json!(analytic::alpha_crit(
            p,
            analytic::critical_position_w1(f, lc, p, k),
            a.n,
            k
        )),
        "payment" => serde_json::json!(analytic::expected_payment_w1(p, a.n, k, f, lc)?),
        "payment2" => serde_json::json!(analytic::expected_payment_round2(p, a.n, k, f, lc, mode)?),
        "total-w1" => serde_json::json!(analytic::total_payment_w1(
            p,
            q.initial as u64,
            k,
            f,
            lc,
            a.k_mult
        )?),
        "total-w2" => serde_json::json!(analytic::total_payment_w2_lower(p, k, f, lc)?),
        "division-compare" => serde_json::to_value(analytic::division_compare(f, lc, p, k)?)?,
        "conjecture" => serde_json::to_value(analytic::conjecture_caa_probe(p, a.n, k)?)?,
        "chernoff-scan" => {
            let mut buf = Vec::new();
            let (rows, violations) = analytic::write_chernoff_scan(&mut buf, a.n_max)?;
            fs::write(out.join("chernoff.csv"), buf)?;
            serde_json::json!({ "rows": rows, "violations": violations })
        }
        "conjecture-scan" => {
            let mut buf = Vec::new();
            let rows = analytic::write_conjecture_scan(&mut buf, a.n_max, &[1, 2, 4, 8])?;
            fs::write(out.join("conjecture.csv"), buf)?;
            serde_json::json!({ "rows": rows })
        }
        other => {
            return Err(Error::validation("query", format!("unknown analytic query {other:?}")))
        }
    };
    let record = serde_json::json!({ "query": a.query, "n": a.n, "value": value });
    write_json(&out.join("analytic.json"), &record)?;
    Ok(format!("{}\n", serde_json::to_string(&value)?))
}

/// NashConv of one iteration of one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRow {
    pub seed: u64,
    pub iteration: u64,
    pub nashconv: f64,
    pub stderr: f64,
}

/// Seed used to evaluate NashConv after iteration `tau`.
pub fn nashconv_seed(seed: u64, tau: u64) -> u64 {
    use rand::RngCore;
    SeedKey::master(seed).child("nashconv", tau).rng().next_u64()
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<String> {
    let q = &cfg.queue;
    let mut rows = Vec::new();
    let mut complete = true;
    let mut msg = String::new();
    for seed in cfg.seeds() {
        let dir = out.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir)?;
        let mut policy = learner::initial_policy(q, seed);
        Checkpoint::new(policy.clone(), q, &cfg.learner, seed, 0).save(&dir.join("policy-0.json"))?;
        for tau in 0..cfg.run.iterations {
            let next = match learner::best_response_iterate(&policy, q, &cfg.learner, seed, tau) {
                Ok(p) => p,
                Err(e @ Error::Diverged(_)) => {
                    complete = false;
                    msg.push_str(&format!("seed {seed} stopped at iteration {tau}: {e}\n"));
                    break;
                }
                Err(e) => return Err(e),
            };
            let old = Strategy::policy(Arc::new(policy.clone()), q)?;
            let new = Strategy::policy(Arc::new(next.clone()), q)?;
            let nc = eval::nashconv(&old, &new, cfg.run.rho, q, cfg.run.episodes, nashconv_seed(seed, tau))?;
            rows.push(TrainRow {
                seed,
                iteration: tau,
                nashconv: nc.value.mean,
                stderr: nc.value.stderr,
            });
            Checkpoint::new(next.clone(), q, &cfg.learner, seed, tau + 1)
                .save(&dir.join(format!("policy-{}.json", tau + 1)))?;
            policy = next;
        }
    }
    let mut csv = String::from("seed,iteration,nashconv,stderr\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.seed, r.iteration, r.nashconv, r.stderr));
    }
    fs::write(out.join("nashconv.csv"), csv)?;
    let mut summary = String::from("iteration,mean,stderr,seeds\n");
    for tau in 0..cfg.run.iterations {
        let xs: Vec<f64> = rows.iter().filter(|r| r.iteration == tau).map(|r| r.nashconv).collect();
        if xs.is_empty() {
            continue;
        }
        let est = eval::McEstimate::from_samples(&xs, 0);
        summary.push_str(&format!("{tau},{},{},{}\n", est.mean, est.stderr, xs.len()));
    }
    fs::write(out.join("nashconv_summary.csv"), &summary)?;
    write_json(&out.join("status.json"), &serde_json::json!({ "complete": complete }))?;
    if !complete {
        return Err(Error::Diverged(msg));
    }
    Ok(summary)
}

pub fn cmd_nashconv(cfg: &RunConfig, out: &Path) -> Result<String> {
    let q = &cfg.queue;
    let old = resolve(&cfg.run.old, cfg, q)?;
    let new = resolve(&cfg.run.new, cfg, q)?;
    let r = eval::nashconv(&old, &new, cfg.run.rho, q, cfg.run.episodes, q.seed)?;
    write_json(&out.join("nashconv.json"), &r)?;
    Ok(format!("nashconv {}\n", r.value))
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<String> {
    let q = &cfg.queue;
    let spec = SweepSpec {
        strategies: &cfg.run.strategies,
        episodes: cfg.run.episodes,
        seed: q.seed,
        literal_brs: cfg.run.brs_literal_formula,
    };
    if cfg.run.grid.is_empty() {
        return Err(Error::validation("run.grid", "must not be empty"));
    }
    let rows = match cfg.run.mode.as_str() {
        "avalanche-p" => eval::avalanche_sweep(q, Axis::Ignorance, &cfg.run.grid, &spec)?,
        "avalanche-x" => eval::avalanche_sweep(q, Axis::Entrants, &cfg.run.grid, &spec)?,
        m => {
            let mode: DivisionMode = m.parse()?;
            let grid = cfg
                .run
                .grid
                .iter()
                .map(|&v| {
                    if v >= 1.0 && v.fract() == 0.0 {
                        Ok(v as u32)
                    } else {
                        Err(Error::validation("run.grid", format!("{v} is not a positive integer")))
                    }
                })
                .collect::<Result<Vec<u32>>>()?;
            eval::division_sweep(q, mode, &grid, &spec)?
        }
    };
    let mut buf = Vec::new();
    eval::write_csv(&mut buf, &rows)?;
    fs::write(out.join("sweep.csv"), &buf)?;
    write_json(&out.join("sweep.json"), &rows)?;
    let mut text = String::from_utf8(buf).expect("csv is utf-8");
    for s in &cfg.run.strategies {
        text.push_str(&format!("# trend {s}: {:.4}\n", eval::trend(&rows, &s.to_string())));
    }
    Ok(text)
}

pub fn cmd_coalition(cfg: &RunConfig, out: &Path) -> Result<String> {
    let q = &cfg.queue;
    let others = resolve(&cfg.run.strategy, cfg, q)?;
    let size = cfg.run.coalition_size;
    if q.horizon == 1 && q.entrants == 0 && q.initial <= oracle::W1_MAX_AGENTS {
        if size == 0 || size > q.initial {
            return Err(Error::validation("run.coalition_size", "must lie in 1..=initial"));
        }
        let members: Vec<usize> = (0..size as usize)
            .map(|i| i * q.initial as usize / size as usize + 1)
            .collect();
        let r = oracle::coalition_analysis(q, &others, &members)?;
        let json = serde_json::json!({
            "exact": true,
            "members": r.members,
            "p_positive": r.p_positive,
            "shared_cost": r.shared_cost,
            "gain_given_positive": r.gain_given_positive,
            "min_gain": r.min_gain,
            "violations": r.violations,
            "p_all_punished": r.p_all_punished,
            "all_punished_gain": r.all_punished_gain,
        });
        write_json(&out.join("coalition.json"), &json)?;
        return Ok(format!("{}\n", serde_json::to_string_pretty(&json)?));
    }
    let r = eval::coalition_check(q, &others, size, cfg.run.episodes, q.seed)?;
    write_json(&out.join("coalition.json"), &r)?;
    Ok(format!("{}\n", serde_json::to_string_pretty(&r)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn global(sets: &[&str]) -> GlobalArgs {
        GlobalArgs {
            config: None,
            seed: None,
            episodes: None,
            out: "out".into(),
            workers: None,
            brs_literal_formula: false,
            rho: None,
            mode: None,
            sets: sets.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn precedence_flag_env_file_default() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        fs::write(&file, "[queue]\nfine = 3\nlegal_cost = 7\nseed = 1\n[run]\nepisodes = 10\n").unwrap();
        let mut g = global(&["queue.legal_cost=9"]);
        g.config = Some(file);
        g.seed = Some(5);
        let env = vec![
            ("FINEQUEUE_QUEUE__LEGAL_COST".to_string(), "8".to_string()),
            ("FINEQUEUE_QUEUE__PUNISHED".to_string(), "3".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let c = resolve_config(&g, env).unwrap();
        assert_eq!(c.queue.fine, 3); // file
        assert_eq!(c.queue.punished, 3); // env
        assert_eq!(c.queue.legal_cost, 9); // --set beats env
        assert_eq!(c.queue.seed, 5); // flag beats file
        assert_eq!(c.run.episodes, 10);
        assert_eq!(c.queue.period, 4); // default
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(resolve_config(&global(&["queue.bogus=1"]), vec![]).is_err());
        assert!(resolve_config(&global(&["queue.legal_cost=2"]), vec![]).is_err());
        assert!(resolve_config(&global(&["nonsense"]), vec![]).is_err());
        let c = resolve_config(&global(&["run.strategies=[\"brs\", \"crit1\"]"]), vec![]).unwrap();
        assert_eq!(c.run.strategies, vec![StrategySpec::Brs, StrategySpec::Crit1]);
        let c = resolve_config(&global(&["run.strategy=pure:4"]), vec![]).unwrap();
        assert_eq!(c.run.strategy, StrategySpec::Pure(4));
    }
}
