use std::collections::BTreeSet;

use finequeue::game::{self, Profile, Reason};
use finequeue::strategy::BrsRule;
use finequeue::QueueConfig;
use proptest::prelude::*;

fn config() -> impl Strategy<Value = QueueConfig> {
    (1u32..6, 1u32..5, 1u32..5, 0.0f64..=1.0, 0u32..10, 0u32..10, 1u32..20, any::<u64>())
        .prop_map(|(fine, extra, period, p, x, x0, w, seed)| QueueConfig {
            fine,
            legal_cost: fine + extra,
            period,
            punished: 1 + (seed % 3) as u32,
            ignorance: p,
            entrants: x,
            initial: x0,
            horizon: w,
            seed,
            burn_in: None,
        })
}

fn strategy(cfg: &QueueConfig, pick: u8) -> finequeue::strategy::Strategy {
    match pick % 4 {
        0 => finequeue::strategy::Strategy::Pure(pick as u32 % (cfg.fine + 1)),
        1 => finequeue::strategy::Strategy::Brs(BrsRule::Forward),
        2 => finequeue::strategy::Strategy::Brs(BrsRule::Literal),
        _ => finequeue::strategy::Strategy::critical_one(cfg),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_agent_terminates_once(cfg in config(), pick in any::<u8>()) {
        let log = game::run_queue(&cfg, &Profile::uniform(strategy(&cfg, pick))).unwrap();
        let ids: Vec<u64> = log.terminals().map(|t| t.agent.id).collect();
        let unique: BTreeSet<u64> = ids.iter().copied().collect();
        prop_assert_eq!(ids.len(), unique.len());
        let entered = cfg.initial as u64 + cfg.entrants as u64 * (cfg.horizon as u64 - 1);
        prop_assert_eq!(ids.len() as u64, entered);
    }

    #[test]
    fn revenue_is_conserved(cfg in config(), pick in any::<u8>()) {
        let log = game::run_queue(&cfg, &Profile::uniform(strategy(&cfg, pick))).unwrap();
        let by_round: u64 = log.rounds.iter().map(|r| r.revenue()).sum();
        let by_agent: i64 = log.terminals().map(|t| -t.utility).sum();
        prop_assert_eq!(by_round as i64, by_agent);
        prop_assert_eq!(game::revenue(&log, false).total, by_round as f64);
    }

    #[test]
    fn removal_rules_hold(cfg in config(), pick in any::<u8>()) {
        let log = game::run_queue(&cfg, &Profile::uniform(strategy(&cfg, pick))).unwrap();
        for r in &log.rounds {
            let punished = r.terminals.iter().filter(|t| t.reason == Reason::Punished).count();
            prop_assert!(punished <= cfg.punished as usize);
            for t in &r.terminals {
                prop_assert_eq!(t.utility, -(t.agent.m as i64));
                match t.reason {
                    Reason::PaidFine => prop_assert!(t.agent.m >= cfg.fine),
                    Reason::Punished => prop_assert!(t.agent.m >= cfg.legal_cost && t.agent.m < cfg.fine + cfg.legal_cost),
                    Reason::Expired => prop_assert!(t.agent.t == cfg.period && t.agent.m < cfg.fine),
                    Reason::Horizon => prop_assert!(r.round == cfg.horizon && t.agent.m < cfg.fine),
                }
            }
            for (i, a) in r.survivors.iter().enumerate() {
                prop_assert_eq!(a.n, i + 1);
                prop_assert!(a.t < cfg.period && a.m < cfg.fine);
            }
            prop_assert!(r.survivors.len() <= cfg.max_queue_len());
            let ratios: Vec<(u64, u64)> = r.survivors.iter().map(|a| (a.m as u64, a.t as u64)).collect();
            for w in ratios.windows(2) {
                prop_assert!(w[0].0 * w[1].1 <= w[1].0 * w[0].1);
            }
        }
    }

    #[test]
    fn runs_are_reproducible(cfg in config(), pick in any::<u8>()) {
        let profile = Profile::uniform(strategy(&cfg, pick));
        let a = game::run_queue(&cfg, &profile).unwrap();
        let b = game::run_queue(&cfg, &profile).unwrap();
        prop_assert_eq!(a.to_jsonl(), b.to_jsonl());
    }
}
