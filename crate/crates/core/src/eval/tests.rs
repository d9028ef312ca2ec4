use super::*;
use crate::analytic::expected_payment_w1;

fn specs(s: &[&str]) -> Vec<StrategySpec> {
    s.iter().map(|x| x.parse().unwrap()).collect()
}

#[test]
fn certain_payment_has_exact_mean() {
    let cfg = QueueConfig {
        ignorance: 0.0,
        horizon: 12,
        ..QueueConfig::default()
    };
    let est = expected_utility(&Profile::uniform(Strategy::Pure(4)), &cfg, 20, 1, None).unwrap();
    assert_eq!(est.mean, -4.0);
    assert_eq!(est.stderr, 0.0);
}

#[test]
fn full_ignorance_spreads_punishment() {
    let cfg = QueueConfig {
        ignorance: 1.0,
        period: 1,
        horizon: 10,
        ..QueueConfig::default()
    };
    let est = expected_utility(&Profile::uniform(Strategy::Brs(Default::default())), &cfg, 5, 2, None)
        .unwrap();
    assert!((est.mean + 2.0 * 6.0 / 32.0).abs() < 1e-12);
}

#[test]
fn critical_positions_match_closed_form() {
    let cfg = QueueConfig::sorting_game(1, 4, 6, 2, 0.5, 12);
    let est = position_utilities(&Profile::uniform(Strategy::critical_one(&cfg)), &cfg, 4000, 3)
        .unwrap();
    for (i, e) in est.iter().enumerate() {
        let g = expected_payment_w1(0.5, i as u64 + 1, 2, 4.0, 6.0).unwrap();
        assert!(e.covers(-g, 3.0), "position {}: {e} vs {}", i + 1, -g);
    }
}

#[test]
fn nashconv_examples() {
    let w1 = QueueConfig::sorting_game(1, 4, 6, 2, 0.5, 12);
    let crit = Strategy::critical_one(&w1);
    let same = nashconv(&crit, &crit, 0.05, &w1, 3000, 4).unwrap();
    assert!(same.value.covers(0.0, 3.0), "{:?}", same);
    let zero = Strategy::Pure(0);
    // At p = 3/4 the critical rule pays only where punishment is certain.
    let small = QueueConfig::sorting_game(1, 4, 6, 2, 0.75, 4);
    let crit = Strategy::critical_one(&small);
    let better = nashconv(&zero, &crit, 0.05, &small, 20000, 4).unwrap();
    assert!(better.value.mean > 3.0 * better.value.stderr, "{:?}", better);

    let certain = QueueConfig {
        ignorance: 0.0,
        horizon: 16,
        ..QueueConfig::default()
    };
    let worse = nashconv(&Strategy::Pure(4), &zero, 0.05, &certain, 200, 5).unwrap();
    assert!(worse.value.mean <= 3.0 * worse.value.stderr);
    assert!(nashconv(&zero, &zero, 0.0, &certain, 1, 0).is_err());
    assert!(nashconv(&zero, &zero, 1.0, &certain, 1, 0).is_err());
}

#[test]
fn pairing_reduces_variance() {
    let cfg = QueueConfig {
        horizon: 24,
        ..QueueConfig::default()
    };
    let brs = Strategy::Brs(Default::default());
    let r = nashconv(&brs, &brs, 0.05, &cfg, 200, 6).unwrap();
    assert!(r.value.stderr < r.unpaired_stderr, "{r:?}");
}

#[test]
fn spearman_examples() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]) - 1.0).abs() < 1e-15);
    // ties get averaged ranks: ranks (1.5, 1.5, 3) vs (1, 2, 3)
    let r = spearman(&[5.0, 5.0, 7.0], &[1.0, 2.0, 3.0]);
    assert!((r - 0.866_025_403_784_438_6).abs() < 1e-12);
    assert_eq!(spearman(&[1.0, 1.0], &[2.0, 3.0]), 0.0);
}

#[test]
fn single_point_sweep_equals_revenue() {
    let cfg = QueueConfig {
        horizon: 20,
        ..QueueConfig::default()
    };
    let s = specs(&["brs"]);
    let spec = SweepSpec {
        strategies: &s,
        episodes: 30,
        seed: 7,
        literal_brs: false,
    };
    let rows = avalanche_sweep(&cfg, Axis::Ignorance, &[0.5], &spec).unwrap();
    assert_eq!(rows.len(), 1);
    let direct = total_revenue(&Profile::uniform(Strategy::Brs(Default::default())), &cfg, 30, 7)
        .unwrap();
    assert_eq!(rows[0].revenue, direct);
    assert!(avalanche_sweep(&cfg, Axis::Ignorance, &[], &spec).is_err());
    assert!(avalanche_sweep(&cfg, Axis::Entrants, &[1.5], &spec).is_err());
}

#[test]
fn one_group_is_the_plain_game() {
    let cfg = QueueConfig {
        horizon: 20,
        ..QueueConfig::default()
    };
    let s = specs(&["brs", "crit1"]);
    let spec = SweepSpec {
        strategies: &s,
        episodes: 10,
        seed: 8,
        literal_brs: false,
    };
    let rows = division_sweep(&cfg, DivisionMode::Group, &[1, 2], &spec).unwrap();
    let plain = avalanche_sweep(&cfg, Axis::Ignorance, &[0.5], &spec).unwrap();
    assert_eq!(rows[0].revenue, plain[0].revenue);
    assert_eq!(rows[1].revenue, plain[1].revenue);
    assert_eq!(rows[2].groups, 2);
}

#[test]
fn groups_add_up() {
    let cfg = QueueConfig {
        horizon: 12,
        ..QueueConfig::default()
    };
    let s = specs(&["brs"]);
    let spec = SweepSpec {
        strategies: &s,
        episodes: 6,
        seed: 9,
        literal_brs: false,
    };
    let row = &division_sweep(&cfg, DivisionMode::Group, &[2], &spec).unwrap()[0];
    let sub = group_config(&cfg, 2).unwrap();
    let brs = Profile::uniform(Strategy::Brs(Default::default()));
    let per_episode: Vec<f64> = (0..6)
        .map(|e| {
            (0..2)
                .map(|i| summarize_episode(&sub, &brs, group_seed(9, i), e).unwrap().revenue.total)
                .sum()
        })
        .collect();
    assert_eq!(row.revenue.total, McEstimate::from_samples(&per_episode, 9));
}

#[test]
fn division_errors_name_the_parameter() {
    let cfg = QueueConfig::default();
    match group_config(&cfg, 3) {
        Err(Error::Validation { field, .. }) => assert_eq!(field, "entrants"),
        other => panic!("{other:?}"),
    }
    let odd_k = QueueConfig {
        punished: 3,
        ..QueueConfig::default()
    };
    match group_config(&odd_k, 2) {
        Err(Error::Validation { field, .. }) => assert_eq!(field, "punished"),
        other => panic!("{other:?}"),
    }
    assert!(time_division_config(&cfg, DivisionMode::TimeFixedCapacity, 3).is_err());
    let c = time_division_config(&cfg, DivisionMode::TimeFixedCapacity, 1).unwrap();
    assert_eq!((c.period, c.punished, c.entrants, c.initial), (1, 8, 128, 128));
}

#[test]
fn brs_single_period_pays_only_punishment() {
    let cfg = QueueConfig {
        horizon: 24,
        ..QueueConfig::default()
    };
    let c = time_division_config(&cfg, DivisionMode::TimeFixedCapacity, 1).unwrap();
    let r = total_revenue(&Profile::uniform(Strategy::Brs(Default::default())), &c, 5, 10).unwrap();
    assert_eq!(r.per_period.mean, 48.0);
    assert_eq!(r.per_period.stderr, 0.0);
}

#[test]
fn coalition_check_gains() {
    let cfg = QueueConfig {
        horizon: 16,
        ..QueueConfig::default()
    };
    let r = coalition_check(&cfg, &Strategy::Brs(Default::default()), 4, 200, 11).unwrap();
    assert!(r.positive > 0);
    assert_eq!(r.violations, 0);
    assert!(r.gain.mean > 0.0);
    let all = QueueConfig::sorting_game(1, 4, 6, 2, 0.0, 2);
    let r = coalition_check(&all, &Strategy::Pure(4), 2, 3, 0).unwrap();
    assert_eq!(r.all_punished, 3);
    assert_eq!(r.gain.mean, 2.0);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let cfg = QueueConfig {
        horizon: 16,
        ..QueueConfig::default()
    };
    let brs = Profile::uniform(Strategy::Brs(Default::default()));
    let run = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| total_revenue(&brs, &cfg, 40, 12).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn csv_has_header_and_one_line_per_row() {
    let cfg = QueueConfig {
        horizon: 10,
        ..QueueConfig::default()
    };
    let s = specs(&["brs", "pure:4"]);
    let spec = SweepSpec {
        strategies: &s,
        episodes: 3,
        seed: 1,
        literal_brs: false,
    };
    let rows = avalanche_sweep(&cfg, Axis::Entrants, &[8.0, 16.0], &spec).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    let cols = CSV_HEADER.split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == cols));
}
