//! Closed-form quantities for the one- and two-sorting games.
//!
//! `alpha(p, n, k)` is the probability that fewer than `k` of the `n - 1`
//! agents in front of position `n` forget to pay, i.e. the lower tail
//! `P[Bin(n - 1, p) <= k - 1]`. Everything else in this module is built on it:
//! critical positions, expected payments under the critical strategies, and
//! the total-payment formulas used to compare one sorting with `2k`
//! punishments against two sortings with `k`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

/// Tolerance used when comparing expected costs against the fine.
pub const TIE_TOL: f64 = 1e-12;

pub fn le_tol(a: f64, b: f64) -> bool {
    a <= b + TIE_TOL * b.abs().max(1.0)
}

/// `P[Bin(trials, p) <= k - 1]`.
fn binomial_below(trials: u64, p: f64, k: i64) -> f64 {
    if k <= 0 {
        return 0.0;
    }
    let k = k as u64;
    if k > trials {
        return 1.0;
    }
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let sum: f64 = (0..k)
        .map(|j| (ln_binomial(trials, j) + j as f64 * lp + (trials - j) as f64 * lq).exp())
        .sum();
    sum.min(1.0)
}

/// Probability mass function of `Bin(trials, p)` as a vector.
pub(crate) fn binomial_pmf(trials: u64, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        let mut v = vec![0.0; trials as usize + 1];
        v[0] = 1.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![0.0; trials as usize + 1];
        v[trials as usize] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    (0..=trials)
        .map(|j| (ln_binomial(trials, j) + j as f64 * lp + (trials - j) as f64 * lq).exp())
        .collect()
}

/// Probability that fewer than `k` of `n - 1` independent tosses with head
/// probability `p` come up heads.
pub fn alpha(p: f64, n: u64, k: i64) -> Result<f64> {
    if n < 1 {
        return Err(Error::Domain("alpha needs n >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("{p} is not a probability")));
    }
    Ok(binomial_below(n - 1, p, k))
}

fn alpha_unchecked(p: f64, n: u64, k: i64) -> f64 {
    binomial_below(n.saturating_sub(1), p, k)
}

/// Tail bound `exp(-(np - k)^2 / (2np))` on `alpha(p, n + 1, k)`, valid for
/// `k < np`.
pub fn chernoff_bound(p: f64, n: u64, k: i64) -> Result<f64> {
    let np = n as f64 * p;
    if (k as f64) >= np {
        return Err(Error::Domain(format!(
            "bound needs k < np (k = {k}, np = {np})"
        )));
    }
    let gap = np - k as f64;
    Ok((-gap * gap / (2.0 * np)).exp())
}

/// A critical position, or the marker that none exists (nobody ever forgets,
/// so paying is always preferred).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticalPosition {
    Finite(u64),
    Unbounded,
}

impl CriticalPosition {
    pub fn finite(self) -> Result<u64> {
        match self {
            CriticalPosition::Finite(r) => Ok(r),
            CriticalPosition::Unbounded => Err(Error::Unbounded),
        }
    }

    /// True when position `n` lies strictly in front.
    pub fn is_in_front(self, n: u64) -> bool {
        match self {
            CriticalPosition::Finite(r) => n < r,
            CriticalPosition::Unbounded => true,
        }
    }
}

impl std::fmt::Display for CriticalPosition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CriticalPosition::Finite(r) => write!(f, "{r}"),
            CriticalPosition::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// Smallest `r >= 1` with `alpha(p, r, k) * Q <= F`.
///
/// `alpha` is non-increasing in `r`, so the search doubles an upper bracket
/// and then bisects.
pub fn critical_position_w1(fine: f64, legal_cost: f64, p: f64, k: i64) -> CriticalPosition {
    let ok = |r: u64| le_tol(alpha_unchecked(p, r, k) * legal_cost, fine);
    if ok(1) {
        return CriticalPosition::Finite(1);
    }
    if p <= 0.0 {
        return CriticalPosition::Unbounded;
    }
    let mut lo = 1u64; // fails
    let mut hi = 2u64;
    while !ok(hi) {
        lo = hi;
        if hi > 1 << 52 {
            return CriticalPosition::Unbounded;
        }
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    CriticalPosition::Finite(hi)
}

/// Probability of being charged Q at position `n` when everyone plays the
/// one-round critical strategy with critical position `r`.
pub fn alpha_crit(p: f64, r: CriticalPosition, n: u64, k: i64) -> f64 {
    match r {
        CriticalPosition::Finite(r) if n >= r => {
            alpha_unchecked(p, r, k - (n - r) as i64)
        }
        _ => alpha_unchecked(p, n, k),
    }
}

fn payment_one_round(p: f64, n: u64, k: i64, fine: f64, q: f64, r: CriticalPosition) -> f64 {
    let ac = alpha_crit(p, r, n, k);
    if r.is_in_front(n) {
        (1.0 - p) * fine + p * ac * q
    } else {
        ac * q
    }
}

/// Expected payment at position `n` under the one-round critical profile.
pub fn expected_payment_w1(p: f64, n: u64, k: i64, fine: f64, legal_cost: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::Domain("position must be >= 1".into()));
    }
    let r = critical_position_w1(fine, legal_cost, p, k);
    Ok(payment_one_round(p, n, k, fine, legal_cost, r))
}

/// Which reading of a mixed `(q, 1 - q)` deviation to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MixedReading {
    /// Pays F with probability `1 - p - q`.
    #[default]
    AsPrinted,
    /// Ignorance applied on top of the declared mix: pays F with probability
    /// `(1 - p)(1 - q)`.
    Sampling,
}

/// Expected payment of an agent that pays 0 with probability `q` (and F
/// otherwise) while everyone else plays the critical strategy.
pub fn expected_payment_mixed(
    p: f64,
    q: f64,
    alpha_crit_value: f64,
    fine: f64,
    legal_cost: f64,
    reading: MixedReading,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("{q} is not a probability")));
    }
    let pay = match reading {
        MixedReading::AsPrinted => {
            if p + q > 1.0 + TIE_TOL {
                return Err(Error::Domain(format!("p + q = {} exceeds 1", p + q)));
            }
            1.0 - p - q
        }
        MixedReading::Sampling => (1.0 - p) * (1.0 - q),
    };
    Ok(pay * fine + (1.0 - pay) * alpha_crit_value * legal_cost)
}

/// How the second-round expectation treats first-round outcomes in which
/// the agent is charged Q.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SecondRound {
    /// Expectation conditioned on surviving the first round.
    #[default]
    Conditional,
    /// Unconditional expectation; positions `<= 0` are read as position 1.
    Clamped,
}

/// Expected payment in the second round of an agent that started at `n`
/// and paid nothing in the first round, with everyone in front trying to pay
/// F. The number of agents in front that actually paid is
/// `gamma ~ Bin(n - 1, 1 - p)` and the new position is `n - gamma - k`.
pub fn expected_payment_round2(
    p: f64,
    n: u64,
    k: i64,
    fine: f64,
    legal_cost: f64,
    mode: SecondRound,
) -> Result<f64> {
    if n < 1 {
        return Err(Error::Domain("position must be >= 1".into()));
    }
    let r = critical_position_w1(fine, legal_cost, p, k);
    Ok(round2_with(p, n, k, fine, legal_cost, r, mode))
}

fn round2_with(
    p: f64,
    n: u64,
    k: i64,
    fine: f64,
    q: f64,
    r: CriticalPosition,
    mode: SecondRound,
) -> f64 {
    // zeros in front: z = n - 1 - gamma ~ Bin(n - 1, p); new position z + 1 - k
    let pmf = binomial_pmf(n - 1, p);
    let g = |pos: i64| payment_one_round(p, pos.max(1) as u64, k, fine, q, r);
    match mode {
        SecondRound::Clamped => pmf
            .iter()
            .enumerate()
            .map(|(z, w)| w * g(z as i64 + 1 - k))
            .sum(),
        SecondRound::Conditional => {
            let mut mass = 0.0;
            let mut acc = 0.0;
            for (z, w) in pmf.iter().enumerate() {
                if z as i64 >= k {
                    mass += w;
                    acc += w * g(z as i64 + 1 - k);
                }
            }
            if mass > 0.0 {
                acc / mass
            } else {
                g(1)
            }
        }
    }
}

/// Expected cost of paying nothing in the first round at position `n` when
/// everyone in front tries to pay: `alpha Q + (1 - alpha) G2`.
pub fn first_round_zero_cost(
    p: f64,
    n: u64,
    k: i64,
    fine: f64,
    legal_cost: f64,
    mode: SecondRound,
) -> f64 {
    let r = critical_position_w1(fine, legal_cost, p, k);
    let a = alpha_unchecked(p, n, k);
    a * legal_cost + (1.0 - a) * round2_with(p, n, k, fine, legal_cost, r, mode)
}

/// First-round critical position of the two-sorting game (linear scan).
pub fn critical_position_w2_first(fine: f64, legal_cost: f64, p: f64, k: i64) -> CriticalPosition {
    critical_position_w2_first_with(fine, legal_cost, p, k, SecondRound::Conditional)
}

pub fn critical_position_w2_first_with(
    fine: f64,
    legal_cost: f64,
    p: f64,
    k: i64,
    mode: SecondRound,
) -> CriticalPosition {
    if p <= 0.0 {
        return CriticalPosition::Unbounded;
    }
    let r = critical_position_w1(fine, legal_cost, p, k);
    for n in 1..=(1u64 << 24) {
        let a = alpha_unchecked(p, n, k);
        let cost = a * legal_cost + (1.0 - a) * round2_with(p, n, k, fine, legal_cost, r, mode);
        if le_tol(cost, fine) {
            return CriticalPosition::Finite(n);
        }
    }
    CriticalPosition::Unbounded
}

/// Both critical positions of the two-sorting game and the second-round
/// payment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoRoundSolution {
    pub r22: u64,
    pub r21: u64,
    /// `(n, G2(n))` for `n` in `1..=r21`.
    pub g2: Vec<(u64, f64)>,
    pub total_lower: f64,
}

pub fn two_round_solution(fine: f64, legal_cost: f64, p: f64, k: i64) -> Result<TwoRoundSolution> {
    let r22 = critical_position_w1(fine, legal_cost, p, k).finite()?;
    let r21 = critical_position_w2_first(fine, legal_cost, p, k).finite()?;
    let r = CriticalPosition::Finite(r22);
    let g2 = (1..=r21)
        .map(|n| (n, round2_with(p, n, k, fine, legal_cost, r, SecondRound::Conditional)))
        .collect();
    Ok(TwoRoundSolution {
        r22,
        r21,
        g2,
        total_lower: total_payment_w2_lower(p, k, fine, legal_cost)?,
    })
}

/// Expected total payment of the one-sorting game with `k_mult * k`
/// punishments: `F (1 - p)(r - 1) + k_mult k Q`.
pub fn total_payment_w1(
    p: f64,
    x0: u64,
    k: i64,
    fine: f64,
    legal_cost: f64,
    k_mult: i64,
) -> Result<f64> {
    let kk = k * k_mult;
    let r = critical_position_w1(fine, legal_cost, p, kk).finite()?;
    if x0 < r + kk.max(0) as u64 {
        return Err(Error::OutOfRegime(format!(
            "x0 = {x0} is below r + k = {}",
            r + kk.max(0) as u64
        )));
    }
    Ok(one_round_total(p, fine, legal_cost, kk, r))
}

fn one_round_total(p: f64, fine: f64, q: f64, k: i64, r: u64) -> f64 {
    fine * (1.0 - p) * (r - 1) as f64 + k as f64 * q
}

/// Lower bound `2F(1 - p)(r22 - 1) + 2kQ` on the two-sorting total.
pub fn total_payment_w2_lower(p: f64, k: i64, fine: f64, legal_cost: f64) -> Result<f64> {
    let r = critical_position_w1(fine, legal_cost, p, k).finite()?;
    Ok(2.0 * fine * (1.0 - p) * (r - 1) as f64 + 2.0 * k as f64 * legal_cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    TwoRound,
    OneRoundDoubleK,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionReport {
    pub two_round_lower: f64,
    pub one_round_double_k: f64,
    pub winner: Winner,
    pub r_k: u64,
    pub r_2k: u64,
    /// `r(2k) < 2 r(k) - 1`, enough for two sortings to collect more.
    pub doubling_condition: bool,
    /// `F / Q <= 1/4`.
    pub small_fine_regime: bool,
}

/// Two sortings with `k` against one sorting with `2k`.
pub fn division_compare(fine: f64, legal_cost: f64, p: f64, k: i64) -> Result<DivisionReport> {
    let r_k = critical_position_w1(fine, legal_cost, p, k).finite()?;
    let r_2k = critical_position_w1(fine, legal_cost, p, 2 * k).finite()?;
    let two = total_payment_w2_lower(p, k, fine, legal_cost)?;
    let one = one_round_total(p, fine, legal_cost, 2 * k, r_2k);
    let winner = if (two - one).abs() <= TIE_TOL * two.abs().max(1.0) {
        Winner::Tie
    } else if two > one {
        Winner::TwoRound
    } else {
        Winner::OneRoundDoubleK
    };
    Ok(DivisionReport {
        two_round_lower: two,
        one_round_double_k: one,
        winner,
        r_k,
        r_2k,
        doubling_condition: r_2k + 1 < 2 * r_k,
        small_fine_regime: fine / legal_cost <= 0.25,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjectureProbe {
    pub p: f64,
    pub n: u64,
    pub k: i64,
    /// `n + n / p` rounded to the nearest integer, ties up.
    pub stretched_n: u64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates `alpha(p, n, k) >= alpha(p, n + n/p, 2k)` for `pn > k`.
pub fn conjecture_caa_probe(p: f64, n: u64, k: i64) -> Result<ConjectureProbe> {
    if p * n as f64 <= k as f64 {
        return Err(Error::Domain(format!("needs pn > k (pn = {})", p * n as f64)));
    }
    let stretched = n as f64 + n as f64 / p;
    let stretched_n = (stretched + 0.5).floor() as u64;
    let lhs = alpha(p, n, k)?;
    let rhs = alpha(p, stretched_n, 2 * k)?;
    Ok(ConjectureProbe {
        p,
        n,
        k,
        stretched_n,
        lhs,
        rhs,
        holds: lhs >= rhs,
    })
}

/// CSV scan of the conjecture over `p in {0.1..0.9}`, `n <= n_max`, and the
/// given `k` values. Columns: `p,n,k,stretched_n,lhs,rhs,holds`.
pub fn write_conjecture_scan(mut w: impl Write, n_max: u64, ks: &[i64]) -> Result<usize> {
    writeln!(w, "p,n,k,stretched_n,lhs,rhs,holds")?;
    let mut rows = 0;
    for pi in 1..=9 {
        let p = pi as f64 / 10.0;
        for &k in ks {
            for n in 1..=n_max {
                if let Ok(c) = conjecture_caa_probe(p, n, k) {
                    writeln!(
                        w,
                        "{},{},{},{},{:e},{:e},{}",
                        p, n, k, c.stretched_n, c.lhs, c.rhs, c.holds
                    )?;
                    rows += 1;
                }
            }
        }
    }
    Ok(rows)
}

/// CSV scan of the tail bound. Columns: `p,n,k,alpha,bound,holds`, where
/// `alpha` is `alpha(p, n + 1, k)`.
pub fn write_chernoff_scan(mut w: impl Write, n_max: u64) -> Result<(usize, usize)> {
    writeln!(w, "p,n,k,alpha,bound,holds")?;
    let (mut rows, mut violations) = (0, 0);
    for pi in 1..=9 {
        let p = pi as f64 / 10.0;
        for n in 1..=n_max {
            let mut k = 0i64;
            while (k as f64) < n as f64 * p {
                let a = alpha(p, n + 1, k)?;
                let b = chernoff_bound(p, n, k)?;
                let holds = a <= b;
                if !holds {
                    violations += 1;
                }
                writeln!(w, "{},{},{},{:e},{:e},{}", p, n, k, a, b, holds)?;
                rows += 1;
                k += 1;
            }
        }
    }
    Ok((rows, violations))
}

/// Smallest `n0 <= n_max` such that `alpha(p, n, k) >= alpha(p, 2n, 2k)` for
/// every `n` in `n0..=n_max`.
pub fn doubling_threshold(p: f64, k: i64, n_max: u64) -> Option<u64> {
    let mut n0 = None;
    for n in (1..=n_max).rev() {
        if alpha_unchecked(p, n, k) >= alpha_unchecked(p, 2 * n, 2 * k) {
            n0 = Some(n);
        } else {
            break;
        }
    }
    n0
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Lower tail by enumerating every toss sequence.
    fn alpha_enumerated(p: f64, n: u64, k: i64) -> f64 {
        let tosses = n - 1;
        (0u32..1 << tosses)
            .filter(|mask| (mask.count_ones() as i64) < k)
            .map(|mask| {
                let h = mask.count_ones() as i32;
                p.powi(h) * (1.0 - p).powi(tosses as i32 - h)
            })
            .sum()
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha(0.3, 1, 1).unwrap(), 1.0);
        assert!((alpha(0.5, 4, 2).unwrap() - 0.5).abs() < 1e-15);
        for n in 1..40 {
            assert_eq!(alpha(0.0, n, 1).unwrap(), 1.0);
        }
        assert!(alpha(0.5, 0, 1).is_err());
        assert_eq!(alpha(0.5, 5, 0).unwrap(), 0.0);
        assert_eq!(alpha(0.5, 5, 5).unwrap(), 1.0);
    }

    #[test]
    fn alpha_matches_enumeration() {
        for &p in &[0.1, 0.25, 0.5, 0.9] {
            for n in 1..=14 {
                for k in 0..=6 {
                    let a = alpha(p, n, k).unwrap();
                    let e = alpha_enumerated(p, n, k);
                    assert!((a - e).abs() < 1e-13, "p={p} n={n} k={k}: {a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn chernoff_examples() {
        let b = chernoff_bound(0.5, 8, 2).unwrap();
        assert!((b - (-0.5f64).exp()).abs() < 1e-15);
        let a = alpha(0.5, 9, 2).unwrap();
        assert!((a - 9.0 / 256.0).abs() < 1e-15);
        assert!(a <= b);
        let b = chernoff_bound(0.5, 100, 10).unwrap();
        assert!((b - (-16.0f64).exp()).abs() < 1e-20);
        assert!(alpha(0.5, 101, 10).unwrap() <= b);
        assert!(chernoff_bound(0.5, 4, 2).is_err());
        // exponent vanishes as k approaches np
        assert!(chernoff_bound(0.5, 1000, 499).unwrap() > 0.99);
    }

    #[test]
    fn critical_position_examples() {
        assert_eq!(critical_position_w1(4.0, 6.0, 0.5, 2), CriticalPosition::Finite(4));
        assert_eq!(critical_position_w1(4.0, 6.0, 1.0, 1), CriticalPosition::Finite(2));
        assert_eq!(critical_position_w1(4.0, 6.0, 0.0, 2), CriticalPosition::Unbounded);
        // as the fine approaches Q the critical position moves to the front
        let rs: Vec<u64> = [1.0, 2.0, 3.0, 4.0, 5.0, 5.9]
            .iter()
            .map(|&f| critical_position_w1(f, 6.0, 0.5, 2).finite().unwrap())
            .collect();
        assert!(rs.windows(2).all(|w| w[0] >= w[1]), "{rs:?}");
    }

    #[test]
    fn critical_position_matches_linear_scan() {
        for &p in &[0.05, 0.2, 0.5, 0.8] {
            for k in 1..5 {
                for &(f, q) in &[(1.0, 2.0), (4.0, 6.0), (1.0, 100.0)] {
                    let mut r = 1;
                    while !le_tol(alpha(p, r, k).unwrap() * q, f) {
                        r += 1;
                    }
                    assert_eq!(critical_position_w1(f, q, p, k), CriticalPosition::Finite(r));
                }
            }
        }
    }

    #[test]
    fn alpha_crit_examples() {
        let r = CriticalPosition::Finite(4);
        assert!((alpha_crit(0.5, r, 3, 2) - 0.75).abs() < 1e-15);
        assert!((alpha_crit(0.5, r, 5, 2) - 0.125).abs() < 1e-15);
        assert_eq!(alpha_crit(0.5, r, 6, 2), 0.0);
        for n in 1..20 {
            assert!(alpha_crit(0.5, r, n, 2) <= alpha(0.5, n, 2).unwrap() + 1e-15);
        }
    }

    #[test]
    fn expected_payment_examples() {
        assert!((expected_payment_w1(0.5, 1, 2, 4.0, 6.0).unwrap() - 5.0).abs() < 1e-12);
        assert!((expected_payment_w1(0.5, 4, 2, 4.0, 6.0).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(expected_payment_w1(0.5, 6, 2, 4.0, 6.0).unwrap(), 0.0);
        assert_eq!(expected_payment_w1(0.5, 9, 2, 4.0, 6.0).unwrap(), 0.0);
    }

    #[test]
    fn mixed_payment_examples() {
        let ac = alpha_crit(0.5, CriticalPosition::Finite(4), 2, 2);
        let g = expected_payment_w1(0.5, 2, 2, 4.0, 6.0).unwrap();
        let m = expected_payment_mixed(0.5, 0.0, ac, 4.0, 6.0, MixedReading::AsPrinted).unwrap();
        assert!((m - g).abs() < 1e-12);
        let m = expected_payment_mixed(0.5, 0.5, ac, 4.0, 6.0, MixedReading::AsPrinted).unwrap();
        assert!((m - ac * 6.0).abs() < 1e-12);
        let m = expected_payment_mixed(0.5, 0.25, 0.5, 4.0, 6.0, MixedReading::AsPrinted).unwrap();
        assert!((m - 3.25).abs() < 1e-12);
        let s = expected_payment_mixed(0.5, 0.25, 0.5, 4.0, 6.0, MixedReading::Sampling).unwrap();
        assert!((s - (0.375 * 4.0 + 0.625 * 3.0)).abs() < 1e-12);
        assert!(expected_payment_mixed(0.5, 0.75, 0.5, 4.0, 6.0, MixedReading::AsPrinted).is_err());
    }

    #[test]
    fn round2_limits() {
        // p = 1: nobody in front pays, the agent just moves up by k
        for n in 4..12 {
            let g2 = expected_payment_round2(1.0, n, 2, 4.0, 6.0, SecondRound::Conditional).unwrap();
            let g = expected_payment_w1(1.0, n - 2, 2, 4.0, 6.0).unwrap();
            assert!((g2 - g).abs() < 1e-12);
        }
        // p -> 0: survival requires forgetting, mass sits at the front
        let g2 = expected_payment_round2(1e-9, 8, 2, 4.0, 6.0, SecondRound::Clamped).unwrap();
        let g1 = expected_payment_w1(1e-9, 1, 2, 4.0, 6.0).unwrap();
        assert!((g2 - g1).abs() < 1e-6);
    }

    #[test]
    fn two_round_positions_at_defaults() {
        let r21 = critical_position_w2_first(4.0, 6.0, 0.5, 2).finite().unwrap();
        let r22 = critical_position_w1(4.0, 6.0, 0.5, 2).finite().unwrap();
        assert!(r21 >= r22 + 2);
        assert_eq!(r21, 9);
        assert_eq!(critical_position_w2_first(4.0, 6.0, 0.0, 2), CriticalPosition::Unbounded);
        let r21 = critical_position_w2_first(4.0, 6.0, 1.0, 1).finite().unwrap();
        assert!(r21 > critical_position_w1(4.0, 6.0, 1.0, 1).finite().unwrap());
    }

    #[test]
    fn totals_at_defaults() {
        assert!((total_payment_w1(0.5, 32, 2, 4.0, 6.0, 1).unwrap() - 18.0).abs() < 1e-12);
        assert!((total_payment_w2_lower(0.5, 2, 4.0, 6.0).unwrap() - 36.0).abs() < 1e-12);
        assert!(matches!(total_payment_w1(0.5, 4, 2, 4.0, 6.0, 1), Err(Error::OutOfRegime(_))));
        assert!(matches!(total_payment_w2_lower(0.0, 2, 4.0, 6.0), Err(Error::Unbounded)));
        // p = 1: nobody pays actively, only the punished contribute
        let r = critical_position_w1(4.0, 6.0, 1.0, 2).finite().unwrap();
        let t = total_payment_w1(1.0, r + 10, 2, 4.0, 6.0, 1).unwrap();
        assert_eq!(t, 12.0);
        let near_one = total_payment_w2_lower(1.0 - 1e-12, 2, 4.0, 6.0).unwrap();
        assert!((near_one - 24.0).abs() < 1e-6);
    }

    #[test]
    fn totals_scale_with_currency() {
        for c in [2.0, 3.0, 10.0] {
            let a = total_payment_w1(0.5, 64, 2, 4.0, 6.0, 1).unwrap();
            let b = total_payment_w1(0.5, 64, 2, 4.0 * c, 6.0 * c, 1).unwrap();
            assert!((b - c * a).abs() < 1e-9);
        }
    }

    #[test]
    fn division_examples() {
        let r = division_compare(1.0, 100.0, 0.5, 2).unwrap();
        assert_eq!(r.winner, Winner::TwoRound);
        assert!(r.doubling_condition && r.small_fine_regime);
        let r = division_compare(5.0, 6.0, 0.5, 1).unwrap();
        assert!(!r.small_fine_regime);
        assert_eq!(r, division_compare(5.0, 6.0, 0.5, 1).unwrap());
    }

    #[test]
    fn conjecture_probe_examples() {
        let c = conjecture_caa_probe(0.5, 10, 2).unwrap();
        assert_eq!(c.stretched_n, 30);
        assert_eq!(c.lhs, alpha(0.5, 10, 2).unwrap());
        assert_eq!(c.rhs, alpha(0.5, 30, 4).unwrap());
        assert_eq!(conjecture_caa_probe(1.0, 7, 2).unwrap().stretched_n, 14);
        assert!(conjecture_caa_probe(0.5, 4, 2).is_err());
        let mut buf = Vec::new();
        let rows = write_conjecture_scan(&mut buf, 40, &[1, 2]).unwrap();
        assert!(rows > 0);
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), rows + 1);
    }
}
