//! Game parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of one Queue game plus run-level knobs.
///
/// Field names follow the roles of the parameters: `fine` is F, `legal_cost`
/// is Q, `period` is the judiciary period T, `punished` is k, `ignorance` is
/// p, `entrants` is x, `initial` is x0 and `horizon` is w.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueueConfig {
    pub fine: u32,
    pub legal_cost: u32,
    pub period: u32,
    pub punished: u32,
    pub ignorance: f64,
    pub entrants: u32,
    pub initial: u32,
    pub horizon: u32,
    pub seed: u64,
    /// Rounds excluded from steady-state metrics; `None` means `2 * period`.
    pub burn_in: Option<u32>,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            fine: 4,
            legal_cost: 6,
            period: 4,
            punished: 2,
            ignorance: 0.5,
            entrants: 32,
            initial: 32,
            horizon: 64,
            seed: 0,
            burn_in: None,
        }
    }
}

impl QueueConfig {
    /// The reduced game with `w` sortings: `T = w`, no entrants.
    pub fn sorting_game(
        w: u32,
        fine: u32,
        legal_cost: u32,
        punished: u32,
        ignorance: f64,
        initial: u32,
    ) -> Self {
        QueueConfig {
            fine,
            legal_cost,
            period: w,
            punished,
            ignorance,
            entrants: 0,
            initial,
            horizon: w,
            ..QueueConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fine == 0 {
            return Err(Error::validation("fine", "must be positive"));
        }
        if self.legal_cost <= self.fine {
            return Err(Error::validation(
                "legal_cost",
                format!("must exceed the fine ({} <= {})", self.legal_cost, self.fine),
            ));
        }
        if self.period == 0 {
            return Err(Error::validation("period", "must be positive"));
        }
        if self.punished == 0 {
            return Err(Error::validation("punished", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ignorance) {
            return Err(Error::validation(
                "ignorance",
                format!("{} is not a probability", self.ignorance),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::validation("horizon", "must be at least 1"));
        }
        Ok(())
    }

    pub fn burn_in_rounds(&self) -> u32 {
        self.burn_in.unwrap_or(2 * self.period)
    }

    /// Upper bound on the queue length: `x0 + x * T`.
    pub fn max_queue_len(&self) -> usize {
        self.initial as usize + self.entrants as usize * self.period as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = QueueConfig::default();
        c.validate().unwrap();
        assert_eq!(c.burn_in_rounds(), 8);
        assert_eq!(c.max_queue_len(), 160);
    }

    #[test]
    fn rejects_bad_fields() {
        let mut c = QueueConfig::default();
        c.legal_cost = 4;
        assert!(matches!(c.validate(), Err(Error::Validation { field, .. }) if field == "legal_cost"));
        let mut c = QueueConfig::default();
        c.ignorance = 1.5;
        assert!(c.validate().is_err());
        let mut c = QueueConfig::default();
        c.horizon = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r: std::result::Result<QueueConfig, _> = toml::from_str("fine = 3\nbogus = 1\n");
        assert!(r.is_err());
    }
}
