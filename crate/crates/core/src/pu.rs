//! Primary-user ON-OFF activity.
//!
//! Each primary user alternates between exponentially distributed ON and OFF
//! periods. `mu` is the rate of the OFF period and `lambda_on` the rate of the
//! ON period, so the long-run ON fraction is `(1/lambda_on) / (1/lambda_on + 1/mu)`.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PuState {
    On,
    Off,
}

impl PuState {
    pub fn toggled(self) -> Self {
        match self {
            PuState::On => PuState::Off,
            PuState::Off => PuState::On,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuProcess {
    /// Rate of the exponential OFF period, 1/s.
    pub mu: f64,
    /// Rate of the exponential ON period, 1/s.
    pub lambda_on: f64,
    pub state: PuState,
    /// Time of the most recent transition.
    pub last_transition: f64,
    /// Time at which the current period ends.
    pub next_transition: f64,
}

impl PuProcess {
    /// A process in `state` whose current period ends at `next_transition`.
    pub fn new(mu: f64, lambda_on: f64, state: PuState, next_transition: f64) -> Result<Self> {
        if !(mu > 0.0 && lambda_on > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "PU rates must be positive (mu = {mu}, lambda_on = {lambda_on})"
            )));
        }
        Ok(Self {
            mu,
            lambda_on,
            state,
            last_transition: 0.0,
            next_transition,
        })
    }

    /// Draws a process whose ON fraction is `activity`.
    ///
    /// The mean ON period is `mean_on` and the mean OFF period
    /// `mean_on * (1 - activity) / activity`; both are scaled by one common
    /// factor drawn from `[1 - jitter, 1 + jitter]`. The initial state is
    /// drawn from the stationary distribution.
    pub fn from_activity<R: Rng + ?Sized>(
        activity: f64,
        mean_on: f64,
        jitter: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let scale = if jitter > 0.0 {
            rng.random_range(1.0 - jitter..=1.0 + jitter)
        } else {
            1.0
        };
        let on = mean_on * scale;
        let off = on * (1.0 - activity) / activity;
        let state = if rng.random::<f64>() < activity {
            PuState::On
        } else {
            PuState::Off
        };
        let mut p = Self::new(1.0 / off, 1.0 / on, state, 0.0)?;
        // Memoryless: the residual period has the full-period distribution.
        p.next_transition = p.sample_period(rng);
        Ok(p)
    }

    pub fn mean_on(&self) -> f64 {
        1.0 / self.lambda_on
    }

    pub fn mean_off(&self) -> f64 {
        1.0 / self.mu
    }

    pub fn activity_fraction(&self) -> f64 {
        self.mean_on() / (self.mean_on() + self.mean_off())
    }

    pub fn is_on(&self) -> bool {
        self.state == PuState::On
    }

    fn sample_period<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let rate = match self.state {
            PuState::On => self.lambda_on,
            PuState::Off => self.mu,
        };
        Exp::new(rate).expect("positive rate").sample(rng)
    }

    /// Applies every transition due at or before `now`, returning the
    /// `(time, new_state)` pairs in order.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        now: f64,
        rng: &mut R,
    ) -> Result<Vec<(f64, PuState)>> {
        if now < self.last_transition {
            return Err(Error::TimeRegression {
                now,
                last: self.last_transition,
            });
        }
        let mut changes = Vec::new();
        while self.next_transition <= now {
            let t = self.next_transition;
            self.state = self.state.toggled();
            self.last_transition = t;
            self.next_transition = t + self.sample_period(rng);
            changes.push((t, self.state));
        }
        Ok(changes)
    }
}

/// Probability that at least one of `pus` becomes active within `tau`:
/// `1 - exp(-tau * sum(mu))`.
pub fn p_pu<'a>(pus: impl IntoIterator<Item = &'a PuProcess>, tau: f64) -> Result<f64> {
    p_pu_from_rates(pus.into_iter().map(|p| p.mu), tau)
}

pub fn p_pu_from_rates(mus: impl IntoIterator<Item = f64>, tau: f64) -> Result<f64> {
    if tau < 0.0 || tau.is_nan() {
        return Err(Error::NegativeTau(tau));
    }
    let total: f64 = mus.into_iter().sum();
    Ok(-(-tau * total).exp_m1())
}
