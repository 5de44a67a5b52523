//! Integration grid shared by the forward, reverse and backward solvers.
//!
//! All dynamics depend on time only through the accumulated noise
//! `sigma = int_0^t beta`. The grid is uniform in the clock
//! `kappa = ln(e^sigma - 1)`, on which reverse rates stay bounded even though
//! they blow up like `1/sigma` near the data end. Interval 0 covers
//! `[0, sigma_floor]` in the `sigma` variable; reverse-time solvers treat it
//! as the identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// RK4 steps per unit of the `kappa` clock.
    pub steps_per_unit: f64,
    /// Accumulated noise below which reverse-time dynamics are frozen.
    pub sigma_floor: f64,
    /// Largest tolerated change of the forward terminal marginal when the
    /// step count is doubled.
    pub richardson_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            steps_per_unit: 32.0,
            sigma_floor: 1e-20,
            richardson_tol: 1e-9,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.steps_per_unit.is_finite() && self.steps_per_unit >= 1.0) {
            return Err(Error::Config("integrator.steps_per_unit must be at least 1".into()));
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor < 1e-3) {
            return Err(Error::Config("integrator.sigma_floor must lie in (0, 1e-3)".into()));
        }
        if self.richardson_tol.is_nan() || self.richardson_tol <= 0.0 {
            return Err(Error::Config("integrator.richardson_tol must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn refined(&self) -> Self {
        Self {
            steps_per_unit: 2.0 * self.steps_per_unit,
            ..*self
        }
    }
}

/// `sigma` as a function of `kappa`.
#[inline]
pub fn sigma_of_kappa(kappa: f64) -> f64 {
    if kappa > 35.0 {
        kappa + (-kappa).exp()
    } else {
        kappa.exp().ln_1p()
    }
}

/// `kappa` as a function of `sigma > 0`.
#[inline]
pub fn kappa_of_sigma(sigma: f64) -> f64 {
    if sigma > 35.0 {
        sigma + (-(-sigma).exp()).ln_1p()
    } else {
        sigma.exp_m1().ln()
    }
}

/// `d sigma / d kappa = 1 - e^{-sigma}`.
#[inline]
pub fn kappa_weight(kappa: f64) -> f64 {
    1.0 / (1.0 + (-kappa).exp())
}

/// The variable one interval is parametrized by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clock {
    Sigma,
    Kappa,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub clock: Clock,
    pub start: f64,
    pub len: f64,
}

impl Interval {
    /// Rate multiplier `d sigma / du` at clock value `u`.
    #[inline]
    pub fn weight(&self, u: f64) -> f64 {
        match self.clock {
            Clock::Sigma => 1.0,
            Clock::Kappa => kappa_weight(u),
        }
    }

    #[inline]
    pub fn end(&self) -> f64 {
        self.start + self.len
    }

    #[inline]
    pub fn mid(&self) -> f64 {
        self.start + 0.5 * self.len
    }

    #[inline]
    pub fn sigma_at(&self, u: f64) -> f64 {
        match self.clock {
            Clock::Sigma => u,
            Clock::Kappa => sigma_of_kappa(u),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    sigma_total: f64,
    sigma_floor: f64,
    kappa_lo: f64,
    step: f64,
    intervals: usize,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(sigma_total: f64, config: &IntegratorConfig) -> Result<Self> {
        config.validate()?;
        if !(sigma_total.is_finite() && sigma_total >= 0.0) {
            return Err(Error::domain(format!("accumulated noise {sigma_total} is not a finite nonnegative number")));
        }
        let floor = config.sigma_floor;
        if sigma_total == 0.0 {
            return Ok(Self {
                sigma_total,
                sigma_floor: floor,
                kappa_lo: f64::NEG_INFINITY,
                step: 0.0,
                intervals: 0,
                nodes: vec![0.0],
            });
        }
        if sigma_total <= floor {
            return Ok(Self {
                sigma_total,
                sigma_floor: floor,
                kappa_lo: f64::NEG_INFINITY,
                step: 0.0,
                intervals: 1,
                nodes: vec![0.0, sigma_total],
            });
        }
        let kappa_lo = kappa_of_sigma(floor);
        let kappa_hi = kappa_of_sigma(sigma_total);
        let span = kappa_hi - kappa_lo;
        let n = ((span * config.steps_per_unit).ceil() as usize).max(1);
        let step = span / n as f64;
        let mut nodes = Vec::with_capacity(n + 2);
        nodes.push(0.0);
        nodes.push(floor);
        for j in 1..n {
            nodes.push(sigma_of_kappa(kappa_lo + j as f64 * step));
        }
        nodes.push(sigma_total);
        Ok(Self {
            sigma_total,
            sigma_floor: floor,
            kappa_lo,
            step,
            intervals: n + 1,
            nodes,
        })
    }

    pub fn sigma_total(&self) -> f64 {
        self.sigma_total
    }

    pub fn sigma_floor(&self) -> f64 {
        self.sigma_floor
    }

    /// Number of intervals; nodes are `0..=intervals()`.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_sigma(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Whether reverse-time dynamics on interval `k` are frozen.
    pub fn is_frozen(&self, k: usize) -> bool {
        k == 0
    }

    pub fn interval(&self, k: usize) -> Interval {
        assert!(k < self.intervals, "interval {k} out of range");
        if k == 0 {
            Interval {
                clock: Clock::Sigma,
                start: 0.0,
                len: self.nodes[1],
            }
        } else {
            let start = self.kappa_lo + (k - 1) as f64 * self.step;
            let len = if k + 1 == self.intervals {
                kappa_of_sigma(self.sigma_total) - start
            } else {
                self.step
            };
            Interval {
                clock: Clock::Kappa,
                start,
                len,
            }
        }
    }

    /// Index of the interval containing `sigma` (right-closed, the first
    /// interval also contains 0).
    pub fn interval_of(&self, sigma: f64) -> Option<usize> {
        if self.intervals == 0 || !(0.0..=self.sigma_total).contains(&sigma) {
            return None;
        }
        if sigma <= self.nodes[1] {
            return Some(0);
        }
        let k = 1 + ((kappa_of_sigma(sigma) - self.kappa_lo) / self.step).floor() as usize;
        let mut k = k.clamp(1, self.intervals - 1);
        while k > 1 && sigma <= self.nodes[k] {
            k -= 1;
        }
        while k + 1 < self.intervals && sigma > self.nodes[k + 1] {
            k += 1;
        }
        Some(k)
    }
}
