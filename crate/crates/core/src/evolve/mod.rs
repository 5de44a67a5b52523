//! Forward, reverse and backward Kolmogorov dynamics on the enumerated space.

mod forward;
mod grid;
mod reverse;

pub use forward::{forward_marginal, forward_marginal_with, ForwardTrajectory};
pub use grid::{kappa_of_sigma, kappa_weight, sigma_of_kappa, Clock, IntegratorConfig, Interval, TimeGrid};
pub(crate) use reverse::ReverseEdges;
pub use reverse::{
    approx_reverse, duality_residual, exact_reverse, reverse_trajectory, solve_kbe, DualityReport, ErrorTrajectory,
    ObservableTrajectory, ReverseTrajectory,
};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rates::{RateKind, RateSpec};
use crate::space::{SequenceSpace, StateIndex};

/// Negative weights above this are treated as integration noise.
pub const CLIP_SLACK: f64 = 1e-12;
/// Tolerance on total mass.
pub const MASS_TOL: f64 = 1e-10;

/// A probability vector over the enumerated space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    weights: Vec<f64>,
    time: f64,
}

impl Distribution {
    /// Validates the weights, clipping entries in `[-1e-12, 0)` to zero.
    pub fn new(weights: Vec<f64>, time: f64) -> Result<Self> {
        let (weights, _) = sanitize(weights)?;
        Ok(Self { weights, time })
    }

    pub(crate) fn from_clean(weights: Vec<f64>, time: f64) -> Self {
        Self { weights, time }
    }

    pub fn point_mass(space: &SequenceSpace, x: StateIndex) -> Self {
        let mut w = vec![0.0; space.state_count()];
        w[x.get()] = 1.0;
        Self { weights: w, time: 0.0 }
    }

    pub fn uniform(space: &SequenceSpace) -> Self {
        let n = space.state_count();
        Self {
            weights: vec![1.0 / n as f64; n],
            time: 0.0,
        }
    }

    /// Point mass at the all-mask sequence.
    pub fn all_mask(space: &SequenceSpace) -> Result<Self> {
        let m = space
            .all_mask()
            .ok_or_else(|| Error::mode("the all-mask sequence needs a mask token"))?;
        Ok(Self::point_mass(space, m))
    }

    /// The tractable starting law of generation: all-mask or uniform.
    pub fn prior(spec: &RateSpec) -> Self {
        match spec.kind() {
            RateKind::Masked => Self::all_mask(spec.space()).expect("masked spec has a mask"),
            RateKind::Uniform => Self::uniform(spec.space()),
        }
        .at_time(spec.schedule().horizon())
    }

    /// A flat-Dirichlet draw; with `avoid_mask`, sequences containing the
    /// mask token get zero weight.
    pub fn random_simplex(space: &SequenceSpace, seed: u64, avoid_mask: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w: Vec<f64> = space
            .states()
            .map(|x| {
                let e = -(1.0 - rng.random::<f64>()).ln();
                if avoid_mask && space.contains_mask(x) {
                    0.0
                } else {
                    e
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Self { weights: w, time: 0.0 }
    }

    pub fn at_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn expectation(&self, f: &[f64]) -> f64 {
        dot(&self.weights, f)
    }

    pub(crate) fn check_space(&self, space: &SequenceSpace) -> Result<()> {
        if self.weights.len() == space.state_count() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "distribution has {} weights, space has {} states",
                self.weights.len(),
                space.state_count()
            )))
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Clip tiny negatives and renormalize; returns the largest clipped magnitude.
pub(crate) fn sanitize(mut w: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let mut clip: f64 = 0.0;
    for v in w.iter_mut() {
        if !v.is_finite() {
            return Err(Error::numeric("non-finite probability weight"));
        }
        if *v < 0.0 {
            if *v < -CLIP_SLACK {
                return Err(Error::numeric(format!("probability weight {v:e} below the clipping slack")));
            }
            clip = clip.max(-*v);
            *v = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::numeric(format!("total mass {total} differs from 1")));
    }
    if clip > 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    }
    Ok((w, clip))
}

/// Per-token transition matrix `P(x_t^i = w | x_0^i = v)` in closed form.
pub fn closed_form_kernel(spec: &RateSpec, t: f64) -> Result<DMatrix<f64>> {
    let horizon = spec.schedule().horizon();
    if !(t.is_finite() && (0.0..=horizon).contains(&t)) {
        return Err(Error::domain(format!("time {t} outside [0, {horizon}]")));
    }
    Ok(kernel_for_sigma(spec, spec.schedule().cumulative(t)))
}

pub(crate) fn kernel_for_sigma(spec: &RateSpec, sigma: f64) -> DMatrix<f64> {
    let s = spec.space().vocab_size();
    let keep = (-sigma).exp();
    match spec.kind() {
        RateKind::Uniform => {
            let spread = (1.0 - keep) / s as f64;
            DMatrix::from_fn(s, s, |v, w| if v == w { keep + spread } else { spread })
        }
        RateKind::Masked => {
            let m = spec.space().mask_token().expect("masked spec has a mask");
            let alpha = -(-sigma).exp_m1();
            DMatrix::from_fn(s, s, |v, w| {
                if v == m {
                    f64::from(u8::from(w == m))
                } else if w == v {
                    keep
                } else if w == m {
                    alpha
                } else {
                    0.0
                }
            })
        }
    }
}

/// Push `p` through the same per-token kernel at every position.
pub fn apply_token_kernel(space: &SequenceSpace, kernel: &DMatrix<f64>, p: &[f64]) -> Result<Vec<f64>> {
    let s = space.vocab_size();
    if kernel.nrows() != s || kernel.ncols() != s {
        return Err(Error::domain("kernel shape does not match the vocabulary"));
    }
    if p.len() != space.state_count() {
        return Err(Error::domain("vector length does not match the space"));
    }
    let n = p.len();
    let mut cur = p.to_vec();
    let mut next = vec![0.0; n];
    let mut gathered = vec![0.0; s];
    for pos in 0..space.seq_len() {
        let stride = space.stride(pos);
        for hi in (0..n).step_by(stride * s) {
            for lo in 0..stride {
                let base = hi + lo;
                for (v, g) in gathered.iter_mut().enumerate() {
                    *g = cur[base + v * stride];
                }
                for w in 0..s {
                    next[base + w * stride] = (0..s).map(|v| gathered[v] * kernel[(v, w)]).sum();
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::Schedule;

    #[test]
    fn uniform_kernel_example() {
        let space = SequenceSpace::new(2, 1).unwrap();
        let spec = RateSpec::new(RateKind::Uniform, Schedule::constant(1.0, 10f64.ln()).unwrap(), space).unwrap();
        let k = closed_form_kernel(&spec, 10f64.ln()).unwrap();
        assert!((k[(0, 0)] - 0.55).abs() < 1e-15);
        assert!((k[(0, 1)] - 0.45).abs() < 1e-15);
        assert!((k[(1, 0)] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn masked_kernel_at_zero_is_identity_and_rows_are_stochastic() {
        let space = SequenceSpace::masked(4, 1).unwrap();
        let spec = RateSpec::new(RateKind::Masked, Schedule::linear(0.3, 2.0, 2.0).unwrap(), space).unwrap();
        assert_eq!(closed_form_kernel(&spec, 0.0).unwrap(), DMatrix::identity(4, 4));
        for t in [0.1, 0.7, 2.0] {
            let k = closed_form_kernel(&spec, t).unwrap();
            for v in 0..4 {
                assert!((k.row(v).sum() - 1.0).abs() < 1e-15);
            }
        }
        assert!(closed_form_kernel(&spec, 2.5).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(Distribution::new(vec![0.5, 0.5], 0.0).is_ok());
        let d = Distribution::new(vec![1.0 + 5e-13, -5e-13], 0.0).unwrap();
        assert_eq!(d.weights()[1], 0.0);
        assert!(matches!(Distribution::new(vec![1.1, -0.1], 0.0), Err(Error::Numeric(_))));
        assert!(matches!(Distribution::new(vec![0.5, 0.4], 0.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn random_simplex_avoids_mask() {
        let space = SequenceSpace::masked(3, 3).unwrap();
        let p = Distribution::random_simplex(&space, 9, true);
        assert!((p.mass() - 1.0).abs() < 1e-14);
        for x in space.states() {
            if space.contains_mask(x) {
                assert_eq!(p.weights()[x.get()], 0.0);
            } else {
                assert!(p.weights()[x.get()] > 0.0);
            }
        }
    }
}
