//! Token-level rate matrices, noise schedules and the factorized
//! sequence-level generator.
//!
//! Both supported generators factor as `Q_t^tok = beta(t) * G` with a fixed
//! unit generator `G`, so the sequence generator is `beta(t)` times the
//! Kronecker sum of `d` copies of `G`. The sum is applied matrix-free by
//! sweeping each position with its stride; the `S^d x S^d` matrix is never
//! formed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::SequenceSpace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `beta(t) = beta`
    Constant { beta: f64 },
    /// `beta(t) = a + b t`
    Linear { a: f64, b: f64 },
    /// `beta(t) = a r^t`
    Geometric { a: f64, r: f64 },
}

/// A noise schedule `beta(t)` on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(flatten)]
    pub kind: ScheduleKind,
    pub horizon: f64,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, horizon: f64) -> Result<Self> {
        let s = Self { kind, horizon };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(beta: f64, horizon: f64) -> Result<Self> {
        Self::new(ScheduleKind::Constant { beta }, horizon)
    }

    pub fn linear(a: f64, b: f64, horizon: f64) -> Result<Self> {
        Self::new(ScheduleKind::Linear { a, b }, horizon)
    }

    pub fn geometric(a: f64, r: f64, horizon: f64) -> Result<Self> {
        Self::new(ScheduleKind::Geometric { a, r }, horizon)
    }

    /// Constant schedule on `[0, horizon]` with total integral `total`.
    pub fn with_total(total: f64, horizon: f64) -> Result<Self> {
        Self::constant(total / horizon, horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::domain("schedule horizon must be finite and positive"));
        }
        let params_ok = match self.kind {
            ScheduleKind::Constant { beta } => beta.is_finite() && beta >= 0.0,
            ScheduleKind::Linear { a, b } => {
                a.is_finite() && b.is_finite() && a >= 0.0 && a + b * self.horizon >= 0.0
            }
            ScheduleKind::Geometric { a, r } => a.is_finite() && r.is_finite() && a >= 0.0 && r > 0.0,
        };
        if params_ok {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "schedule {:?} is not nonnegative on [0, {}]",
                self.kind, self.horizon
            )))
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn beta(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Constant { beta } => beta,
            ScheduleKind::Linear { a, b } => a + b * t,
            ScheduleKind::Geometric { a, r } => a * r.powf(t),
        }
    }

    /// Largest value of `beta` on `[0, horizon]`; every kind is monotone.
    pub fn max_beta(&self) -> f64 {
        self.beta(0.0).max(self.beta(self.horizon))
    }

    /// Closed-form `int_0^t beta(s) ds`.
    pub fn cumulative(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Constant { beta } => beta * t,
            ScheduleKind::Linear { a, b } => a * t + 0.5 * b * t * t,
            ScheduleKind::Geometric { a, r } => {
                let lr = r.ln();
                if lr.abs() < 1e-12 {
                    a * t
                } else {
                    a * (t * lr).exp_m1() / lr
                }
            }
        }
    }

    /// `int_0^T beta`, the quantity written `||beta||_1` in the bounds.
    pub fn total(&self) -> f64 {
        self.cumulative(self.horizon)
    }

    /// Smallest `t` with `cumulative(t) = sigma`, or `None` when the
    /// schedule never accumulates that much (for example `beta == 0`).
    pub fn inverse_cumulative(&self, sigma: f64) -> Option<f64> {
        if sigma <= 0.0 {
            return Some(0.0);
        }
        let t = match self.kind {
            ScheduleKind::Constant { beta } => {
                if beta <= 0.0 {
                    return None;
                }
                sigma / beta
            }
            ScheduleKind::Linear { a, b } => {
                let disc = a * a + 2.0 * b * sigma;
                if disc < 0.0 {
                    return None;
                }
                let denom = a + disc.sqrt();
                if denom <= 0.0 {
                    return None;
                }
                2.0 * sigma / denom
            }
            ScheduleKind::Geometric { a, r } => {
                if a <= 0.0 {
                    return None;
                }
                let lr = r.ln();
                if lr.abs() < 1e-12 {
                    sigma / a
                } else {
                    let arg = sigma * lr / a;
                    if arg <= -1.0 {
                        return None;
                    }
                    arg.ln_1p() / lr
                }
            }
        };
        t.is_finite().then_some(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Masked,
    Uniform,
}

impl std::fmt::Display for RateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RateKind::Masked => "masked",
            RateKind::Uniform => "uniform",
        })
    }
}

/// A factorized forward process: token generator family, schedule and space.
#[derive(Debug, Clone)]
pub struct RateSpec {
    kind: RateKind,
    schedule: Schedule,
    space: SequenceSpace,
    unit: Vec<f64>,
}

impl RateSpec {
    pub fn new(kind: RateKind, schedule: Schedule, space: SequenceSpace) -> Result<Self> {
        schedule.validate()?;
        if kind == RateKind::Masked && space.mask_token().is_none() {
            return Err(Error::mode("masked rates need a space with a mask token"));
        }
        let unit = unit_generator(kind, &space);
        Ok(Self {
            kind,
            schedule,
            space,
            unit,
        })
    }

    pub fn kind(&self) -> RateKind {
        self.kind
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn space(&self) -> &SequenceSpace {
        &self.space
    }

    /// Entry `(v, w)` of the unit token generator `G`, with `Q^tok_t = beta(t) G`.
    #[inline]
    pub fn unit_rate(&self, from: usize, to: usize) -> f64 {
        self.unit[from * self.space.vocab_size() + to]
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t.is_finite() && (0.0..=self.schedule.horizon).contains(&t) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "time {t} outside [0, {}]",
                self.schedule.horizon
            )))
        }
    }

    /// The `S x S` token rate matrix `Q^tok_t`, rows indexed by source token.
    pub fn token_rate(&self, t: f64) -> Result<DMatrix<f64>> {
        self.check_time(t)?;
        let s = self.space.vocab_size();
        let beta = self.schedule.beta(t);
        Ok(DMatrix::from_fn(s, s, |v, w| beta * self.unit_rate(v, w)))
    }

    /// `Q_t v`, or `Q_t^T v` when `transpose` is set, without forming `Q_t`.
    pub fn apply_generator(&self, t: f64, v: &[f64], transpose: bool) -> Result<Vec<f64>> {
        self.check_time(t)?;
        if v.len() != self.space.state_count() {
            return Err(Error::domain(format!(
                "vector has length {}, expected {}",
                v.len(),
                self.space.state_count()
            )));
        }
        let mut out = vec![0.0; v.len()];
        self.apply_unit(v, &mut out, transpose);
        let beta = self.schedule.beta(t);
        out.iter_mut().for_each(|o| *o *= beta);
        Ok(out)
    }

    /// Kronecker sum of the unit generator applied to `v`, written into `out`.
    pub(crate) fn apply_unit(&self, v: &[f64], out: &mut [f64], transpose: bool) {
        let s = self.space.vocab_size();
        let n = self.space.state_count();
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut gathered = vec![0.0; s];
        for pos in 0..self.space.seq_len() {
            let stride = self.space.stride(pos);
            let block = stride * s;
            for hi in (0..n).step_by(block) {
                for lo in 0..stride {
                    let base = hi + lo;
                    for (b, g) in gathered.iter_mut().enumerate() {
                        *g = v[base + b * stride];
                    }
                    for a in 0..s {
                        let mut acc = 0.0;
                        for (b, &g) in gathered.iter().enumerate() {
                            let rate = if transpose {
                                self.unit[b * s + a]
                            } else {
                                self.unit[a * s + b]
                            };
                            acc += rate * g;
                        }
                        out[base + a * stride] += acc;
                    }
                }
            }
        }
    }
}

fn unit_generator(kind: RateKind, space: &SequenceSpace) -> Vec<f64> {
    let s = space.vocab_size();
    let mut g = vec![0.0; s * s];
    match kind {
        RateKind::Uniform => {
            let inv = 1.0 / s as f64;
            for v in 0..s {
                for w in 0..s {
                    g[v * s + w] = if v == w { inv - 1.0 } else { inv };
                }
            }
        }
        RateKind::Masked => {
            let m = space.mask_token().expect("checked by RateSpec::new");
            for v in (0..s).filter(|&v| v != m) {
                g[v * s + v] = -1.0;
                g[v * s + m] = 1.0;
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Adaptive Simpson quadrature, used as an independent check of the closed forms.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                left + right + delta / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 40)
    }

    fn schedules() -> Vec<Schedule> {
        vec![
            Schedule::constant(1.3, 2.0).unwrap(),
            Schedule::linear(0.2, 1.7, 1.5).unwrap(),
            Schedule::linear(2.0, -0.5, 3.0).unwrap(),
            Schedule::geometric(0.4, 3.0, 2.0).unwrap(),
            Schedule::geometric(2.0, 0.5, 2.0).unwrap(),
        ]
    }

    #[test]
    fn cumulative_examples() {
        let c = Schedule::constant(1.0, 5.0).unwrap();
        assert!((c.cumulative(10f64.ln()) - std::f64::consts::LN_10).abs() < 1e-12);
        for s in schedules() {
            assert_eq!(s.cumulative(0.0), 0.0);
        }
        let lin = Schedule::linear(0.0, 2.0, 1.0).unwrap();
        let quad = adaptive_simpson(&|t| lin.beta(t), 0.0, 1.0, 1e-12);
        assert!((quad - 1.0).abs() < 1e-10);
        assert!((lin.cumulative(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cumulative_matches_quadrature_and_inverts() {
        for s in schedules() {
            for k in 0..=10 {
                let t = s.horizon() * k as f64 / 10.0;
                let quad = adaptive_simpson(&|u| s.beta(u), 0.0, t, 1e-13);
                assert!((s.cumulative(t) - quad).abs() < 1e-10, "{s:?} t={t}");
                if t > 0.0 {
                    let back = s.inverse_cumulative(s.cumulative(t)).unwrap();
                    assert!((back - t).abs() < 1e-10, "{s:?} t={t} back={back}");
                }
            }
        }
    }

    #[test]
    fn negative_schedules_are_rejected() {
        assert!(Schedule::constant(-1.0, 1.0).is_err());
        assert!(Schedule::linear(1.0, -2.0, 1.0).is_err());
        assert!(Schedule::geometric(1.0, 0.0, 1.0).is_err());
        assert!(Schedule::constant(1.0, 0.0).is_err());
    }

    #[test]
    fn masked_token_rate_rows() {
        let space = SequenceSpace::masked(3, 1).unwrap();
        let spec = RateSpec::new(RateKind::Masked, Schedule::constant(1.0, 1.0).unwrap(), space).unwrap();
        let q = spec.token_rate(0.5).unwrap();
        assert_eq!([q[(0, 0)], q[(0, 1)], q[(0, 2)]], [-1.0, 0.0, 1.0]);
        assert_eq!([q[(2, 0)], q[(2, 1)], q[(2, 2)]], [0.0, 0.0, 0.0]);
        assert!(matches!(spec.token_rate(1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn uniform_token_rate_binary() {
        let space = SequenceSpace::new(2, 1).unwrap();
        let spec = RateSpec::new(RateKind::Uniform, Schedule::constant(1.0, 1.0).unwrap(), space).unwrap();
        let q = spec.token_rate(0.0).unwrap();
        assert_eq!(q, DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.5, -0.5]));
    }

    #[test]
    fn uniform_exit_rate_is_s_minus_one_over_s_beta() {
        for s in 2..9 {
            let space = SequenceSpace::new(s, 1).unwrap();
            let sched = Schedule::linear(0.5, 1.0, 2.0).unwrap();
            let spec = RateSpec::new(RateKind::Uniform, sched, space).unwrap();
            let t = 1.25;
            let q = spec.token_rate(t).unwrap();
            for v in 0..s {
                let exit: f64 = (0..s).filter(|&w| w != v).map(|w| q[(v, w)]).sum();
                let expected = (s as f64 - 1.0) * sched.beta(t) / s as f64;
                assert!((exit - expected).abs() < 1e-14);
                assert!((q[(v, v)] + expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn masked_kind_requires_mask() {
        let space = SequenceSpace::new(3, 2).unwrap();
        let err = RateSpec::new(RateKind::Masked, Schedule::constant(1.0, 1.0).unwrap(), space);
        assert!(matches!(err, Err(Error::Mode(_))));
    }

    /// Dense sequence-level generator assembled directly from the
    /// Hamming-one definition: `Q(x, x_{i -> w}) = Q^tok(x^i, w)`.
    fn dense_generator(spec: &RateSpec, t: f64) -> DMatrix<f64> {
        let space = spec.space();
        let n = space.state_count();
        let tok = spec.token_rate(t).unwrap();
        let mut q = DMatrix::zeros(n, n);
        for x in space.states() {
            let mut diag = 0.0;
            for nb in space.hamming_neighbors(x) {
                let r = tok[(space.token(x, nb.position), nb.token)];
                q[(x.get(), nb.state.get())] = r;
                diag += r;
            }
            q[(x.get(), x.get())] = -diag;
        }
        q
    }

    fn spec_for(kind: RateKind, s: usize, d: usize) -> RateSpec {
        let space = match kind {
            RateKind::Masked => SequenceSpace::masked(s, d).unwrap(),
            RateKind::Uniform => SequenceSpace::new(s, d).unwrap(),
        };
        RateSpec::new(kind, Schedule::linear(0.5, 0.75, 2.0).unwrap(), space).unwrap()
    }

    #[test]
    fn generator_annihilates_constants() {
        for kind in [RateKind::Masked, RateKind::Uniform] {
            let spec = spec_for(kind, 3, 3);
            let ones = vec![1.0; spec.space().state_count()];
            let out = spec.apply_generator(1.0, &ones, false).unwrap();
            assert!(out.iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn single_position_matches_token_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [RateKind::Masked, RateKind::Uniform] {
            let spec = spec_for(kind, 4, 1);
            let tok = spec.token_rate(0.7).unwrap();
            let v: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            let dv = nalgebra::DVector::from_vec(v.clone());
            let direct = &tok * &dv;
            let direct_t = tok.transpose() * &dv;
            let fast = spec.apply_generator(0.7, &v, false).unwrap();
            let fast_t = spec.apply_generator(0.7, &v, true).unwrap();
            for i in 0..4 {
                assert!((fast[i] - direct[i]).abs() < 1e-14);
                assert!((fast_t[i] - direct_t[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matrix_free_matches_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [RateKind::Masked, RateKind::Uniform] {
            let spec = spec_for(kind, 3, 3);
            let q = dense_generator(&spec, 1.3);
            let v: Vec<f64> = (0..27).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let dv = nalgebra::DVector::from_vec(v.clone());
            let want = &q * &dv;
            let want_t = q.transpose() * &dv;
            let got = spec.apply_generator(1.3, &v, false).unwrap();
            let got_t = spec.apply_generator(1.3, &v, true).unwrap();
            for i in 0..27 {
                assert!((got[i] - want[i]).abs() < 1e-12);
                assert!((got_t[i] - want_t[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_mask_state_is_absorbing() {
        let spec = spec_for(RateKind::Masked, 3, 2);
        let m = spec.space().all_mask().unwrap().get();
        let mut delta = vec![0.0; 9];
        delta[m] = 1.0;
        let out = spec.apply_generator(0.3, &delta, true).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_mismatch_is_a_domain_error() {
        let spec = spec_for(RateKind::Uniform, 2, 2);
        assert!(matches!(spec.apply_generator(0.0, &[1.0; 3], false), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn transpose_is_the_adjoint(
            seed in 0u64..1000, s in 2usize..5, d in 1usize..4, masked in proptest::bool::ANY
        ) {
            let kind = if masked { RateKind::Masked } else { RateKind::Uniform };
            let spec = spec_for(kind, s, d);
            let n = spec.space().state_count();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let qv = spec.apply_generator(0.9, &v, false).unwrap();
            let qtu = spec.apply_generator(0.9, &u, true).unwrap();
            let lhs: f64 = u.iter().zip(&qv).map(|(a, b)| a * b).sum();
            let rhs: f64 = qtu.iter().zip(&v).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-12);

            let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
            let lin = spec.apply_generator(0.9, &sum, false).unwrap();
            let qu = spec.apply_generator(0.9, &u, false).unwrap();
            for i in 0..n {
                prop_assert!((lin[i] - (2.0 * qu[i] - 3.0 * qv[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn token_rates_are_generators(t in 0.0f64..2.0, s in 2usize..7, masked in proptest::bool::ANY) {
            let kind = if masked { RateKind::Masked } else { RateKind::Uniform };
            let spec = spec_for(kind, s, 1);
            let q = spec.token_rate(t).unwrap();
            for v in 0..s {
                let mut row = 0.0;
                for w in 0..s {
                    if v != w { prop_assert!(q[(v, w)] >= 0.0); }
                    row += q[(v, w)];
                }
                prop_assert!(row.abs() < 1e-14);
            }
        }
    }
}
