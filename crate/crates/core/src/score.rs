//! Exact discrete scores, synthetic score perturbations and the loss
//! functionals built from them.
//!
//! Every loss is a time integral against `beta(t) dt = d sigma` of a sum over
//! reverse edges `x -> y`. With `s = p(y)/p(x)` and `s~ = c s`, each summand
//! reduces to `p(y)` or `p(y)^2 / p(x)` times a function of the multiplier
//! `c`, which avoids dividing by vanishing marginals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{Distribution, ForwardTrajectory, ReverseEdges};
use crate::rates::{RateKind, RateSpec};
use crate::rng;
use crate::space::StateIndex;

/// Exact score ratios `p(x_{i -> v}) / p(x)` of one marginal.
#[derive(Debug, Clone, Copy)]
pub struct ScoreField<'a> {
    spec: &'a RateSpec,
    marginal: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreEntry {
    pub state: StateIndex,
    pub position: usize,
    pub token: usize,
    pub value: f64,
}

impl<'a> ScoreField<'a> {
    pub fn new(spec: &'a RateSpec, marginal: &'a Distribution) -> Result<Self> {
        marginal.check_space(spec.space())?;
        Ok(Self {
            spec,
            marginal: marginal.weights(),
        })
    }

    pub(crate) fn from_slice(spec: &'a RateSpec, marginal: &'a [f64]) -> Self {
        Self { spec, marginal }
    }

    /// Whether `x -> x_{i -> v}` is a reverse transition: the forward
    /// process can move from `x_{i -> v}` to `x`.
    pub fn is_transition(&self, x: StateIndex, position: usize, token: usize) -> bool {
        let space = self.spec.space();
        let current = space.token(x, position);
        if token == current || token >= space.vocab_size() {
            return false;
        }
        match self.spec.kind() {
            RateKind::Uniform => true,
            RateKind::Masked => Some(current) == space.mask_token(),
        }
    }

    pub fn score(&self, x: StateIndex, position: usize, token: usize) -> Result<f64> {
        let space = self.spec.space();
        if x.get() >= space.state_count() || position >= space.seq_len() {
            return Err(Error::domain("state or position out of range"));
        }
        if !self.is_transition(x, position, token) {
            return Err(Error::support(format!(
                "no reverse transition from state {} at position {position} to token {token}",
                x.get()
            )));
        }
        let px = self.marginal[x.get()];
        if px <= 0.0 {
            return Err(Error::support(format!("marginal vanishes at state {}", x.get())));
        }
        Ok(self.marginal[space.replace(x, position, token).get()] / px)
    }

    /// All scores on the support: `p(x) > 0` and a reverse transition.
    pub fn entries(&self) -> Vec<ScoreEntry> {
        let space = self.spec.space();
        let mut out = Vec::new();
        for x in space.states().filter(|x| self.marginal[x.get()] > 0.0) {
            for nb in space.hamming_neighbors(x) {
                if self.is_transition(x, nb.position, nb.token) {
                    out.push(ScoreEntry {
                        state: x,
                        position: nb.position,
                        token: nb.token,
                        value: self.marginal[nb.state.get()] / self.marginal[x.get()],
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// `c` uniform on `[1 - eps, 1 + eps]`, hashed per bucket and edge.
    MultiplicativeUniform,
    /// `c = 1 + eps` on every edge.
    MultiplicativeFixed,
}

/// Synthetic estimator error `s~ = c s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    pub epsilon: f64,
    pub mode: PerturbationMode,
    pub seed: u64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Perturbation {
    pub fn identity() -> Self {
        Self {
            epsilon: 0.0,
            mode: PerturbationMode::MultiplicativeUniform,
            seed: 0,
        }
    }

    pub fn new(epsilon: f64, mode: PerturbationMode, seed: u64) -> Result<Self> {
        let p = Self { epsilon, mode, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(epsilon: f64, seed: u64) -> Result<Self> {
        Self::new(epsilon, PerturbationMode::MultiplicativeUniform, seed)
    }

    pub fn fixed(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, PerturbationMode::MultiplicativeFixed, 0)
    }

    /// Multipliers must stay positive, so `epsilon < 1`.
    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_finite() && (0.0..1.0).contains(&self.epsilon) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "perturbation size {} would allow nonpositive scores",
                self.epsilon
            )))
        }
    }

    pub fn is_identity(&self) -> bool {
        self.epsilon == 0.0
    }

    /// Whether every perturbed score lies in `[s/2, 3s/2]`.
    pub fn certifies_band(&self) -> bool {
        self.epsilon <= 0.5
    }

    #[inline]
    pub fn multiplier(&self, bucket: usize, x: usize, position: usize, token: usize) -> f64 {
        if self.epsilon == 0.0 {
            return 1.0;
        }
        match self.mode {
            PerturbationMode::MultiplicativeFixed => 1.0 + self.epsilon,
            PerturbationMode::MultiplicativeUniform => {
                let h = rng::hash_words(self.seed, &[bucket as u64, x as u64, position as u64, token as u64]);
                1.0 + self.epsilon * (2.0 * rng::unit_interval(h) - 1.0)
            }
        }
    }
}

/// Perturbed scores `s~_t = c s_t` along a forward trajectory. The multiplier
/// is constant on each grid interval, which serves as its time bucket.
#[derive(Debug, Clone, Copy)]
pub struct PerturbedScore<'a> {
    forward: &'a ForwardTrajectory,
    perturbation: Perturbation,
}

impl<'a> PerturbedScore<'a> {
    pub fn exact(forward: &'a ForwardTrajectory) -> Self {
        Self {
            forward,
            perturbation: Perturbation::identity(),
        }
    }

    pub fn new(forward: &'a ForwardTrajectory, perturbation: Perturbation) -> Result<Self> {
        perturbation.validate()?;
        Ok(Self { forward, perturbation })
    }

    pub fn forward(&self) -> &'a ForwardTrajectory {
        self.forward
    }

    pub fn perturbation(&self) -> &Perturbation {
        &self.perturbation
    }

    /// Exact score field at grid node `j`.
    pub fn exact_at(&self, j: usize) -> ScoreField<'a> {
        ScoreField::from_slice(self.forward.spec(), self.forward.node(j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub wsm: f64,
    pub se: f64,
    /// Cubic correction, masked rates only.
    pub l3: Option<f64>,
    /// Weighted relative score matching, masked rates only.
    pub wrsm: Option<f64>,
}

/// Per-edge integrand factors as functions of the multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Integrand {
    Wsm,
    Se,
    Wrsm,
    L3,
}

/// Sum over reverse edges at one stage marginal.
fn edge_density(edges: &ReverseEdges, mult: &[f64], p: &[f64], which: Integrand) -> f64 {
    let mut acc = 0.0;
    for x in 0..edges.state_count() {
        let px = p[x];
        if px <= 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for e in edges.start[x]..edges.start[x + 1] {
            let py = p[edges.target[e]];
            let c = mult[e];
            inner += match which {
                Integrand::Wsm => 0.5 * py * py / px * (1.0 - c) * (1.0 - c),
                Integrand::Se => py * (c - 1.0 - c.ln()),
                Integrand::Wrsm => py * (1.0 - c) * (1.0 - c),
                Integrand::L3 => py * (1.0 - c).abs().powi(3),
            };
        }
        acc += inner;
    }
    let scale = match which {
        Integrand::L3 => 1.0,
        _ => edges.unit,
    };
    scale * acc
}

fn integrate_edges(score: &PerturbedScore<'_>, which: Integrand) -> f64 {
    let forward = score.forward();
    let edges = ReverseEdges::new(forward.spec());
    let mut mult = Vec::new();
    let mut loaded = usize::MAX;
    forward.integrate(false, |k, p| {
        if k != loaded {
            edges.multipliers(score.perturbation(), k, &mut mult);
            loaded = k;
        }
        edge_density(&edges, &mult, p, which)
    })
}

fn require_masked(score: &PerturbedScore<'_>, what: &str) -> Result<()> {
    match score.forward().spec().kind() {
        RateKind::Masked => Ok(()),
        RateKind::Uniform => Err(Error::mode(format!("{what} is defined for masked rates only"))),
    }
}

/// Weighted score matching: `int 1/2 E_x sum_y Q(y,x) (s - s~)^2 dt`.
pub fn loss_wsm(score: &PerturbedScore<'_>) -> f64 {
    integrate_edges(score, Integrand::Wsm)
}

/// Score entropy: `int E_x sum_y Q(y,x) D(s, s~) dt`.
pub fn loss_se(score: &PerturbedScore<'_>) -> f64 {
    integrate_edges(score, Integrand::Se)
}

/// Weighted relative score matching: `int E_x sum_y Q(y,x) s (1 - s~/s)^2 dt`.
pub fn loss_wrsm(score: &PerturbedScore<'_>) -> Result<f64> {
    require_masked(score, "the relative score-matching loss")?;
    Ok(integrate_edges(score, Integrand::Wrsm))
}

/// Cubic correction, computed as `beta (1 - p(m))` times the conditional
/// expectation over non-mask sequences of the successor-set sum.
pub fn loss_l3(score: &PerturbedScore<'_>) -> Result<f64> {
    require_masked(score, "the cubic correction")?;
    let forward = score.forward();
    let space = forward.spec().space();
    let all_mask = space.all_mask().expect("masked spec has a mask").get();
    let mask = space.mask_token().expect("masked spec has a mask");
    let successors: Vec<Vec<(usize, usize, usize)>> = space
        .states()
        .map(|y| {
            (0..space.seq_len())
                .filter(|&i| space.token(y, i) != mask)
                .map(|i| (space.replace(y, i, mask).get(), i, space.token(y, i)))
                .collect()
        })
        .collect();
    let pert = *score.perturbation();
    Ok(forward.integrate(false, |k, p| {
        let unmasked = 1.0 - p[all_mask];
        if unmasked <= 0.0 {
            return 0.0;
        }
        let mut expectation = 0.0;
        for (y, succ) in successors.iter().enumerate() {
            if y == all_mask || p[y] <= 0.0 {
                continue;
            }
            let cond = p[y] / unmasked;
            let inner: f64 = succ
                .iter()
                .map(|&(x, i, v)| (1.0 - pert.multiplier(k, x, i, v)).abs().powi(3))
                .sum();
            expectation += cond * inner;
        }
        unmasked * expectation
    }))
}

/// The same cubic correction as an unconditioned double sum over reverse edges.
pub fn loss_l3_unconditioned(score: &PerturbedScore<'_>) -> Result<f64> {
    require_masked(score, "the cubic correction")?;
    Ok(integrate_edges(score, Integrand::L3))
}

/// All losses over one shared quadrature.
pub fn compute_losses(score: &PerturbedScore<'_>) -> LossReport {
    let masked = score.forward().spec().kind() == RateKind::Masked;
    LossReport {
        wsm: loss_wsm(score),
        se: loss_se(score),
        l3: masked.then(|| loss_l3_unconditioned(score).expect("masked")),
        wrsm: masked.then(|| integrate_edges(score, Integrand::Wrsm)),
    }
}

/// Bregman divergence of `a log a - a`: `s log(s/s~) + s~ - s`.
pub fn bregman(s: f64, s_tilde: f64) -> Result<f64> {
    if !(s > 0.0 && s_tilde > 0.0 && s.is_finite() && s_tilde.is_finite()) {
        return Err(Error::domain("Bregman divergence needs positive finite arguments"));
    }
    Ok(s * (s / s_tilde).ln() + s_tilde - s)
}

/// `(u^2/2 + u + ln(1-u), 2|u|^3/3)` for `|u| <= 1/2`; the first never exceeds the second.
pub fn elementary_inequality_check(u: f64) -> Result<(f64, f64)> {
    if u.is_nan() || u.abs() > 0.5 {
        return Err(Error::domain(format!("|u| = {} exceeds 1/2", u.abs())));
    }
    Ok((0.5 * u * u + u + (-u).ln_1p(), 2.0 * u.abs().powi(3) / 3.0))
}

/// `((s/2)(1 - s~/s)^2, D(s, s~) + 2|s - s~|^3 / (3 s^2))` for `s~` in `[s/2, 3s/2]`.
pub fn bregman_cubic_check(s: f64, s_tilde: f64) -> Result<(f64, f64)> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::domain("s must be positive"));
    }
    if !(s_tilde >= 0.5 * s && s_tilde <= 1.5 * s) {
        return Err(Error::domain(format!("{s_tilde} outside [{}, {}]", 0.5 * s, 1.5 * s)));
    }
    let ratio = 1.0 - s_tilde / s;
    let lhs = 0.5 * s * ratio * ratio;
    let rhs = bregman(s, s_tilde)? + 2.0 * (s - s_tilde).abs().powi(3) / (3.0 * s * s);
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::IntegratorConfig;
    use crate::rates::Schedule;
    use crate::space::SequenceSpace;
    use proptest::prelude::*;

    fn masked_run(eps: f64, mode: PerturbationMode) -> (ForwardTrajectory, Perturbation) {
        let space = SequenceSpace::masked(3, 2).unwrap();
        let spec = RateSpec::new(RateKind::Masked, Schedule::constant(1.5, 2.0).unwrap(), space.clone()).unwrap();
        let p0 = Distribution::random_simplex(&space, 21, true);
        let cfg = IntegratorConfig {
            steps_per_unit: 16.0,
            richardson_tol: 1e-6,
            ..IntegratorConfig::default()
        };
        let fwd = ForwardTrajectory::new(&p0, &spec, &cfg).unwrap();
        (fwd, Perturbation::new(eps, mode, 5).unwrap())
    }

    #[test]
    fn bregman_examples() {
        assert_eq!(bregman(1.0, 1.0).unwrap(), 0.0);
        assert!((bregman(1.0, 0.5).unwrap() - (2f64.ln() - 0.5)).abs() < 1e-15);
        assert!((bregman(2.0, 3.0).unwrap() - 0.189_069_783_783_671_1).abs() < 1e-12);
        assert!(bregman(0.0, 1.0).is_err());
        assert!(bregman(1.0, -1.0).is_err());
    }

    #[test]
    fn elementary_inequality_examples() {
        assert_eq!(elementary_inequality_check(0.0).unwrap(), (0.0, 0.0));
        let (l, r) = elementary_inequality_check(0.5).unwrap();
        assert!((l - (0.625 - 2f64.ln())).abs() < 1e-15 && l <= r);
        assert!((r - 1.0 / 12.0).abs() < 1e-15);
        let (l, r) = elementary_inequality_check(-0.5).unwrap();
        assert!((l - (0.125 - 0.5 + 1.5f64.ln())).abs() < 1e-15 && l <= r);
        assert!(elementary_inequality_check(0.51).is_err());
    }

    #[test]
    fn bregman_cubic_examples() {
        assert_eq!(bregman_cubic_check(2.0, 2.0).unwrap(), (0.0, 0.0));
        let (l, r) = bregman_cubic_check(1.0, 1.5).unwrap();
        assert!((l - 0.125).abs() < 1e-15);
        assert!((r - (0.5 - 1.5f64.ln() + 1.0 / 12.0)).abs() < 1e-15);
        assert!((r - 0.177868).abs() < 5e-7);
        assert!(bregman_cubic_check(1.0, 1.6).is_err());
    }

    #[test]
    fn losses_vanish_without_perturbation() {
        let (fwd, _) = masked_run(0.0, PerturbationMode::MultiplicativeUniform);
        let r = compute_losses(&PerturbedScore::exact(&fwd));
        assert_eq!((r.wsm, r.se, r.l3, r.wrsm), (0.0, 0.0, Some(0.0), Some(0.0)));
    }

    #[test]
    fn conditioned_and_unconditioned_cubic_terms_agree() {
        let (fwd, pert) = masked_run(0.4, PerturbationMode::MultiplicativeUniform);
        let score = PerturbedScore::new(&fwd, pert).unwrap();
        let a = loss_l3(&score).unwrap();
        let b = loss_l3_unconditioned(&score).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-10 * a.max(1.0), "{a} {b}");
    }

    #[test]
    fn relative_loss_is_dominated() {
        for seed in 0..5 {
            let (fwd, _) = masked_run(0.5, PerturbationMode::MultiplicativeUniform);
            let score = PerturbedScore::new(&fwd, Perturbation::uniform(0.5, seed).unwrap()).unwrap();
            let r = compute_losses(&score);
            assert!(r.wrsm.unwrap() <= 2.0 * r.se + 4.0 / 3.0 * r.l3.unwrap());
        }
    }

    #[test]
    fn uniform_mode_rejects_masked_only_losses() {
        let space = SequenceSpace::new(2, 2).unwrap();
        let spec = RateSpec::new(RateKind::Uniform, Schedule::constant(1.0, 1.0).unwrap(), space.clone()).unwrap();
        let fwd = ForwardTrajectory::new(&Distribution::uniform(&space), &spec, &IntegratorConfig::default()).unwrap();
        let score = PerturbedScore::exact(&fwd);
        assert!(matches!(loss_l3(&score), Err(Error::Mode(_))));
        assert!(matches!(loss_wrsm(&score), Err(Error::Mode(_))));
        assert!(compute_losses(&score).l3.is_none());
    }

    #[test]
    fn score_field_support() {
        let space = SequenceSpace::masked(3, 2).unwrap();
        let spec = RateSpec::new(RateKind::Masked, Schedule::constant(1.0, 1.0).unwrap(), space.clone()).unwrap();
        let p = Distribution::new(vec![0.1, 0.2, 0.1, 0.0, 0.2, 0.1, 0.1, 0.1, 0.1], 0.5).unwrap();
        let field = ScoreField::new(&spec, &p).unwrap();
        let x = space.encode(&[2, 0]).unwrap();
        assert!((field.score(x, 0, 1).unwrap() - 0.2 / 0.1).abs() < 1e-15);
        assert!(matches!(field.score(x, 1, 1), Err(Error::Support(_))));
        let dead = space.encode(&[0, 1]).unwrap();
        assert_eq!(p.weights()[dead.get()], 0.0);
        for e in field.entries() {
            assert!(p.weights()[e.state.get()] > 0.0);
            assert_eq!(space.token(e.state, e.position), 2);
            let y = space.replace(e.state, e.position, e.token);
            assert!((p.weights()[e.state.get()] * e.value - p.weights()[y.get()]).abs() < 1e-15);
        }
    }

    #[test]
    fn perturbation_validation_and_range() {
        assert!(Perturbation::uniform(1.0, 0).is_err());
        assert!(Perturbation::uniform(-0.1, 0).is_err());
        let p = Perturbation::uniform(0.3, 17).unwrap();
        for b in 0..50 {
            let c = p.multiplier(b, 3, 1, 2);
            assert!((0.7..=1.3).contains(&c));
            assert_eq!(c, p.multiplier(b, 3, 1, 2));
        }
        assert_eq!(Perturbation::fixed(0.25).unwrap().multiplier(9, 9, 9, 9), 1.25);
    }

    proptest! {
        #[test]
        fn elementary_inequality_holds(u in -0.5f64..=0.5) {
            let (l, r) = elementary_inequality_check(u).unwrap();
            prop_assert!(l <= r + 1e-16);
        }

        #[test]
        fn bregman_is_nonnegative(s in 1e-3f64..1e3, t in 1e-3f64..1e3) {
            prop_assert!(bregman(s, t).unwrap() >= -1e-12 * s.max(t));
        }
    }
}
