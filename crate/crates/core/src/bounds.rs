//! Right-hand sides of the convergence bounds and their comparison with
//! exactly computed left-hand sides.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{approx_reverse, Distribution, ForwardTrajectory, IntegratorConfig};
use crate::metrics::{self, c_psi, IpmSpec};
use crate::rates::{RateKind, RateSpec};
use crate::score::{compute_losses, LossReport, Perturbation, PerturbedScore};

/// Slack allowed on a margin before a bound counts as violated.
pub const MARGIN_TOL: f64 = 1e-9;

/// Generic bound bracket `prior_term + loss_term`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bracket {
    /// `d e^{-||beta||_1}`
    pub prior_term: f64,
    pub loss_term: f64,
    /// Cubic correction entering the loss term, masked rates only.
    pub l3_term: Option<f64>,
    /// Time integral multiplying the loss: `||beta (1 - p(m))||_1` or `||beta||_1`.
    pub prefactor: f64,
}

impl Bracket {
    pub fn total(&self) -> f64 {
        self.prior_term + self.loss_term
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub prior_term: f64,
    pub loss_term: f64,
    pub l3_term: Option<f64>,
    pub components: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(id: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self {
            id: id.into(),
            lhs,
            rhs,
            margin: rhs - lhs,
            prior_term: 0.0,
            loss_term: 0.0,
            l3_term: None,
            components: BTreeMap::new(),
        }
    }

    /// `lhs` against `scale * bracket`.
    pub fn from_bracket(id: impl Into<String>, lhs: f64, bracket: &Bracket, scale: f64) -> Self {
        let mut r = Self::new(id, lhs, scale * bracket.total());
        r.prior_term = bracket.prior_term;
        r.loss_term = bracket.loss_term;
        r.l3_term = bracket.l3_term;
        r.components.insert("scale".into(), scale);
        r.components.insert("prefactor".into(), bracket.prefactor);
        r
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.components.insert(key.into(), value);
        self
    }

    pub fn holds(&self) -> bool {
        self.margin >= -MARGIN_TOL
    }
}

fn check_sigma(sigma_total: f64) -> Result<()> {
    if sigma_total.is_finite() && sigma_total >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("total noise {sigma_total} must be finite and nonnegative")))
    }
}

/// `d e^{-||beta||_1}`.
pub fn prior_term(sigma_total: f64, seq_len: usize) -> f64 {
    seq_len as f64 * (-sigma_total).exp()
}

/// Masked-rate bracket: `d e^{-||beta||_1} + sqrt(2d) sqrt(I) sqrt(L_SE + 2/3 L_3)`
/// with `I = int beta (1 - p_t(m)) dt`.
pub fn bound_masked(
    losses: &LossReport,
    sigma_total: f64,
    noise_mass: f64,
    seq_len: usize,
    perturbation: &Perturbation,
) -> Result<Bracket> {
    check_sigma(sigma_total)?;
    if !perturbation.certifies_band() {
        return Err(Error::Hypothesis(format!(
            "perturbation epsilon {} does not keep the estimated score within [s/2, 3s/2]",
            perturbation.epsilon
        )));
    }
    let l3 = losses
        .l3
        .ok_or_else(|| Error::mode("the masked bound needs the cubic correction"))?;
    if !(noise_mass >= 0.0 && losses.se >= 0.0 && l3 >= 0.0) {
        return Err(Error::numeric("negative bound ingredient"));
    }
    let d = seq_len as f64;
    Ok(Bracket {
        prior_term: prior_term(sigma_total, seq_len),
        loss_term: (2.0 * d).sqrt() * noise_mass.sqrt() * (losses.se + 2.0 / 3.0 * l3).sqrt(),
        l3_term: Some(l3),
        prefactor: noise_mass,
    })
}

/// Uniform-rate bracket: `d e^{-||beta||_1} + sqrt(2d) sqrt(||beta||_1) sqrt(L_WSM)`.
pub fn bound_uniform(losses: &LossReport, sigma_total: f64, seq_len: usize) -> Result<Bracket> {
    check_sigma(sigma_total)?;
    if losses.wsm < 0.0 {
        return Err(Error::numeric("negative score-matching loss"));
    }
    let d = seq_len as f64;
    Ok(Bracket {
        prior_term: prior_term(sigma_total, seq_len),
        loss_term: (2.0 * d).sqrt() * sigma_total.sqrt() * losses.wsm.sqrt(),
        l3_term: None,
        prefactor: sigma_total,
    })
}

/// `int beta(t) (1 - p_t(m)) dt` by quadrature along the trajectory.
pub fn masked_noise_mass(forward: &ForwardTrajectory) -> Result<f64> {
    let m = forward
        .spec()
        .space()
        .all_mask()
        .ok_or_else(|| Error::mode("noise mass is defined for masked rates only"))?
        .get();
    Ok(forward.integrate(true, |_, p| 1.0 - p[m]))
}

/// Closed form of the noise mass when the data avoids the mask token, from
/// `p_t(m) = (1 - e^{-int beta})^d`.
pub fn masked_noise_mass_closed_form(sigma_total: f64, seq_len: usize) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0;
    for k in 1..=seq_len {
        binom *= (seq_len + 1 - k) as f64 / k as f64;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        total += sign * binom * -(-(k as f64) * sigma_total).exp_m1() / k as f64;
    }
    total
}

/// `(exact, bound)` for the masked prior mismatch `TV(p_T, delta_m)`.
pub fn prior_mismatch_masked(sigma_total: f64, seq_len: usize) -> Result<(f64, f64)> {
    check_sigma(sigma_total)?;
    let exact = -(seq_len as f64 * (-(-sigma_total).exp()).ln_1p()).exp_m1();
    Ok((exact, prior_term(sigma_total, seq_len)))
}

/// Bound `d rho_T` on the uniform prior mismatch `TV(p_T, pi^d)`.
pub fn prior_mismatch_uniform(sigma_total: f64, seq_len: usize) -> Result<f64> {
    check_sigma(sigma_total)?;
    Ok(prior_term(sigma_total, seq_len))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeighbourSum {
    /// Quadrature of `sum_x sum_{y != x} p_t(x) Q_t(y, x)`.
    pub computed: f64,
    /// `||beta||_1 d (S - 1) / S`
    pub closed_form: f64,
    /// `d ||beta||_1`
    pub bound: f64,
}

/// Total inflow rate integrated along a uniform-rate trajectory.
pub fn lemma_a2_sum(forward: &ForwardTrajectory) -> Result<NeighbourSum> {
    let spec = forward.spec();
    if spec.kind() != RateKind::Uniform {
        return Err(Error::mode("the neighbour-sum identity is stated for uniform rates"));
    }
    let space = spec.space();
    let rows: Vec<f64> = space
        .states()
        .map(|x| {
            space
                .hamming_neighbors(x)
                .iter()
                .map(|nb| spec.unit_rate(nb.token, space.token(x, nb.position)))
                .sum()
        })
        .collect();
    let computed = forward.integrate(true, |_, p| p.iter().zip(&rows).map(|(a, b)| a * b).sum());
    let sigma = spec.schedule().total();
    let (s, d) = (space.vocab_size() as f64, space.seq_len() as f64);
    Ok(NeighbourSum {
        computed,
        closed_form: sigma * d * (s - 1.0) / s,
        bound: d * sigma,
    })
}

/// Where approximate generation starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    /// The tractable prior: all-mask or uniform.
    #[default]
    Base,
    /// The true terminal marginal.
    Exact,
}

/// Forward pass, perturbed reverse pass and losses for one instance.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub data: Distribution,
    pub forward: ForwardTrajectory,
    pub perturbation: Perturbation,
    pub start_kind: StartKind,
    pub start: Distribution,
    pub recovered: Distribution,
    pub losses: LossReport,
    /// `int beta (1 - p(m))`, masked rates only.
    pub noise_mass: Option<f64>,
}

impl PipelineRun {
    pub fn execute(
        spec: &RateSpec,
        data: &Distribution,
        integrator: &IntegratorConfig,
        perturbation: Perturbation,
        start_kind: StartKind,
    ) -> Result<Self> {
        perturbation.validate()?;
        let forward = ForwardTrajectory::new(data, spec, integrator)?;
        let start = match start_kind {
            StartKind::Base => Distribution::prior(spec),
            StartKind::Exact => forward.terminal(),
        };
        let score = PerturbedScore::new(&forward, perturbation)?;
        let recovered = approx_reverse(&start, &score)?;
        let losses = compute_losses(&score);
        let noise_mass = match spec.kind() {
            RateKind::Masked => Some(masked_noise_mass(&forward)?),
            RateKind::Uniform => None,
        };
        Ok(Self {
            data: data.clone(),
            forward,
            perturbation,
            start_kind,
            start,
            recovered,
            losses,
            noise_mass,
        })
    }

    pub fn spec(&self) -> &RateSpec {
        self.forward.spec()
    }

    pub fn sigma_total(&self) -> f64 {
        self.spec().schedule().total()
    }

    /// The bound bracket appropriate to the rate kind.
    pub fn bracket(&self) -> Result<Bracket> {
        let d = self.spec().space().seq_len();
        match self.spec().kind() {
            RateKind::Masked => bound_masked(
                &self.losses,
                self.sigma_total(),
                self.noise_mass.expect("masked runs record the noise mass"),
                d,
                &self.perturbation,
            ),
            RateKind::Uniform => bound_uniform(&self.losses, self.sigma_total(), d),
        }
    }

    fn case_id(&self) -> &'static str {
        match self.spec().kind() {
            RateKind::Masked => "masked",
            RateKind::Uniform => "uniform",
        }
    }
}

/// TV between the data and the generated law against the bracket.
pub fn corollary_tv_check(run: &PipelineRun) -> Result<BoundReport> {
    let lhs = metrics::tv(&run.data, &run.recovered)?;
    let bracket = run.bracket()?;
    Ok(BoundReport::from_bracket(format!("tv/{}", run.case_id()), lhs, &bracket, 1.0))
}

/// `gamma_Psi(p_data, p~_0) <= 2 C_Psi * bracket`.
pub fn corollary_spec_check(run: &PipelineRun, ipm: &IpmSpec) -> Result<BoundReport> {
    let space = run.spec().space();
    let lhs = metrics::evaluate(ipm, space, &run.data, &run.recovered)?;
    let c = c_psi(ipm, space.seq_len())?;
    let bracket = run.bracket()?;
    Ok(BoundReport::from_bracket(format!("{}/{}", ipm.name(), run.case_id()), lhs, &bracket, 2.0 * c).with("c_psi", c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::Schedule;
    use crate::space::SequenceSpace;

    fn zero_losses(masked: bool) -> LossReport {
        LossReport {
            wsm: 0.0,
            se: 0.0,
            l3: masked.then_some(0.0),
            wrsm: masked.then_some(0.0),
        }
    }

    #[test]
    fn zero_loss_brackets() {
        let b = bound_masked(&zero_losses(true), 10f64.ln(), 0.5, 2, &Perturbation::identity()).unwrap();
        assert!((b.total() - 0.2).abs() < 1e-15);
        let u = bound_uniform(&zero_losses(false), 10f64.ln(), 2).unwrap();
        assert!((u.total() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn uniform_bracket_arithmetic() {
        let mut l = zero_losses(false);
        l.wsm = 0.01;
        let b = bound_uniform(&l, 1.0, 1).unwrap();
        assert!((b.total() - ((-1.0f64).exp() + 2f64.sqrt() * 0.1)).abs() < 1e-15);
        assert!((b.total() - 0.509301).abs() < 1e-6);
        l.wsm = 0.02;
        assert!(bound_uniform(&l, 1.0, 1).unwrap().total() > b.total());
    }

    #[test]
    fn band_is_a_hypothesis() {
        let p = Perturbation::uniform(0.6, 1).unwrap();
        let e = bound_masked(&zero_losses(true), 1.0, 0.5, 2, &p).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn prior_mismatch_examples() {
        let (exact, bound) = prior_mismatch_masked(10f64.ln(), 2).unwrap();
        assert!((exact - 0.19).abs() < 1e-15);
        assert!((bound - 0.2).abs() < 1e-15);
        assert!(prior_mismatch_masked(800.0, 3).unwrap().0 < 1e-300);
        let eps: f64 = 0.01;
        for d in 1..6 {
            assert!(prior_mismatch_uniform((d as f64 / eps).ln(), d).unwrap() <= eps * (1.0 + 1e-15));
        }
    }

    #[test]
    fn noise_mass_closed_form_matches_direct_quadrature() {
        for d in 1..5 {
            for sigma in [0.3, 1.0, 3.0] {
                let n = 20_000;
                let h = sigma / n as f64;
                let f = |s: f64| 1.0 - (-(-s).exp_m1()).powi(d as i32);
                let mut acc = f(0.0) + f(sigma);
                for i in 1..n {
                    acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
                }
                let simpson = acc * h / 3.0;
                assert!((masked_noise_mass_closed_form(sigma, d) - simpson).abs() < 1e-12, "{d} {sigma}");
            }
        }
    }

    #[test]
    fn noise_mass_along_trajectory() {
        let space = SequenceSpace::masked(3, 3).unwrap();
        let spec = RateSpec::new(RateKind::Masked, Schedule::linear(0.2, 1.0, 2.0).unwrap(), space.clone()).unwrap();
        let p0 = Distribution::random_simplex(&space, 3, true);
        let fwd = ForwardTrajectory::new(&p0, &spec, &IntegratorConfig::default()).unwrap();
        let q = masked_noise_mass(&fwd).unwrap();
        assert!((q - masked_noise_mass_closed_form(spec.schedule().total(), 3)).abs() < 1e-9);
    }

    #[test]
    fn neighbour_sum_example() {
        let space = SequenceSpace::new(2, 1).unwrap();
        let spec = RateSpec::new(RateKind::Uniform, Schedule::constant(1.0, 1.0).unwrap(), space.clone()).unwrap();
        let fwd = ForwardTrajectory::new(&Distribution::random_simplex(&space, 1, false), &spec, &IntegratorConfig::default()).unwrap();
        let r = lemma_a2_sum(&fwd).unwrap();
        assert!((r.closed_form - 0.5).abs() < 1e-15);
        assert!((r.computed - 0.5).abs() < 1e-8);
        assert_eq!(r.bound, 1.0);
    }

    #[test]
    fn exact_pipeline_has_zero_lhs() {
        let space = SequenceSpace::new(3, 2).unwrap();
        let spec = RateSpec::new(RateKind::Uniform, Schedule::constant(1.0, 2.0).unwrap(), space.clone()).unwrap();
        let data = Distribution::random_simplex(&space, 7, false);
        let run = PipelineRun::execute(&spec, &data, &IntegratorConfig::default(), Perturbation::identity(), StartKind::Exact).unwrap();
        let r = corollary_tv_check(&run).unwrap();
        assert!(r.lhs < 1e-8);
        assert!((r.margin - r.rhs).abs() < 1e-8);
        assert_eq!(r.loss_term, 0.0);
    }

    #[test]
    fn corollary_tv_is_the_tv_spec() {
        let space = SequenceSpace::masked(3, 2).unwrap();
        let spec = RateSpec::new(RateKind::Masked, Schedule::constant(1.0, 1.5).unwrap(), space.clone()).unwrap();
        let data = Distribution::random_simplex(&space, 2, true);
        let run = PipelineRun::execute(&spec, &data, &IntegratorConfig::default(), Perturbation::uniform(0.3, 5).unwrap(), StartKind::Base).unwrap();
        let a = corollary_tv_check(&run).unwrap();
        let b = corollary_spec_check(&run, &IpmSpec::Tv).unwrap();
        assert_eq!(a.lhs, b.lhs);
        assert_eq!(a.rhs, b.rhs);
        assert!(a.holds());
        for ipm in IpmSpec::standard_set(2) {
            let r = corollary_spec_check(&run, &ipm).unwrap();
            assert!(r.holds(), "{}", r.id);
        }
        assert!(corollary_spec_check(&run, &IpmSpec::BoundedLipschitz).is_err());
    }
}
