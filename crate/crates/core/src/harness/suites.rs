//! Verification suites, one per bound, lemma or identity.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::{
    corollary_spec_check, corollary_tv_check, bound_uniform, lemma_a2_sum, masked_noise_mass,
    masked_noise_mass_closed_form, prior_mismatch_masked, prior_mismatch_uniform, PipelineRun, StartKind, MARGIN_TOL,
};
use crate::coupling::{chi_square_gof, gillespie_path, sample_state, synchronous_coupling, uniformized_path, Rings};
use crate::error::{Error, Result};
use crate::evolve::{duality_residual, forward_marginal_with, solve_kbe, Distribution, ForwardTrajectory};
use crate::metrics::tv;
use crate::rates::{RateKind, RateSpec};
use crate::rng::{hash_words, split};
use crate::score::{
    bregman_cubic_check, compute_losses, elementary_inequality_check, loss_l3, loss_l3_unconditioned, Perturbation,
    PerturbedScore,
};

use super::config::{DataSpec, ExperimentConfig};
use super::record::{Check, RunRecord};

type Runner = fn(&ExperimentConfig, &mut RunRecord) -> Result<()>;

/// A registered suite.
pub struct Suite {
    pub name: &'static str,
    pub description: &'static str,
    /// Rate kind the suite is stated for; `None` runs in the configured kind.
    pub kind: Option<RateKind>,
    run: Runner,
}

/// Every suite, in documentation order.
pub const SUITES: &[Suite] = &[
    Suite {
        name: "thm1_case1",
        description: "masked-rate convergence bound with the cubic correction",
        kind: Some(RateKind::Masked),
        run: thm1_case1,
    },
    Suite {
        name: "thm1_case2",
        description: "uniform-rate convergence bound",
        kind: Some(RateKind::Uniform),
        run: thm1_case2,
    },
    Suite {
        name: "cor_tv",
        description: "total-variation bound between data and generated law",
        kind: None,
        run: cor_tv,
    },
    Suite {
        name: "cor_spec",
        description: "specialized bounds for every implemented metric",
        kind: None,
        run: cor_spec,
    },
    Suite {
        name: "lemma_a1",
        description: "sup-norm contraction of the backward equation",
        kind: None,
        run: lemma_a1,
    },
    Suite {
        name: "lemma_a2",
        description: "neighbour-sum identity under uniform rates",
        kind: Some(RateKind::Uniform),
        run: lemma_a2,
    },
    Suite {
        name: "lemma_a3",
        description: "conditioned and unconditioned cubic corrections agree",
        kind: Some(RateKind::Masked),
        run: lemma_a3,
    },
    Suite {
        name: "lemma_a4",
        description: "elementary logarithm inequality on a dense grid",
        kind: None,
        run: lemma_a4,
    },
    Suite {
        name: "lemma_a5",
        description: "Bregman divergence with cubic remainder on a dense grid",
        kind: None,
        run: lemma_a5,
    },
    Suite {
        name: "lemma_a6",
        description: "relative score matching controlled by score entropy and the cubic term",
        kind: Some(RateKind::Masked),
        run: lemma_a6,
    },
    Suite {
        name: "lemma_a7",
        description: "masked prior mismatch: exact value and bound",
        kind: Some(RateKind::Masked),
        run: lemma_a7,
    },
    Suite {
        name: "thm_c1",
        description: "uniform prior mismatch bound through the synchronous coupling",
        kind: Some(RateKind::Uniform),
        run: thm_c1,
    },
    Suite {
        name: "duality",
        description: "adjoint identity linking generation error to score error",
        kind: None,
        run: duality,
    },
    Suite {
        name: "lemma_c1",
        description: "coupling inequality for total variation",
        kind: Some(RateKind::Uniform),
        run: lemma_c1,
    },
    Suite {
        name: "lemma_c2",
        description: "uniformized and event-driven samplers reproduce the forward law",
        kind: Some(RateKind::Uniform),
        run: lemma_c2,
    },
    Suite {
        name: "appendix_d",
        description: "all-mask probability, score cancellation and exact boundary TV",
        kind: Some(RateKind::Masked),
        run: appendix_d,
    },
];

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|s| s.name).collect()
}

pub fn find_suite(name: &str) -> Result<&'static Suite> {
    SUITES
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Usage(format!("unknown suite `{name}`; known suites: {}", suite_names().join(", "))))
}

/// Configuration used when a suite is run without one.
pub fn default_config(name: &str) -> Result<ExperimentConfig> {
    let suite = find_suite(name)?;
    let kind = suite.kind.unwrap_or(if name == "duality" { RateKind::Uniform } else { RateKind::Masked });
    let mut cfg = ExperimentConfig::new(3, 2, kind);
    cfg.perturbation = Perturbation::uniform(if name == "duality" { 0.5 } else { 0.25 }, 1)?;
    cfg.data = DataSpec::RandomSimplex { seed: 1 };
    Ok(cfg)
}

/// Runs one suite; checks that fail are recorded, not raised.
pub fn run_suite(name: &str, cfg: &ExperimentConfig) -> Result<RunRecord> {
    let suite = find_suite(name)?;
    if let Some(kind) = suite.kind {
        if kind != cfg.rate_kind {
            return Err(Error::Mode(format!("suite `{name}` needs {kind} rates, the config has {}", cfg.rate_kind)));
        }
    }
    cfg.validate()?;
    let started = Instant::now();
    let mut record = RunRecord::new(name, cfg);
    (suite.run)(cfg, &mut record)?;
    if cfg.record_timings {
        record.runtime_ms = Some(started.elapsed().as_secs_f64() * 1e3);
    }
    Ok(record)
}

fn setup(cfg: &ExperimentConfig) -> Result<(RateSpec, Distribution)> {
    let spec = cfg.rate_spec()?;
    let data = cfg.data(spec.space())?;
    Ok((spec, data))
}

fn pipeline(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<PipelineRun> {
    let (spec, data) = setup(cfg)?;
    let run = PipelineRun::execute(&spec, &data, &cfg.integrator, cfg.perturbation, cfg.start)?;
    record.diagnostics.absorb(run.forward.max_clip(), run.forward.richardson_gap());
    record.losses.push(run.losses);
    Ok(run)
}

fn forward(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<ForwardTrajectory> {
    let (spec, data) = setup(cfg)?;
    let f = ForwardTrajectory::new(&data, &spec, &cfg.integrator)?;
    record.diagnostics.absorb(f.max_clip(), f.richardson_gap());
    Ok(f)
}

/// Observable with entries uniform on `[-1, 1]`.
pub fn random_observable(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

fn push_bounds(run: &PipelineRun, cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    record.push_bound(corollary_tv_check(run)?);
    for ipm in cfg.metric_list() {
        let report = corollary_spec_check(run, &ipm)?;
        if record.bounds.iter().all(|b| b.id != report.id) {
            record.push_bound(report);
        }
    }
    Ok(())
}

fn prior_only(run: &PipelineRun, record: &mut RunRecord) -> Result<()> {
    if run.perturbation.is_identity() && run.start_kind == StartKind::Base {
        let report = corollary_tv_check(run)?;
        record.push(Check::new("tv_within_prior_term", report.lhs, report.prior_term, MARGIN_TOL));
    }
    Ok(())
}

const WITNESS_VOCABS: [usize; 3] = [2, 4, 8];

fn witness_config(cfg: &ExperimentConfig, vocab_size: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.vocab_size = vocab_size;
    c.data = DataSpec::RandomSimplex { seed: cfg.seed };
    c
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

fn thm1_case1(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let run = pipeline(cfg, record)?;
    push_bounds(&run, cfg, record)?;
    prior_only(&run, record)?;
    let sigma = run.sigma_total();
    let closed = masked_noise_mass_closed_form(sigma, cfg.seq_len);
    let quad = run.noise_mass.expect("masked run");
    record.push(Check::at_most("noise_mass_vs_closed_form", (quad - closed).abs(), 1e-8));
    let mut quads = Vec::new();
    for s in WITNESS_VOCABS {
        let f = forward(&witness_config(cfg, s), record)?;
        quads.push(masked_noise_mass(&f)?);
    }
    record.push(Check::at_most("noise_mass_spread_over_vocab", spread(&quads), 1e-9 * closed.max(1.0)));
    Ok(())
}

fn thm1_case2(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let run = pipeline(cfg, record)?;
    push_bounds(&run, cfg, record)?;
    prior_only(&run, record)?;
    let mut exact_rhs = Vec::new();
    let mut prior_terms = Vec::new();
    let mut prefactors = Vec::new();
    for s in WITNESS_VOCABS {
        let c = witness_config(cfg, s);
        let f = forward(&c, record)?;
        let exact = compute_losses(&PerturbedScore::exact(&f));
        let b = bound_uniform(&exact, f.spec().schedule().total(), cfg.seq_len)?;
        exact_rhs.push(b.total());
        let perturbed = bound_uniform(&run.losses, f.spec().schedule().total(), cfg.seq_len)?;
        prior_terms.push(perturbed.prior_term);
        prefactors.push(perturbed.prefactor);
    }
    record.push(Check::at_most("rhs_spread_over_vocab_at_zero_error", spread(&exact_rhs), 0.0));
    record.push(Check::at_most("prior_term_spread_over_vocab", spread(&prior_terms), 0.0));
    record.push(Check::at_most("prefactor_spread_over_vocab", spread(&prefactors), 0.0));
    Ok(())
}

fn cor_tv(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let run = pipeline(cfg, record)?;
    record.push_bound(corollary_tv_check(&run)?);
    prior_only(&run, record)
}

fn cor_spec(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let run = pipeline(cfg, record)?;
    for ipm in cfg.metric_list() {
        record.push_bound(corollary_spec_check(&run, &ipm)?);
    }
    Ok(())
}

fn lemma_a1(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let f = forward(cfg, record)?;
    let score = PerturbedScore::new(&f, cfg.perturbation)?;
    let n = f.state_count();
    let mut worst: f64 = f64::NEG_INFINITY;
    for k in 0..cfg.samples {
        let psi = random_observable(n, hash_words(cfg.seed, &[1, k as u64]));
        let phi = solve_kbe(&psi, &score)?;
        let growth = phi.sup_norms().into_iter().fold(f64::NEG_INFINITY, f64::max) - sup_norm(&psi);
        worst = worst.max(growth);
    }
    record.push(Check::new("sup_norm_growth", worst, 0.0, 1e-10));
    let phi = solve_kbe(&vec![0.7; n], &score)?;
    let drift = (0..phi.node_count())
        .flat_map(|j| phi.node(j).iter().map(|v| (v - 0.7).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    record.push(Check::at_most("constant_observable_drift", drift, 1e-12));
    Ok(())
}

fn lemma_a2(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let f = forward(cfg, record)?;
    let r = lemma_a2_sum(&f)?;
    record.push(Check::at_most("quadrature_vs_closed_form", (r.computed - r.closed_form).abs(), 1e-8));
    record.push(Check::new("closed_form_within_bound", r.closed_form, r.bound, 0.0));
    Ok(())
}

fn lemma_a3(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let f = forward(cfg, record)?;
    let score = PerturbedScore::new(&f, cfg.perturbation)?;
    let a = loss_l3(&score)?;
    let b = loss_l3_unconditioned(&score)?;
    record.push(Check::at_most("conditioned_vs_unconditioned", (a - b).abs(), 1e-10));
    Ok(())
}

/// Number of points in the dense inequality grids.
pub const GRID_POINTS: usize = 10_000;

fn lemma_a4(_cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0usize;
    for k in 0..GRID_POINTS {
        let u = -0.5 + k as f64 / (GRID_POINTS - 1) as f64;
        let (lhs, rhs) = elementary_inequality_check(u)?;
        worst = worst.max(lhs - rhs);
        violations += usize::from(lhs > rhs);
    }
    record.push(Check::new("max_excess", worst, 0.0, 0.0));
    record.push(Check::at_most("violations", violations as f64, 0.0));
    Ok(())
}

fn lemma_a5(_cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let side = 100;
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0usize;
    for i in 0..side {
        let s = 0.1 * 100f64.powf(i as f64 / (side - 1) as f64);
        for j in 0..side {
            let s_tilde = s * (0.5 + j as f64 / (side - 1) as f64);
            let (lhs, rhs) = bregman_cubic_check(s, s_tilde)?;
            worst = worst.max(lhs - rhs);
            violations += usize::from(lhs > rhs);
        }
    }
    record.push(Check::new("max_excess", worst, 0.0, 0.0));
    record.push(Check::at_most("violations", violations as f64, 0.0));
    Ok(())
}

/// Perturbation sizes cycled through by the randomized loss suites.
pub const EPSILON_CYCLE: [f64; 3] = [0.1, 0.25, 0.5];

fn lemma_a6(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let f = forward(cfg, record)?;
    for k in 0..cfg.samples {
        let pert = Perturbation::uniform(EPSILON_CYCLE[k % 3], hash_words(cfg.seed, &[6, k as u64]))?;
        let losses = compute_losses(&PerturbedScore::new(&f, pert)?);
        let (wrsm, l3) = (losses.wrsm.expect("masked"), losses.l3.expect("masked"));
        let mut c = Check::new(format!("sample_{k}"), wrsm, 2.0 * losses.se + 4.0 / 3.0 * l3, 0.0);
        c.l3_term = Some(l3);
        record.push(c);
        record.losses.push(losses);
    }
    Ok(())
}

fn lemma_a7(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let f = forward(cfg, record)?;
    let space = f.spec().space();
    let (exact, bound) = prior_mismatch_masked(f.spec().schedule().total(), cfg.seq_len)?;
    let numeric = tv(&f.terminal(), &Distribution::all_mask(space)?)?;
    record.push(Check::at_most("exact_vs_integrated", (exact - numeric).abs(), 1e-8));
    record.push(Check::new("exact_within_bound", exact, bound, 4.0 * f64::EPSILON * bound));
    Ok(())
}

fn coupling_checks(cfg: &ExperimentConfig, record: &mut RunRecord, with_bounds: bool) -> Result<()> {
    let f = forward(cfg, record)?;
    let spec = f.spec();
    let space = spec.space();
    let horizon = spec.schedule().horizon();
    let exact = tv(&f.terminal(), &Distribution::uniform(space))?;
    let est = synchronous_coupling(&cfg.data(space)?, spec, horizon, cfg.trials, cfg.seed)?;
    let band = 4.0 * est.std_err;
    record.push(Check::at_most("estimate_vs_oracle", (est.p_hat - est.oracle).abs(), band));
    record.push(Check::new("tv_within_estimate", exact, est.p_hat + band, 0.0));
    record.push(Check::new("tv_within_oracle", exact, est.oracle, MARGIN_TOL));
    record.push(Check::at_most("merge_violations", est.merge_violations as f64, 0.0));
    if with_bounds {
        let d = cfg.seq_len;
        let bound = prior_mismatch_uniform(spec.schedule().total(), d)?;
        let mut c = Check::new("tv_within_bound", exact, bound, MARGIN_TOL);
        c.prior_term = Some(bound);
        record.push(c);
        record.push(Check::new("oracle_within_bound", est.oracle, bound, MARGIN_TOL));
        record.push(Check::new("estimate_within_bound", est.p_hat, bound + band, 0.0));
        let closure = prior_mismatch_uniform((d as f64 / 0.01).ln(), d)?;
        record.push(Check::new("closure_at_log_d_over_eps", closure, 0.01, 1e-15));
    }
    record.coupling.push(est);
    Ok(())
}

fn thm_c1(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    coupling_checks(cfg, record, true)
}

fn lemma_c1(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    coupling_checks(cfg, record, false)
}

fn lemma_c2(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let (spec, data) = setup(cfg)?;
    let space = spec.space();
    let horizon = spec.schedule().horizon();
    let target = forward_marginal_with(&data, &spec, horizon, &cfg.integrator)?;
    let n = space.state_count();
    let mut uni = vec![0usize; n];
    let mut gil = vec![0usize; n];
    let mut no_ring = 0usize;
    let sigma = spec.schedule().total();
    for k in 0..cfg.trials as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_words(cfg.seed, &[2, k]));
        let x0 = space.index(sample_state(&data, &mut rng))?;
        uni[uniformized_path(&spec, x0, horizon, hash_words(cfg.seed, &[3, k]))?.get()] += 1;
        gil[gillespie_path(&spec, x0, horizon, hash_words(cfg.seed, &[4, k]))?.terminal.get()] += 1;
        let rings = Rings::sample(spec.schedule(), sigma, space.vocab_size(), &mut rng);
        no_ring += usize::from(rings.times.is_empty());
    }
    for (name, counts) in [("uniformized_chi_square", &uni), ("event_driven_chi_square", &gil)] {
        let t = chi_square_gof(counts, target.weights(), 0.001)?;
        record.push(Check::new(name, t.statistic, t.critical, 0.0));
    }
    let rho = (-sigma).exp();
    let trials = cfg.trials as f64;
    let freq = no_ring as f64 / trials;
    record.push(Check::at_most(
        "no_ring_frequency",
        (freq - rho).abs(),
        4.0 * (rho * (1.0 - rho) / trials).sqrt(),
    ));
    Ok(())
}

fn duality(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let f = forward(cfg, record)?;
    let score = PerturbedScore::new(&f, cfg.perturbation)?;
    let start = match cfg.start {
        StartKind::Base => Distribution::prior(f.spec()),
        StartKind::Exact => f.terminal(),
    };
    for k in 0..cfg.samples {
        let psi = random_observable(f.state_count(), hash_words(cfg.seed, &[5, k as u64]));
        let r = duality_residual(&score, &start, &psi)?;
        record.diagnostics.absorb_residual(r.relative);
        record.push(Check::at_most(format!("observable_{k}"), r.relative, 1e-6));
    }
    Ok(())
}

fn appendix_d(cfg: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    let f = forward(cfg, record)?;
    let space = f.spec().space();
    let m = space.all_mask().expect("masked space").get();
    let d = cfg.seq_len as i32;
    let grid = f.grid();
    let mut worst: f64 = 0.0;
    for j in 0..grid.node_count() {
        let alpha = -(-grid.node_sigma(j)).exp_m1();
        worst = worst.max((f.node(j)[m] - alpha.powi(d)).abs());
    }
    record.push(Check::at_most("all_mask_probability", worst, 1e-8));
    let score = PerturbedScore::exact(&f);
    let mut cancel: f64 = 0.0;
    for j in [grid.node_count() / 2, grid.node_count() - 1] {
        let p = f.node(j);
        for e in score.exact_at(j).entries() {
            let y = space.replace(e.state, e.position, e.token).get();
            cancel = cancel.max((p[e.state.get()] * e.value - p[y]).abs());
        }
    }
    record.push(Check::at_most("score_marginal_cancellation", cancel, 1e-15));
    let successors = space.successor_set(space.all_mask().expect("masked space"))?.len();
    record.push(Check::at_most("all_mask_successors", successors as f64, 0.0));
    let (exact, _) = prior_mismatch_masked(f.spec().schedule().total(), cfg.seq_len)?;
    let numeric = tv(&f.terminal(), &Distribution::all_mask(space)?)?;
    record.push(Check::at_most("boundary_tv", (exact - numeric).abs(), 1e-8));
    Ok(())
}

/// A random instance for batch checks: vocabulary and length drawn from the
/// given ranges, schedule kind and total noise varied, data drawn from the
/// flat Dirichlet.
pub fn random_instance(kind: RateKind, max_vocab: usize, max_len: usize, seed: u64) -> Result<ExperimentConfig> {
    use crate::rates::Schedule;
    let mut rng = ChaCha8Rng::seed_from_u64(split(seed, 0));
    let s = rng.random_range(2..=max_vocab.max(2));
    let d = rng.random_range(1..=max_len);
    let horizon = rng.random_range(0.5..3.0);
    let schedule = match rng.random_range(0..3) {
        0 => Schedule::constant(rng.random_range(0.3..1.5), horizon)?,
        1 => Schedule::linear(rng.random_range(0.1..1.0), rng.random_range(0.0..1.0), horizon)?,
        _ => Schedule::geometric(rng.random_range(0.2..1.0), rng.random_range(0.5..2.0), horizon)?,
    };
    let mut cfg = ExperimentConfig::new(s, d, kind);
    cfg.schedule = schedule;
    cfg.data = DataSpec::RandomSimplex { seed: split(seed, 1) };
    cfg.perturbation = Perturbation::uniform(rng.random_range(0.0..=0.5), split(seed, 2))?;
    cfg.seed = split(seed, 3);
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Every result the laboratory checks, by suite name.
    const IN_SCOPE: [&str; 16] = [
        "thm1_case1",
        "thm1_case2",
        "cor_tv",
        "cor_spec",
        "lemma_a1",
        "lemma_a2",
        "lemma_a3",
        "lemma_a4",
        "lemma_a5",
        "lemma_a6",
        "lemma_a7",
        "thm_c1",
        "duality",
        "lemma_c1",
        "lemma_c2",
        "appendix_d",
    ];

    #[test]
    fn registry_is_complete() {
        let mut names = suite_names();
        names.sort_unstable();
        let mut want = IN_SCOPE.to_vec();
        want.sort_unstable();
        assert_eq!(names, want);
    }

    #[test]
    fn unknown_suite_is_usage_error() {
        let e = find_suite("lemma_z9").err().unwrap();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let cfg = default_config("thm1_case2").unwrap();
        assert!(matches!(run_suite("thm1_case1", &cfg), Err(Error::Mode(_))));
    }

    #[test]
    fn grid_suites_pass_with_positive_margin() {
        for name in ["lemma_a4", "lemma_a5"] {
            let cfg = default_config(name).unwrap();
            let r = run_suite(name, &cfg).unwrap();
            assert!(r.passed(), "{}", r.summary());
        }
    }

    #[test]
    fn exact_uniform_start_has_zero_lhs() {
        let mut cfg = default_config("thm1_case2").unwrap();
        cfg.perturbation = Perturbation::identity();
        cfg.start = StartKind::Exact;
        let r = run_suite("thm1_case2", &cfg).unwrap();
        assert!(r.passed(), "{}", r.summary());
        assert!(r.bounds[0].lhs < 1e-8);
    }

    #[test]
    fn random_instances_respect_ranges() {
        for seed in 0..50 {
            let cfg = random_instance(RateKind::Masked, 4, 4, seed).unwrap();
            assert!((2..=4).contains(&cfg.vocab_size) && (1..=4).contains(&cfg.seq_len));
            assert!(cfg.perturbation.epsilon <= 0.5);
            cfg.validate().unwrap();
        }
    }
}
