//! Path-level simulation: uniformized and event-driven samplers and the
//! synchronous coupling of two uniform-rate chains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::evolve::Distribution;
use crate::rates::{RateKind, RateSpec, Schedule};
use crate::rng::hash_words;
use crate::space::{SequenceSpace, StateIndex};

/// Word reserved for the initial-state stream of a trial.
const INITIAL_STREAM: u64 = u64::MAX;

fn rng_for(seed: u64, words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash_words(seed, words))
}

fn exp1(rng: &mut ChaCha8Rng) -> f64 {
    -(1.0 - rng.random::<f64>()).ln()
}

fn check_time(spec: &RateSpec, t: f64) -> Result<f64> {
    let horizon = spec.schedule().horizon();
    if !(t.is_finite() && (0.0..=horizon).contains(&t)) {
        return Err(Error::domain(format!("time {t} outside [0, {horizon}]")));
    }
    Ok(spec.schedule().cumulative(t))
}

fn require_uniform(spec: &RateSpec) -> Result<()> {
    match spec.kind() {
        RateKind::Uniform => Ok(()),
        RateKind::Masked => Err(Error::mode("the uniformized construction is defined for uniform rates")),
    }
}

/// Rings of one coordinate's clock and the token drawn at each.
#[derive(Debug, Clone, PartialEq)]
pub struct Rings {
    pub times: Vec<f64>,
    pub resets: Vec<usize>,
}

impl Rings {
    /// Rings on `[0, t]` of a Poisson clock with intensity `beta`, obtained by
    /// mapping unit-rate arrivals through the inverse cumulative schedule.
    pub fn sample(schedule: &Schedule, sigma_end: f64, vocab_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut times = Vec::new();
        let mut resets = Vec::new();
        let mut sigma = exp1(rng);
        while sigma <= sigma_end {
            times.push(schedule.inverse_cumulative(sigma).expect("sigma within the accumulated total"));
            resets.push(rng.random_range(0..vocab_size));
            sigma += exp1(rng);
        }
        Self { times, resets }
    }

    /// Token after running the clock from `start`.
    pub fn apply(&self, start: usize) -> usize {
        self.resets.last().copied().unwrap_or(start)
    }
}

/// Terminal state of the uniformized chain: every ring resets the token to a
/// fresh uniform sample.
pub fn uniformized_path(spec: &RateSpec, x0: StateIndex, t: f64, seed: u64) -> Result<StateIndex> {
    require_uniform(spec)?;
    let sigma_end = check_time(spec, t)?;
    let space = spec.space();
    let mut x = x0;
    for i in 0..space.seq_len() {
        let mut rng = rng_for(seed, &[i as u64]);
        let rings = Rings::sample(spec.schedule(), sigma_end, space.vocab_size(), &mut rng);
        x = space.replace(x, i, rings.apply(space.token(x0, i)));
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PathOutcome {
    pub terminal: StateIndex,
    pub events: usize,
}

/// Exact event-driven simulation with competing per-position clocks.
pub fn gillespie_path(spec: &RateSpec, x0: StateIndex, t: f64, seed: u64) -> Result<PathOutcome> {
    let sigma_end = check_time(spec, t)?;
    let space = spec.space();
    let s = space.vocab_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0;
    let mut sigma = 0.0;
    let mut events = 0;
    loop {
        let (movable, per_site) = exit_profile(spec, space, x);
        let rate = movable.len() as f64 * per_site;
        if rate <= 0.0 {
            break;
        }
        sigma += exp1(&mut rng) / rate;
        if sigma > sigma_end {
            break;
        }
        let i = movable[rng.random_range(0..movable.len())];
        let v = space.token(x, i);
        let w = match spec.kind() {
            RateKind::Masked => space.mask_token().expect("masked spec has a mask"),
            RateKind::Uniform => {
                let w = rng.random_range(0..s - 1);
                if w >= v {
                    w + 1
                } else {
                    w
                }
            }
        };
        x = space.replace(x, i, w);
        events += 1;
    }
    Ok(PathOutcome { terminal: x, events })
}

/// Positions able to jump and their common exit rate per unit of noise.
fn exit_profile(spec: &RateSpec, space: &SequenceSpace, x: StateIndex) -> (Vec<usize>, f64) {
    match spec.kind() {
        RateKind::Uniform => {
            let s = space.vocab_size() as f64;
            ((0..space.seq_len()).collect(), (s - 1.0) / s)
        }
        RateKind::Masked => {
            let m = space.mask_token().expect("masked spec has a mask");
            ((0..space.seq_len()).filter(|&i| space.token(x, i) != m).collect(), 1.0)
        }
    }
}

/// Inverse-CDF draw from an enumerated law.
pub fn sample_state(p: &Distribution, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (x, &w) in p.weights().iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = x;
            if u < acc {
                return x;
            }
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingEstimate {
    pub trials: usize,
    pub disagreements: usize,
    pub p_hat: f64,
    pub std_err: f64,
    /// Exact disagreement probability by enumeration.
    pub oracle: f64,
    /// Coordinates whose clock rang but whose chains still differ; always zero
    /// for a correct construction.
    pub merge_violations: usize,
    /// `exp(-int beta)`
    pub rho: f64,
}

/// `X_0 ~ p_data` and `Y_0 ~ pi^d` run on shared clocks and reset samples;
/// estimates `P(X_t != Y_t)`.
pub fn synchronous_coupling(
    data: &Distribution,
    spec: &RateSpec,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<CouplingEstimate> {
    require_uniform(spec)?;
    if trials == 0 {
        return Err(Error::domain("the coupling needs at least one trial"));
    }
    let sigma_end = check_time(spec, t)?;
    let space = spec.space();
    data.check_space(space)?;
    let (s, d) = (space.vocab_size(), space.seq_len());
    let (disagreements, merge_violations) = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let trial = trial as u64;
            let mut init = rng_for(seed, &[trial, INITIAL_STREAM]);
            let x0 = space.index(sample_state(data, &mut init)).expect("sampled index");
            let mut differs = false;
            let mut violations = 0usize;
            for i in 0..d {
                let y0 = init.random_range(0..s);
                let mut rng = rng_for(seed, &[trial, i as u64]);
                let rings = Rings::sample(spec.schedule(), sigma_end, s, &mut rng);
                let xt = rings.apply(space.token(x0, i));
                let yt = rings.apply(y0);
                if xt != yt {
                    differs = true;
                    if !rings.times.is_empty() {
                        violations += 1;
                    }
                }
            }
            (usize::from(differs), violations)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let p_hat = disagreements as f64 / trials as f64;
    Ok(CouplingEstimate {
        trials,
        disagreements,
        p_hat,
        std_err: (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
        oracle: disagreement_oracle(data, spec, t)?,
        merge_violations,
        rho: (-sigma_end).exp(),
    })
}

/// `1 - E[prod_i ((1 - rho) + rho 1[X_0^i = Y_0^i])]` over `X_0 ~ p_data`,
/// `Y_0 ~ pi^d`, by enumerating both starts.
pub fn disagreement_oracle(data: &Distribution, spec: &RateSpec, t: f64) -> Result<f64> {
    require_uniform(spec)?;
    let rho = (-check_time(spec, t)?).exp();
    let space = spec.space();
    data.check_space(space)?;
    let py = 1.0 / space.state_count() as f64;
    let mut agree = 0.0;
    for x in space.states() {
        let px = data.weights()[x.get()];
        if px == 0.0 {
            continue;
        }
        let inner: f64 = space
            .states()
            .map(|y| {
                (0..space.seq_len())
                    .map(|i| if space.token(x, i) == space.token(y, i) { 1.0 } else { 1.0 - rho })
                    .product::<f64>()
            })
            .sum();
        agree += px * py * inner;
    }
    Ok(1.0 - agree)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub critical: f64,
}

impl ChiSquareTest {
    pub fn passes(&self) -> bool {
        self.statistic <= self.critical
    }
}

/// Pearson goodness of fit at level `alpha`; cells with expected count
/// below 5 are pooled into one.
pub fn chi_square_gof(counts: &[usize], probs: &[f64], alpha: f64) -> Result<ChiSquareTest> {
    if counts.len() != probs.len() {
        return Err(Error::domain("counts and probabilities differ in length"));
    }
    let n: usize = counts.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * n as f64;
        if e < 5.0 {
            pooled_obs += c as f64;
            pooled_exp += e;
        } else {
            cells.push((c as f64, e));
        }
    }
    if pooled_exp > 0.0 || pooled_obs > 0.0 {
        cells.push((pooled_obs, pooled_exp));
    }
    if cells.len() < 2 {
        return Err(Error::domain("too few cells for a goodness-of-fit test"));
    }
    let mut statistic = 0.0;
    for &(o, e) in &cells {
        if e <= 0.0 {
            if o > 0.0 {
                statistic = f64::INFINITY;
            }
            continue;
        }
        statistic += (o - e) * (o - e) / e;
    }
    let dof = cells.len() - 1;
    let chi = ChiSquared::new(dof as f64).map_err(|e| Error::numeric(e.to_string()))?;
    Ok(ChiSquareTest {
        statistic,
        dof,
        critical: chi.inverse_cdf(1.0 - alpha),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::{closed_form_kernel, forward_marginal};

    fn uniform_spec(s: usize, d: usize, schedule: Schedule) -> RateSpec {
        RateSpec::new(RateKind::Uniform, schedule, SequenceSpace::new(s, d).unwrap()).unwrap()
    }

    #[test]
    fn no_noise_means_no_motion() {
        let spec = uniform_spec(3, 2, Schedule::constant(0.0, 1.0).unwrap());
        let x0 = spec.space().encode(&[2, 1]).unwrap();
        for seed in 0..50 {
            assert_eq!(uniformized_path(&spec, x0, 1.0, seed).unwrap(), x0);
            assert_eq!(gillespie_path(&spec, x0, 1.0, seed).unwrap().events, 0);
        }
    }

    #[test]
    fn ring_times_are_ordered_within_horizon() {
        let sched = Schedule::linear(0.5, 2.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = Rings::sample(&sched, sched.total(), 4, &mut rng);
        assert!(r.times.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.times.iter().all(|&t| (0.0..=2.0).contains(&t)));
        assert_eq!(r.times.len(), r.resets.len());
    }

    #[test]
    fn uniformized_matches_kernel() {
        let spec = uniform_spec(3, 1, Schedule::geometric(0.4, 1.5, 1.2).unwrap());
        let t = 1.2;
        let k = closed_form_kernel(&spec, t).unwrap();
        let x0 = spec.space().encode(&[1]).unwrap();
        let n = 100_000;
        let mut counts = [0usize; 3];
        let mut no_ring = 0usize;
        let sigma = spec.schedule().total();
        for p in 0..n {
            counts[uniformized_path(&spec, x0, t, p as u64).unwrap().get()] += 1;
            let mut rng = rng_for(p as u64, &[0]);
            no_ring += usize::from(Rings::sample(spec.schedule(), sigma, 3, &mut rng).times.is_empty());
        }
        let probs: Vec<f64> = (0..3).map(|w| k[(1, w)]).collect();
        let test = chi_square_gof(&counts, &probs, 0.001).unwrap();
        assert!(test.passes(), "{test:?}");
        let rho = (-sigma).exp();
        let freq = no_ring as f64 / n as f64;
        assert!((freq - rho).abs() <= 4.0 * (rho * (1.0 - rho) / n as f64).sqrt());
    }

    #[test]
    fn gillespie_matches_forward_marginal() {
        for kind in [RateKind::Uniform, RateKind::Masked] {
            let space = match kind {
                RateKind::Uniform => SequenceSpace::new(3, 2).unwrap(),
                RateKind::Masked => SequenceSpace::masked(3, 2).unwrap(),
            };
            let spec = RateSpec::new(kind, Schedule::linear(0.3, 1.0, 1.0).unwrap(), space.clone()).unwrap();
            let x0 = space.encode(&[0, 1]).unwrap();
            let p = forward_marginal(&Distribution::point_mass(&space, x0), &spec, 1.0).unwrap();
            let mut counts = vec![0usize; space.state_count()];
            for path in 0..100_000u64 {
                let out = gillespie_path(&spec, x0, 1.0, crate::rng::split(11, path)).unwrap();
                if kind == RateKind::Masked {
                    for (i, &orig) in [0usize, 1].iter().enumerate() {
                        let v = space.token(out.terminal, i);
                        assert!(v == orig || v == 2);
                    }
                }
                counts[out.terminal.get()] += 1;
            }
            let test = chi_square_gof(&counts, p.weights(), 0.001).unwrap();
            assert!(test.passes(), "{kind}: {test:?}");
        }
    }

    #[test]
    fn oracle_has_product_form() {
        let spec = uniform_spec(3, 3, Schedule::constant(1.0, 0.7).unwrap());
        let data = Distribution::random_simplex(spec.space(), 4, false);
        let rho = (-0.7f64).exp();
        let want = 1.0 - ((1.0 - rho) + rho / 3.0).powi(3);
        assert!((disagreement_oracle(&data, &spec, 0.7).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn coupling_is_deterministic_and_merges() {
        let spec = uniform_spec(2, 3, Schedule::constant(1.0, 0.8).unwrap());
        let data = Distribution::random_simplex(spec.space(), 1, false);
        let a = synchronous_coupling(&data, &spec, 0.8, 20_000, 5).unwrap();
        let b = synchronous_coupling(&data, &spec, 0.8, 20_000, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.merge_violations, 0);
        assert!((a.p_hat - a.oracle).abs() <= 4.0 * a.std_err);
        assert!(synchronous_coupling(&data, &spec, 0.8, 0, 5).is_err());
        let masked = RateSpec::new(RateKind::Masked, Schedule::constant(1.0, 1.0).unwrap(), SequenceSpace::masked(2, 1).unwrap()).unwrap();
        assert!(matches!(synchronous_coupling(&Distribution::uniform(masked.space()), &masked, 1.0, 1, 0), Err(Error::Mode(_))));
    }

    #[test]
    fn chi_square_rejects_wrong_law() {
        let t = chi_square_gof(&[600, 400], &[0.5, 0.5], 0.001).unwrap();
        assert!(!t.passes());
        assert!(chi_square_gof(&[510, 490], &[0.5, 0.5], 0.001).unwrap().passes());
    }
}
