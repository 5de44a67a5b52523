use crate::error::{Error, Result};
use crate::rates::RateSpec;

use super::grid::{IntegratorConfig, Interval, TimeGrid};
use super::{sanitize, Distribution, CLIP_SLACK};

/// Forward marginals `p_t` stored at every grid node and interval midpoint.
#[derive(Debug, Clone)]
pub struct ForwardTrajectory {
    spec: RateSpec,
    grid: TimeGrid,
    config: IntegratorConfig,
    n: usize,
    nodes: Vec<f64>,
    halves: Vec<f64>,
    max_clip: f64,
    richardson_gap: f64,
}

impl ForwardTrajectory {
    /// Integrates `dp/dt = Q_t^T p` from `p0` over the whole horizon.
    pub fn new(p0: &Distribution, spec: &RateSpec, config: &IntegratorConfig) -> Result<Self> {
        p0.check_space(spec.space())?;
        let grid = TimeGrid::new(spec.schedule().total(), config)?;
        let n = p0.len();
        let k = grid.intervals();
        let mut nodes = Vec::with_capacity((k + 1) * n);
        let mut halves = Vec::with_capacity(k * n);
        nodes.extend_from_slice(p0.weights());
        let mut cur = p0.weights().to_vec();
        let mut ws = Workspace::new(n);
        let mut max_clip: f64 = 0.0;
        for j in 0..k {
            let iv = grid.interval(j);
            let half = Interval { len: 0.5 * iv.len, ..iv };
            rk4_step(spec, &half, &mut cur, &mut ws);
            max_clip = max_clip.max(clip_in_place(&mut cur)?);
            halves.extend_from_slice(&cur);
            let second = Interval {
                start: iv.mid(),
                len: iv.end() - iv.mid(),
                ..iv
            };
            rk4_step(spec, &second, &mut cur, &mut ws);
            max_clip = max_clip.max(clip_in_place(&mut cur)?);
            nodes.extend_from_slice(&cur);
        }
        let refined = integrate_terminal(p0.weights(), spec, &config.refined())?;
        let richardson_gap = max_abs_diff(&cur, &refined);
        if richardson_gap > config.richardson_tol {
            return Err(Error::numeric(format!(
                "forward integration did not converge: step-doubling changed the terminal marginal by {richardson_gap:e}"
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            grid,
            config: *config,
            n,
            nodes,
            halves,
            max_clip,
            richardson_gap,
        })
    }

    pub fn spec(&self) -> &RateSpec {
        &self.spec
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.config
    }

    pub fn state_count(&self) -> usize {
        self.n
    }

    /// Marginal at grid node `j`.
    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.n..(j + 1) * self.n]
    }

    /// Marginal at the midpoint of interval `k` in its own clock.
    pub fn half(&self, k: usize) -> &[f64] {
        &self.halves[k * self.n..(k + 1) * self.n]
    }

    pub fn initial(&self) -> &[f64] {
        self.node(0)
    }

    pub fn terminal(&self) -> Distribution {
        let w = self.node(self.grid.intervals()).to_vec();
        Distribution::from_clean(w, self.spec.schedule().horizon())
    }

    /// Original time of node `j`.
    pub fn node_time(&self, j: usize) -> f64 {
        if j == self.grid.intervals() {
            return self.spec.schedule().horizon();
        }
        self.spec
            .schedule()
            .inverse_cumulative(self.grid.node_sigma(j))
            .unwrap_or(0.0)
    }

    pub fn max_clip(&self) -> f64 {
        self.max_clip
    }

    /// Max-abs change of the terminal marginal under step doubling.
    pub fn richardson_gap(&self) -> f64 {
        self.richardson_gap
    }

    /// Stage marginals of interval `k`: start, midpoint, end.
    pub(crate) fn stages(&self, k: usize) -> [&[f64]; 3] {
        [self.node(k), self.half(k), self.node(k + 1)]
    }

    /// Simpson quadrature of `int f(p_sigma) d sigma` over the grid.
    ///
    /// `f` receives the interval index, which doubles as the perturbation
    /// bucket, and the marginal at a stage point. Frozen intervals are
    /// skipped unless `include_frozen` is set.
    pub fn integrate<F>(&self, include_frozen: bool, mut f: F) -> f64
    where
        F: FnMut(usize, &[f64]) -> f64,
    {
        let mut total = 0.0;
        for k in 0..self.grid.intervals() {
            if self.grid.is_frozen(k) && !include_frozen {
                continue;
            }
            let iv = self.grid.interval(k);
            let [a, m, b] = self.stages(k);
            let fa = iv.weight(iv.start) * f(k, a);
            let fm = iv.weight(iv.mid()) * f(k, m);
            let fb = iv.weight(iv.end()) * f(k, b);
            total += iv.len / 6.0 * (fa + 4.0 * fm + fb);
        }
        total
    }
}

/// `p_t` at a single time, with the step-doubling check.
pub fn forward_marginal(p0: &Distribution, spec: &RateSpec, t: f64) -> Result<Distribution> {
    forward_marginal_with(p0, spec, t, &IntegratorConfig::default())
}

pub fn forward_marginal_with(
    p0: &Distribution,
    spec: &RateSpec,
    t: f64,
    config: &IntegratorConfig,
) -> Result<Distribution> {
    p0.check_space(spec.space())?;
    let horizon = spec.schedule().horizon();
    if !(t.is_finite() && (0.0..=horizon).contains(&t)) {
        return Err(Error::domain(format!("time {t} outside [0, {horizon}]")));
    }
    let sigma = spec.schedule().cumulative(t);
    let coarse = integrate_to(p0.weights(), spec, sigma, config)?;
    let fine = integrate_to(p0.weights(), spec, sigma, &config.refined())?;
    let gap = max_abs_diff(&coarse, &fine);
    if gap > config.richardson_tol {
        return Err(Error::numeric(format!(
            "forward integration did not converge: step-doubling changed the marginal by {gap:e}"
        )));
    }
    let (w, _) = sanitize(coarse)?;
    Ok(Distribution::from_clean(w, t))
}

fn integrate_terminal(p0: &[f64], spec: &RateSpec, config: &IntegratorConfig) -> Result<Vec<f64>> {
    integrate_to(p0, spec, spec.schedule().total(), config)
}

fn integrate_to(p0: &[f64], spec: &RateSpec, sigma: f64, config: &IntegratorConfig) -> Result<Vec<f64>> {
    let grid = TimeGrid::new(sigma, config)?;
    let mut cur = p0.to_vec();
    let mut ws = Workspace::new(cur.len());
    for j in 0..grid.intervals() {
        let iv = grid.interval(j);
        let first = Interval { len: 0.5 * iv.len, ..iv };
        let second = Interval {
            start: iv.mid(),
            len: iv.end() - iv.mid(),
            ..iv
        };
        rk4_step(spec, &first, &mut cur, &mut ws);
        rk4_step(spec, &second, &mut cur, &mut ws);
        clip_in_place(&mut cur)?;
    }
    Ok(cur)
}

struct Workspace {
    stage: Vec<f64>,
    k: [Vec<f64>; 4],
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            stage: vec![0.0; n],
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }
}

/// One classical RK4 step of `dp/du = w(u) L^T p` across `iv`.
fn rk4_step(spec: &RateSpec, iv: &Interval, p: &mut [f64], ws: &mut Workspace) {
    let h = iv.len;
    let times = [iv.start, iv.start + 0.5 * h, iv.start + 0.5 * h, iv.start + h];
    let fracs = [0.0, 0.5, 0.5, 1.0];
    for s in 0..4 {
        if s == 0 {
            ws.stage.copy_from_slice(p);
        } else {
            let (prev, _) = ws.k.split_at(s);
            let kp = &prev[s - 1];
            for ((st, &pi), &ki) in ws.stage.iter_mut().zip(p.iter()).zip(kp) {
                *st = pi + fracs[s] * h * ki;
            }
        }
        let w = iv.weight(times[s]);
        spec.apply_unit(&ws.stage, &mut ws.k[s], true);
        ws.k[s].iter_mut().for_each(|v| *v *= w);
    }
    for (i, pi) in p.iter_mut().enumerate() {
        *pi += h / 6.0 * (ws.k[0][i] + 2.0 * ws.k[1][i] + 2.0 * ws.k[2][i] + ws.k[3][i]);
    }
}

/// Zero out negatives within the slack; returns the largest clipped value.
pub(crate) fn clip_in_place(v: &mut [f64]) -> Result<f64> {
    let mut clip: f64 = 0.0;
    for x in v.iter_mut() {
        if !x.is_finite() {
            return Err(Error::numeric("non-finite value during integration"));
        }
        if *x < 0.0 {
            if *x < -CLIP_SLACK {
                return Err(Error::numeric(format!("integration produced weight {x:e}")));
            }
            clip = clip.max(-*x);
            *x = 0.0;
        }
    }
    if clip > 0.0 {
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= total);
    }
    Ok(clip)
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
