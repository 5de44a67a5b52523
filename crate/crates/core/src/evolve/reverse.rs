use serde::Serialize;

use crate::error::{Error, Result};
use crate::rates::{RateKind, RateSpec};
use crate::score::{Perturbation, PerturbedScore};

use super::forward::clip_in_place;
use super::grid::TimeGrid;
use super::{dot, Distribution};

/// Reverse-time transitions `x -> y` with `Q(y, x) > 0`, in CSR layout.
///
/// For every edge the forward rate `Q(y, x) / beta` is the same constant
/// `unit`: `1/S` for uniform rates and `1` for masked rates.
#[derive(Debug, Clone)]
pub(crate) struct ReverseEdges {
    pub start: Vec<usize>,
    pub target: Vec<usize>,
    pub position: Vec<u32>,
    pub token: Vec<u32>,
    pub unit: f64,
}

impl ReverseEdges {
    pub fn new(spec: &RateSpec) -> Self {
        let space = spec.space();
        let n = space.state_count();
        let mut start = Vec::with_capacity(n + 1);
        let mut target = Vec::new();
        let mut position = Vec::new();
        let mut token = Vec::new();
        start.push(0);
        for x in space.states() {
            for nb in space.hamming_neighbors(x) {
                let keep = match spec.kind() {
                    RateKind::Uniform => true,
                    RateKind::Masked => {
                        let m = space.mask_token().expect("masked spec has a mask");
                        space.token(x, nb.position) == m
                    }
                };
                if keep {
                    target.push(nb.state.get());
                    position.push(nb.position as u32);
                    token.push(nb.token as u32);
                }
            }
            start.push(target.len());
        }
        let unit = match spec.kind() {
            RateKind::Uniform => 1.0 / space.vocab_size() as f64,
            RateKind::Masked => 1.0,
        };
        Self {
            start,
            target,
            position,
            token,
            unit,
        }
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn state_count(&self) -> usize {
        self.start.len() - 1
    }

    /// Perturbation multipliers of every edge for one time bucket.
    pub fn multipliers(&self, perturbation: &Perturbation, bucket: usize, out: &mut Vec<f64>) {
        out.clear();
        if perturbation.is_identity() {
            out.resize(self.len(), 1.0);
            return;
        }
        for x in 0..self.state_count() {
            for e in self.start[x]..self.start[x + 1] {
                out.push(perturbation.multiplier(bucket, x, self.position[e] as usize, self.token[e] as usize));
            }
        }
    }

    /// Reverse rates `c s(x)_y Q(y,x) / beta`; zero where `p(x) = 0`.
    pub fn rates(&self, p: &[f64], mult: &[f64], out: &mut [f64]) {
        for x in 0..self.state_count() {
            let range = self.start[x]..self.start[x + 1];
            if p[x] > 0.0 {
                let inv = self.unit / p[x];
                for e in range {
                    out[e] = mult[e] * p[self.target[e]] * inv;
                }
            } else {
                out[range].iter_mut().for_each(|r| *r = 0.0);
            }
        }
    }

    /// `out = scale * B^T v` for the generator with off-diagonal `B(x,y) = rates`.
    pub fn apply_transpose(&self, rates: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for x in 0..self.state_count() {
            let vx = scale * v[x];
            if vx == 0.0 {
                continue;
            }
            let mut exit = 0.0;
            for e in self.start[x]..self.start[x + 1] {
                let r = rates[e];
                out[self.target[e]] += vx * r;
                exit += r;
            }
            out[x] -= vx * exit;
        }
    }

    /// `out = scale * B v`.
    pub fn apply(&self, rates: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        for x in 0..self.state_count() {
            let vx = v[x];
            let mut acc = 0.0;
            for e in self.start[x]..self.start[x + 1] {
                acc += rates[e] * (v[self.target[e]] - vx);
            }
            out[x] = scale * acc;
        }
    }
}

/// Per-interval scratch: multipliers, rates at the three stage points and RK4 slopes.
struct Scratch {
    mult: Vec<f64>,
    rates: [Vec<f64>; 3],
    stage: Vec<f64>,
    k: [Vec<f64>; 4],
}

impl Scratch {
    fn new(edges: &ReverseEdges) -> Self {
        let n = edges.state_count();
        let e = edges.len();
        Self {
            mult: Vec::with_capacity(e),
            rates: [vec![0.0; e], vec![0.0; e], vec![0.0; e]],
            stage: vec![0.0; n],
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    fn load(&mut self, edges: &ReverseEdges, score: &PerturbedScore<'_>, k: usize) {
        let forward = score.forward();
        edges.multipliers(score.perturbation(), k, &mut self.mult);
        for (r, p) in self.rates.iter_mut().zip(forward.stages(k)) {
            edges.rates(p, &self.mult, r);
        }
    }
}

/// RK4 step for `dv/du = sign * w(u) A(u) v` where `A` is `B^T` (reverse)
/// or `B` (backward), stepping from stage `from` (0 or 2) to the other end.
fn rk4(edges: &ReverseEdges, sc: &mut Scratch, weights: [f64; 3], h: f64, v: &mut [f64], transpose: bool, backward: bool) {
    let order = if backward { [2, 1, 1, 0] } else { [0, 1, 1, 2] };
    let fracs = [0.0, 0.5, 0.5, 1.0];
    for s in 0..4 {
        if s == 0 {
            sc.stage.copy_from_slice(v);
        } else {
            let (prev, _) = sc.k.split_at(s);
            let kp = &prev[s - 1];
            for ((st, &vi), &ki) in sc.stage.iter_mut().zip(v.iter()).zip(kp) {
                *st = vi + fracs[s] * h * ki;
            }
        }
        let idx = order[s];
        if transpose {
            edges.apply_transpose(&sc.rates[idx], &sc.stage, weights[idx], &mut sc.k[s]);
        } else {
            edges.apply(&sc.rates[idx], &sc.stage, weights[idx], &mut sc.k[s]);
        }
    }
    for (i, vi) in v.iter_mut().enumerate() {
        *vi += h / 6.0 * (sc.k[0][i] + 2.0 * sc.k[1][i] + 2.0 * sc.k[2][i] + sc.k[3][i]);
    }
}

fn stage_weights(grid: &TimeGrid, k: usize) -> ([f64; 3], f64) {
    let iv = grid.interval(k);
    (
        [iv.weight(iv.start), iv.weight(iv.mid()), iv.weight(iv.end())],
        iv.len,
    )
}

/// Reverse-time marginals `p~_t` at every grid node.
#[derive(Debug, Clone)]
pub struct ReverseTrajectory {
    n: usize,
    nodes: Vec<f64>,
    max_clip: f64,
}

impl ReverseTrajectory {
    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.n..(j + 1) * self.n]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len() / self.n
    }

    pub fn initial(&self) -> Distribution {
        Distribution::from_clean(self.node(0).to_vec(), 0.0)
    }

    pub fn max_clip(&self) -> f64 {
        self.max_clip
    }
}

/// Integrate the approximate reverse dynamics from `start` at the horizon
/// down to time 0, keeping every node.
pub fn reverse_trajectory(start: &Distribution, score: &PerturbedScore<'_>) -> Result<ReverseTrajectory> {
    let forward = score.forward();
    let spec = forward.spec();
    start.check_space(spec.space())?;
    let grid = forward.grid();
    let terminal = forward.node(grid.intervals());
    let n = forward.state_count();
    if let Some(x) = (0..n).find(|&x| start.weights()[x] > 0.0 && terminal[x] <= 0.0) {
        return Err(Error::support(format!(
            "start distribution puts mass on state {x}, where the terminal marginal vanishes"
        )));
    }
    let edges = ReverseEdges::new(spec);
    let mut sc = Scratch::new(&edges);
    let kk = grid.intervals();
    let mut nodes = vec![0.0; (kk + 1) * n];
    let mut cur = start.weights().to_vec();
    nodes[kk * n..].copy_from_slice(&cur);
    let mut max_clip: f64 = 0.0;
    for k in (0..kk).rev() {
        if !grid.is_frozen(k) {
            sc.load(&edges, score, k);
            let (w, h) = stage_weights(grid, k);
            rk4(&edges, &mut sc, w, h, &mut cur, true, true);
            max_clip = max_clip.max(clip_in_place(&mut cur)?);
        }
        nodes[k * n..(k + 1) * n].copy_from_slice(&cur);
    }
    Ok(ReverseTrajectory { n, nodes, max_clip })
}

/// `p~_0` from the approximate reverse dynamics started at `start`.
pub fn approx_reverse(start: &Distribution, score: &PerturbedScore<'_>) -> Result<Distribution> {
    Ok(reverse_trajectory(start, score)?.initial())
}

/// Exact reverse dynamics: the unperturbed score of `score`'s trajectory.
pub fn exact_reverse(p_terminal: &Distribution, score: &PerturbedScore<'_>) -> Result<Distribution> {
    let exact = PerturbedScore::exact(score.forward());
    approx_reverse(p_terminal, &exact)
}

/// Solution `phi_t` of the backward equation at every grid node.
#[derive(Debug, Clone)]
pub struct ObservableTrajectory {
    n: usize,
    values: Vec<f64>,
}

impl ObservableTrajectory {
    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn terminal(&self) -> &[f64] {
        self.node(self.node_count() - 1)
    }

    /// `max_x |phi_t(x)|` at every node.
    pub fn sup_norms(&self) -> Vec<f64> {
        (0..self.node_count())
            .map(|j| self.node(j).iter().fold(0.0, |m: f64, v| m.max(v.abs())))
            .collect()
    }
}

/// Solve `d phi/dt = Q~_t^<- phi` with `phi_0 = psi` on the forward grid.
pub fn solve_kbe(psi: &[f64], score: &PerturbedScore<'_>) -> Result<ObservableTrajectory> {
    let forward = score.forward();
    let n = forward.state_count();
    if psi.len() != n {
        return Err(Error::domain(format!("observable has length {}, expected {n}", psi.len())));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("observable is not finite"));
    }
    let grid = forward.grid();
    let edges = ReverseEdges::new(forward.spec());
    let mut sc = Scratch::new(&edges);
    let kk = grid.intervals();
    let mut values = Vec::with_capacity((kk + 1) * n);
    let mut cur = psi.to_vec();
    values.extend_from_slice(&cur);
    for k in 0..kk {
        if !grid.is_frozen(k) {
            sc.load(&edges, score, k);
            let (w, h) = stage_weights(grid, k);
            rk4(&edges, &mut sc, w, h, &mut cur, false, false);
            if cur.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric("backward equation produced non-finite values"));
            }
        }
        values.extend_from_slice(&cur);
    }
    Ok(ObservableTrajectory { n, values })
}

/// `lambda_t = p_t - p~_t` on the shared grid.
#[derive(Debug, Clone)]
pub struct ErrorTrajectory {
    n: usize,
    values: Vec<f64>,
}

impl ErrorTrajectory {
    pub fn new(forward: &super::ForwardTrajectory, reverse: &ReverseTrajectory) -> Result<Self> {
        let n = forward.state_count();
        if reverse.n != n || reverse.node_count() != forward.grid().node_count() {
            return Err(Error::numeric("forward and reverse trajectories live on different grids"));
        }
        let mut values = Vec::with_capacity(reverse.nodes.len());
        for j in 0..reverse.node_count() {
            values.extend(forward.node(j).iter().zip(reverse.node(j)).map(|(a, b)| a - b));
        }
        Ok(Self { n, values })
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.n
    }

    /// Largest `|sum_x lambda_t(x)|` over the grid.
    pub fn max_mass_defect(&self) -> f64 {
        (0..self.node_count())
            .map(|j| self.node(j).iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityReport {
    /// `<lambda_0, psi>`
    pub initial_pairing: f64,
    /// `<lambda_T, phi_T>`
    pub terminal_pairing: f64,
    /// Time integral of the score-error source term.
    pub source_integral: f64,
    pub residual: f64,
    /// `residual / ||psi||_inf`
    pub relative: f64,
}

/// Residual of the adjoint identity linking the generation error at time 0
/// to the prior mismatch and the score error along the path.
pub fn duality_residual(score: &PerturbedScore<'_>, start: &Distribution, psi: &[f64]) -> Result<DualityReport> {
    let forward = score.forward();
    let grid = forward.grid();
    let reverse = reverse_trajectory(start, score)?;
    let phi = solve_kbe(psi, score)?;
    if phi.node_count() != grid.node_count() || reverse.node_count() != grid.node_count() {
        return Err(Error::numeric("trajectories live on different grids"));
    }
    let kk = grid.intervals();
    let lambda0: Vec<f64> = forward.initial().iter().zip(reverse.node(0)).map(|(a, b)| a - b).collect();
    let lambda_t: Vec<f64> = forward.node(kk).iter().zip(start.weights()).map(|(a, b)| a - b).collect();
    let initial_pairing = dot(&lambda0, psi);
    let terminal_pairing = dot(&lambda_t, phi.terminal());

    let edges = ReverseEdges::new(forward.spec());
    let mut sc = Scratch::new(&edges);
    let n = forward.state_count();
    let mut d_lo = vec![0.0; n];
    let mut d_hi = vec![0.0; n];
    let mut phi_mid = vec![0.0; n];
    let mut source_integral = 0.0;
    for k in 0..kk {
        if grid.is_frozen(k) {
            continue;
        }
        sc.load(&edges, score, k);
        let (w, h) = stage_weights(grid, k);
        let (lo, hi) = (phi.node(k), phi.node(k + 1));
        edges.apply(&sc.rates[0], lo, w[0], &mut d_lo);
        edges.apply(&sc.rates[2], hi, w[2], &mut d_hi);
        for i in 0..n {
            phi_mid[i] = 0.5 * (lo[i] + hi[i]) + h / 8.0 * (d_lo[i] - d_hi[i]);
        }
        let [pa, pm, pb] = forward.stages(k);
        let fa = source_density(&edges, &sc.mult, pa, lo);
        let fm = source_density(&edges, &sc.mult, pm, &phi_mid);
        let fb = source_density(&edges, &sc.mult, pb, hi);
        source_integral += h / 6.0 * (w[0] * fa + 4.0 * w[1] * fm + w[2] * fb);
    }
    let residual = (initial_pairing - terminal_pairing - source_integral).abs();
    let sup = psi.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let relative = if sup > 0.0 { residual / sup } else { residual };
    Ok(DualityReport {
        initial_pairing,
        terminal_pairing,
        source_integral,
        residual,
        relative,
    })
}

/// `sum_x sum_y p(x) (phi(y) - phi(x)) Q(y,x)/beta (s - s~)(x)_y`, using `p(x) s(x)_y = p(y)`.
fn source_density(edges: &ReverseEdges, mult: &[f64], p: &[f64], phi: &[f64]) -> f64 {
    let mut acc = 0.0;
    for x in 0..edges.state_count() {
        if p[x] <= 0.0 {
            continue;
        }
        let mut inner = 0.0;
        let span = edges.start[x]..edges.start[x + 1];
        for (&y, &c) in edges.target[span.clone()].iter().zip(&mult[span]) {
            inner += p[y] * (1.0 - c) * (phi[y] - phi[x]);
        }
        acc += edges.unit * inner;
    }
    acc
}
