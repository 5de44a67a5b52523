//! Exact integral probability metrics between enumerated distributions.

pub mod transport;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{apply_token_kernel, Distribution};
use crate::space::SequenceSpace;

use transport::{integerize, MinCostFlow, UNBOUNDED};

/// Default largest state count for exact transport.
pub const DEFAULT_TRANSPORT_CAP: usize = 4096;
/// Largest state count for which the dense Gram matrix is diagonalized.
pub const DENSE_PSD_CHECK_LIMIT: usize = 256;
const MASS_SCALE: i64 = 1 << 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelDescriptor {
    /// `K(x, y) = 1[x = y]`
    Delta,
    /// `K(x, y) = exp(-Ham(x, y) / bandwidth)`
    HammingExponential { bandwidth: f64 },
}

impl Default for KernelDescriptor {
    fn default() -> Self {
        KernelDescriptor::HammingExponential { bandwidth: 1.0 }
    }
}

impl KernelDescriptor {
    /// Per-position factor: the full kernel is its `d`-fold tensor power.
    pub fn token_kernel(&self, vocab_size: usize) -> Result<DMatrix<f64>> {
        match *self {
            KernelDescriptor::Delta => Ok(DMatrix::identity(vocab_size, vocab_size)),
            KernelDescriptor::HammingExponential { bandwidth } => {
                if !(bandwidth.is_finite() && bandwidth > 0.0) {
                    return Err(Error::Kernel(format!("bandwidth {bandwidth} must be positive")));
                }
                let off = (-1.0 / bandwidth).exp();
                Ok(DMatrix::from_fn(vocab_size, vocab_size, |a, b| if a == b { 1.0 } else { off }))
            }
        }
    }

    /// `sup_x K(x, x)`.
    pub fn diagonal_sup(&self) -> f64 {
        1.0
    }

    pub fn evaluate(&self, space: &SequenceSpace, x: usize, y: usize) -> f64 {
        let (x, y) = (space.index(x).expect("valid"), space.index(y).expect("valid"));
        match *self {
            KernelDescriptor::Delta => f64::from(u8::from(x == y)),
            KernelDescriptor::HammingExponential { bandwidth } => (-(space.hamming(x, y) as f64) / bandwidth).exp(),
        }
    }

    /// Dense Gram matrix; only for small spaces.
    pub fn gram(&self, space: &SequenceSpace) -> DMatrix<f64> {
        let n = space.state_count();
        DMatrix::from_fn(n, n, |i, j| self.evaluate(space, i, j))
    }

    /// Positive semidefiniteness with eigenvalue floor `-1e-10`: the dense
    /// Gram matrix on small spaces, the per-position factor otherwise.
    pub fn check_psd(&self, space: &SequenceSpace) -> Result<()> {
        let factor = self.token_kernel(space.vocab_size())?;
        let min_eig = if space.state_count() <= DENSE_PSD_CHECK_LIMIT {
            SymmetricEigen::new(self.gram(space)).eigenvalues.min()
        } else {
            SymmetricEigen::new(factor).eigenvalues.min()
        };
        if min_eig < -1e-10 {
            return Err(Error::Kernel(format!("kernel has eigenvalue {min_eig:e}")));
        }
        Ok(())
    }
}

/// An integral probability metric and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IpmSpec {
    Tv,
    PerPositionTv { position: usize },
    KgramTv { positions: Vec<usize> },
    W1Hamming,
    Mmd {
        #[serde(default)]
        kernel: KernelDescriptor,
    },
    /// Constant only; the metric itself is not computed.
    BoundedLipschitz,
    /// Constant only; the metric itself is not computed.
    W1Embedded { diameter: f64 },
}

impl IpmSpec {
    pub fn name(&self) -> String {
        match self {
            IpmSpec::Tv => "tv".into(),
            IpmSpec::PerPositionTv { position } => format!("per_position_tv[{position}]"),
            IpmSpec::KgramTv { positions } => format!(
                "kgram_tv[{}]",
                positions.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")
            ),
            IpmSpec::W1Hamming => "w1_hamming".into(),
            IpmSpec::Mmd {
                kernel: KernelDescriptor::Delta,
            } => "mmd_delta".into(),
            IpmSpec::Mmd {
                kernel: KernelDescriptor::HammingExponential { bandwidth },
            } => format!("mmd_hamming[{bandwidth}]"),
            IpmSpec::BoundedLipschitz => "bounded_lipschitz".into(),
            IpmSpec::W1Embedded { .. } => "w1_embedded".into(),
        }
    }

    /// The standard metrics checked by default.
    pub fn standard_set(seq_len: usize) -> Vec<IpmSpec> {
        let mut v = vec![IpmSpec::Tv, IpmSpec::PerPositionTv { position: 0 }];
        if seq_len >= 2 {
            v.push(IpmSpec::KgramTv { positions: vec![0, 1] });
        }
        v.extend([
            IpmSpec::W1Hamming,
            IpmSpec::Mmd {
                kernel: KernelDescriptor::Delta,
            },
            IpmSpec::Mmd {
                kernel: KernelDescriptor::default(),
            },
        ]);
        v
    }
}

/// The constant `C_Psi` with `sup_{psi in Psi} ||psi - c||_inf <= C_Psi` that
/// scales the generic bound for this metric.
pub fn c_psi(ipm: &IpmSpec, seq_len: usize) -> Result<f64> {
    match ipm {
        IpmSpec::Tv | IpmSpec::PerPositionTv { .. } | IpmSpec::KgramTv { .. } => Ok(0.5),
        IpmSpec::BoundedLipschitz => Ok(1.0),
        IpmSpec::W1Hamming => Ok(seq_len as f64 / 2.0),
        IpmSpec::W1Embedded { diameter } => {
            if diameter.is_finite() && *diameter >= 0.0 {
                Ok(diameter / 2.0)
            } else {
                Err(Error::domain("embedding diameter must be finite and nonnegative"))
            }
        }
        IpmSpec::Mmd { kernel } => Ok(kernel.diagonal_sup().sqrt()),
    }
}

/// Evaluates the metric between two distributions on `space`.
pub fn evaluate(ipm: &IpmSpec, space: &SequenceSpace, p: &Distribution, q: &Distribution) -> Result<f64> {
    match ipm {
        IpmSpec::Tv => tv(p, q),
        IpmSpec::PerPositionTv { position } => per_position_tv(space, p, q, *position),
        IpmSpec::KgramTv { positions } => kgram_tv(space, p, q, positions),
        IpmSpec::W1Hamming => w1_hamming(space, p, q),
        IpmSpec::Mmd { kernel } => mmd(space, p, q, kernel),
        IpmSpec::BoundedLipschitz | IpmSpec::W1Embedded { .. } => Err(Error::domain(format!(
            "{} is listed for its constant only and is not computed",
            ipm.name()
        ))),
    }
}

fn same_len(p: &Distribution, q: &Distribution) -> Result<()> {
    if p.len() == q.len() {
        Ok(())
    } else {
        Err(Error::domain(format!("distributions have {} and {} states", p.len(), q.len())))
    }
}

/// `(1/2) sum |p - q|`.
pub fn tv(p: &Distribution, q: &Distribution) -> Result<f64> {
    same_len(p, q)?;
    Ok(tv_slices(p.weights(), q.weights()))
}

pub(crate) fn tv_slices(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Joint law of the tokens at `positions`, indexed mixed-radix in the given order.
pub fn marginal(space: &SequenceSpace, p: &Distribution, positions: &[usize]) -> Result<Vec<f64>> {
    p.check_space(space)?;
    for (k, &i) in positions.iter().enumerate() {
        if i >= space.seq_len() {
            return Err(Error::domain(format!("position {i} outside [0, {})", space.seq_len())));
        }
        if positions[..k].contains(&i) {
            return Err(Error::domain(format!("position {i} listed twice")));
        }
    }
    let s = space.vocab_size();
    let size = s.pow(positions.len() as u32);
    let mut out = vec![0.0; size];
    for x in space.states() {
        let mut idx = 0;
        let mut stride = 1;
        for &i in positions {
            idx += space.token(x, i) * stride;
            stride *= s;
        }
        out[idx] += p.weights()[x.get()];
    }
    Ok(out)
}

pub fn per_position_tv(space: &SequenceSpace, p: &Distribution, q: &Distribution, position: usize) -> Result<f64> {
    kgram_tv(space, p, q, &[position])
}

/// TV between the joint laws of a block of positions.
pub fn kgram_tv(space: &SequenceSpace, p: &Distribution, q: &Distribution, positions: &[usize]) -> Result<f64> {
    same_len(p, q)?;
    if positions.is_empty() {
        return Err(Error::domain("a block needs at least one position"));
    }
    Ok(tv_slices(&marginal(space, p, positions)?, &marginal(space, q, positions)?))
}

/// Wasserstein-1 under the Hamming metric.
pub fn w1_hamming(space: &SequenceSpace, p: &Distribution, q: &Distribution) -> Result<f64> {
    w1_hamming_with_cap(space, p, q, DEFAULT_TRANSPORT_CAP)
}

/// Hamming distance is the shortest-path metric of the Hamming graph, so the
/// optimal plan is a min-cost transshipment along unit-cost neighbour arcs.
pub fn w1_hamming_with_cap(space: &SequenceSpace, p: &Distribution, q: &Distribution, cap: usize) -> Result<f64> {
    same_len(p, q)?;
    p.check_space(space)?;
    let n = space.state_count();
    if n > cap {
        return Err(Error::Capacity(format!("{n} states exceed the transport cap {cap}")));
    }
    let a = integerize(p.weights(), MASS_SCALE);
    let b = integerize(q.weights(), MASS_SCALE);
    if a == b {
        return Ok(0.0);
    }
    let (source, sink) = (n, n + 1);
    let mut g = MinCostFlow::new(n + 2);
    let mut demand = 0i64;
    for x in 0..n {
        let excess = a[x] - b[x];
        if excess > 0 {
            g.add_arc(source, x, excess, 0);
            demand += excess;
        } else if excess < 0 {
            g.add_arc(x, sink, -excess, 0);
        }
    }
    for x in space.states() {
        for nb in space.hamming_neighbors(x) {
            g.add_arc(x.get(), nb.state.get(), UNBOUNDED, 1);
        }
    }
    let (flow, cost) = g.solve(source, sink, demand);
    if flow != demand {
        return Err(Error::numeric("transport problem left mass unmatched"));
    }
    Ok(cost as f64 / MASS_SCALE as f64)
}

/// `sqrt((p - q)^T K (p - q))`, with `K` applied as a tensor product.
pub fn mmd(space: &SequenceSpace, p: &Distribution, q: &Distribution, kernel: &KernelDescriptor) -> Result<f64> {
    same_len(p, q)?;
    p.check_space(space)?;
    kernel.check_psd(space)?;
    let diff: Vec<f64> = p.weights().iter().zip(q.weights()).map(|(a, b)| a - b).collect();
    let factor = kernel.token_kernel(space.vocab_size())?;
    let kd = apply_token_kernel(space, &factor, &diff)?;
    let sq: f64 = diff.iter().zip(&kd).map(|(a, b)| a * b).sum();
    Ok(sq.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space() -> SequenceSpace {
        SequenceSpace::new(3, 2).unwrap()
    }

    #[test]
    fn tv_examples() {
        let s = space();
        let p = Distribution::random_simplex(&s, 1, false);
        assert_eq!(tv(&p, &p).unwrap(), 0.0);
        let a = Distribution::point_mass(&s, s.encode(&[0, 0]).unwrap());
        let b = Distribution::point_mass(&s, s.encode(&[1, 0]).unwrap());
        assert_eq!(tv(&a, &b).unwrap(), 1.0);
        assert!(tv(&a, &Distribution::uniform(&SequenceSpace::new(2, 2).unwrap())).is_err());
    }

    #[test]
    fn w1_examples() {
        let s = space();
        let x = s.encode(&[0, 0]).unwrap();
        let p = Distribution::point_mass(&s, x);
        assert_eq!(w1_hamming(&s, &p, &p).unwrap(), 0.0);
        let mut q = vec![0.0; 9];
        q[s.encode(&[0, 1]).unwrap().get()] = 0.5;
        q[s.encode(&[1, 1]).unwrap().get()] = 0.5;
        let q = Distribution::new(q, 0.0).unwrap();
        assert!((w1_hamming(&s, &p, &q).unwrap() - 1.5).abs() < 1e-12);
        for y in s.states() {
            let d = w1_hamming(&s, &p, &Distribution::point_mass(&s, y)).unwrap();
            assert!((d - s.hamming(x, y) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn w1_cap() {
        let s = SequenceSpace::new(2, 4).unwrap();
        let p = Distribution::uniform(&s);
        assert!(matches!(w1_hamming_with_cap(&s, &p, &p, 8), Err(Error::Capacity(_))));
    }

    #[test]
    fn delta_mmd_is_euclidean() {
        let s = space();
        let p = Distribution::random_simplex(&s, 2, false);
        let q = Distribution::random_simplex(&s, 3, false);
        let l2 = p.weights().iter().zip(q.weights()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let m = mmd(&s, &p, &q, &KernelDescriptor::Delta).unwrap();
        assert!((m - l2).abs() < 1e-14);
        assert_eq!(mmd(&s, &p, &p, &KernelDescriptor::default()).unwrap(), 0.0);
    }

    #[test]
    fn tensor_mmd_matches_dense_gram() {
        let s = SequenceSpace::new(3, 3).unwrap();
        let k = KernelDescriptor::HammingExponential { bandwidth: 0.7 };
        let p = Distribution::random_simplex(&s, 4, false);
        let q = Distribution::random_simplex(&s, 5, false);
        let d = nalgebra::DVector::from_iterator(27, p.weights().iter().zip(q.weights()).map(|(a, b)| a - b));
        let dense = (d.transpose() * k.gram(&s) * &d)[(0, 0)].sqrt();
        assert!((mmd(&s, &p, &q, &k).unwrap() - dense).abs() < 1e-13);
    }

    #[test]
    fn kernel_validation() {
        let s = space();
        assert!(KernelDescriptor::default().check_psd(&s).is_ok());
        assert!(KernelDescriptor::Delta.check_psd(&s).is_ok());
        let bad = KernelDescriptor::HammingExponential { bandwidth: 0.0 };
        assert!(matches!(bad.check_psd(&s), Err(Error::Kernel(_))));
    }

    #[test]
    fn constants() {
        assert_eq!(c_psi(&IpmSpec::Tv, 3).unwrap(), 0.5);
        assert_eq!(c_psi(&IpmSpec::W1Hamming, 4).unwrap(), 2.0);
        assert_eq!(c_psi(&IpmSpec::Mmd { kernel: KernelDescriptor::default() }, 4).unwrap(), 1.0);
        assert_eq!(c_psi(&IpmSpec::BoundedLipschitz, 4).unwrap(), 1.0);
        let s = space();
        let p = Distribution::uniform(&s);
        assert!(evaluate(&IpmSpec::BoundedLipschitz, &s, &p, &p).is_err());
    }

    #[test]
    fn marginal_two_ways() {
        let s = SequenceSpace::new(3, 3).unwrap();
        let p = Distribution::random_simplex(&s, 8, false);
        for i in 0..3 {
            let direct = marginal(&s, &p, &[i]).unwrap();
            let proj = nalgebra::DMatrix::from_fn(3, 27, |v, x| f64::from(u8::from(s.token(s.index(x).unwrap(), i) == v)));
            let via = proj * nalgebra::DVector::from_column_slice(p.weights());
            for v in 0..3 {
                assert!((direct[v] - via[v]).abs() < 1e-14);
            }
        }
        let q = Distribution::random_simplex(&s, 9, false);
        assert!(per_position_tv(&s, &p, &q, 3).is_err());
    }

    proptest! {
        #[test]
        fn metric_relations(a in 0u64..500, b in 500u64..1000, c in 1000u64..1500) {
            let s = SequenceSpace::new(2, 3).unwrap();
            let p = Distribution::random_simplex(&s, a, false);
            let q = Distribution::random_simplex(&s, b, false);
            let r = Distribution::random_simplex(&s, c, false);
            let (tpq, tqr, tpr) = (tv(&p, &q).unwrap(), tv(&q, &r).unwrap(), tv(&p, &r).unwrap());
            prop_assert!((tpq - tv(&q, &p).unwrap()).abs() < 1e-15);
            prop_assert!(tpr <= tpq + tqr + 1e-15);
            let (wpq, wqr, wpr) = (w1_hamming(&s, &p, &q).unwrap(), w1_hamming(&s, &q, &r).unwrap(), w1_hamming(&s, &p, &r).unwrap());
            prop_assert!((wpq - w1_hamming(&s, &q, &p).unwrap()).abs() < 1e-12);
            prop_assert!(wpr <= wpq + wqr + 1e-12);
            prop_assert!(tpq <= wpq + 1e-12);
            prop_assert!(wpq <= 3.0 * tpq + 1e-12);
            for i in 0..3 {
                prop_assert!(per_position_tv(&s, &p, &q, i).unwrap() <= tpq + 1e-15);
            }
            let sign: Vec<f64> = p.weights().iter().zip(q.weights()).map(|(x, y)| if x >= y { 1.0 } else { -1.0 }).collect();
            let ipm = p.expectation(&sign) - q.expectation(&sign);
            prop_assert!((ipm - 2.0 * tpq).abs() < 1e-14);
            let m = mmd(&s, &p, &q, &KernelDescriptor::default()).unwrap();
            prop_assert!(m <= 2.0 * tpq + 1e-14);
        }
    }
}
