//! Fixtures shared by the operator benchmarks in `benches/`.

use difflab::{Distribution, ForwardTrajectory, IntegratorConfig, RateKind, RateSpec, Schedule, SequenceSpace};

/// A rate spec on `[vocab]^len` with a constant schedule of total noise 2.
pub fn spec(kind: RateKind, vocab: usize, len: usize) -> RateSpec {
    let space = match kind {
        RateKind::Masked => SequenceSpace::masked(vocab, len),
        RateKind::Uniform => SequenceSpace::new(vocab, len),
    }
    .expect("valid space");
    RateSpec::new(kind, Schedule::constant(1.0, 2.0).expect("valid schedule"), space).expect("valid spec")
}

/// Random data that avoids the mask when there is one.
pub fn data(spec: &RateSpec, seed: u64) -> Distribution {
    Distribution::random_simplex(spec.space(), seed, spec.kind() == RateKind::Masked)
}

pub fn forward(spec: &RateSpec, seed: u64) -> ForwardTrajectory {
    ForwardTrajectory::new(&data(spec, seed), spec, &IntegratorConfig::default()).expect("forward integration")
}
