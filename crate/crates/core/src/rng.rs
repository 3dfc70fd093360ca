//! Seeded random number substreams.
//!
//! Every random quantity in the crate is a pure function of a `u64` seed and
//! a stream index. A stream is a ChaCha8 generator keyed by the seed with the
//! index selected through the cipher's 64-bit stream counter, so stream `i`
//! yields the same values whichever thread builds it and in whatever order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::groups::SampleTransform;
use crate::model::{Design, ParameterPoint};

/// Independent generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a seed for a named sub-experiment so that unrelated suites sharing
/// a base seed do not share streams.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in tag.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    splitmix(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random element of the sample group: log-uniform scales in
/// `[e^-1.5, e^1.5]`, uniform shifts in `[-5, 5]`.
pub fn random_transform<R: Rng + ?Sized>(rng: &mut R, p: usize) -> SampleTransform {
    let c = (0..p)
        .map(|_| rng.random_range(-1.5..1.5f64).exp())
        .collect();
    let a = (0..p).map(|_| rng.random_range(-5.0..5.0)).collect();
    SampleTransform::new(c, a).expect("generated scales are positive")
}

/// Random parameter point: coefficients in `[-3, 3]`, log-uniform variances
/// in `[e^-2, e^2]`.
pub fn random_parameter<R: Rng + ?Sized>(rng: &mut R, p: usize) -> ParameterPoint {
    let beta = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
    let sigma2 = (0..p)
        .map(|_| rng.random_range(-2.0..2.0f64).exp())
        .collect();
    ParameterPoint::new(beta, sigma2).expect("generated variances are positive")
}

/// Random well-conditioned design with `p` in `1..=max_p` and replication
/// counts in `min_rep..=max_rep`.
pub fn random_design<R: Rng + ?Sized>(
    rng: &mut R,
    max_p: usize,
    min_rep: usize,
    max_rep: usize,
) -> Design {
    loop {
        let p = rng.random_range(1..=max_p);
        let xp: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| {
                        let diag = if i == j { 2.0 } else { 0.0 };
                        diag + rng.random_range(-1.0..1.0)
                    })
                    .collect()
            })
            .collect();
        let reps: Vec<usize> = (0..p)
            .map(|_| rng.random_range(min_rep..=max_rep))
            .collect();
        if let Ok(design) = Design::new(xp, reps) {
            if design.condition() < 1e3 {
                return design;
            }
        }
    }
}

/// Random model-(single replicated tail) design: `p - 1` singleton
/// populations followed by one population of size `tail`.
pub fn random_tail_design<R: Rng + ?Sized>(rng: &mut R, max_p: usize, max_tail: usize) -> Design {
    loop {
        let p = rng.random_range(1..=max_p);
        let tail = rng.random_range(3..=max_tail.max(3));
        let xp: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| if i == j { 2.0 } else { 0.0 } + rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let mut reps = vec![1; p];
        reps[p - 1] = tail;
        if let Ok(design) = Design::new(xp, reps) {
            if design.condition() < 1e3 {
                return design;
            }
        }
    }
}
