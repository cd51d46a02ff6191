//! Shared fixtures for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hat_core::synth::{generate, SynthBenchmark, SynthSpec};

/// The pinned desk-scale benchmark instance.
pub fn pinned_benchmark() -> SynthBenchmark {
    generate(&SynthSpec::default()).expect("pinned spec is valid")
}

/// A labeled two-blob problem of the given size.
pub fn logistic_problem(n_per_side: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blob = |rng: &mut ChaCha8Rng, sign: f64| -> Vec<Vec<f64>> {
        (0..n_per_side)
            .map(|_| {
                (0..dim)
                    .map(|_| sign + rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect()
    };
    let pos = blob(&mut rng, 1.0);
    let neg = blob(&mut rng, -1.0);
    (pos, neg)
}

/// Random scores and labels for ranking benchmarks.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..n).map(|_| rng.gen_range(0..64) as f64 / 64.0).collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    labels[0] = true;
    labels[n - 1] = false;
    (scores, labels)
}
