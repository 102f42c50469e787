//! Inputs shared by the benchmarks.

use chronofeat_core::synthgen::{generate, RowsPerHour, SynthConfig};
use chronofeat_core::EventLog;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic log of `days` days at `rows_per_hour` rows per hour.
pub fn synthetic_log(days: u32, rows_per_hour: f64) -> EventLog {
    let config = SynthConfig {
        n_days: days,
        rows_per_hour: RowsPerHour { mean: rows_per_hour, dispersion: 0.0 },
        ..SynthConfig::default()
    };
    generate(&config).expect("valid config").log
}

/// Scores with heavy ties and labels with roughly 17% positives.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.17))).collect();
    let scores = labels
        .iter()
        .map(|&y| (f64::from(y) * 0.3 + rng.random::<f64>() * 1000.0).round() / 1000.0)
        .collect();
    (scores, labels)
}
