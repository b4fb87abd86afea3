//! Preference t-tests and opinion-score intervals on simulated listener data.

use envpred::stats::{mos_summary, one_sided_t_test, ScoreRange, ScoreSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> envpred::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Listeners slightly prefer the first system of each pair.
    for (label, bias) in [("a vs b", 0.5), ("c vs d", 0.1), ("e vs e", 0.0)] {
        let scores: Vec<f64> = (0..40)
            .map(|_| (bias + rng.random_range(-2.0f64..2.0)).round().clamp(-3.0, 3.0))
            .collect();
        let r = one_sided_t_test(&ScoreSet::new(label, ScoreRange::Preference, scores)?)?;
        println!("{label}: mean {:+.2}, t {:.2}, p {:.4}", r.mean, r.t, r.p);
    }
    for (label, centre) in [("system 1", 3.2), ("system 2", 3.5), ("reference", 4.4)] {
        let scores: Vec<f64> = (0..30)
            .map(|_| (centre + rng.random_range(-1.5f64..1.5)).round().clamp(1.0, 5.0))
            .collect();
        let r = mos_summary(&ScoreSet::new(label, ScoreRange::Mos, scores)?, 0.05)?;
        println!("{label}: {:.2} +- {:.2}", r.mean, r.half_width);
    }
    Ok(())
}
