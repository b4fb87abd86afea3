//! Iterated multi-frame training against input-noise training: held-out
//! error and free-running drift for matched runs.
//!
//! `cargo run --release --example stability_ablation -- [updates] [seed]`

use envpred::arch::{build_model, HeadKind, ModelConfig, Variant};
use envpred::eval::DRIFT_HORIZON;
use envpred::features::{synth_corpus, ToySingerConfig};
use envpred::train::{train, LogRecord, Regime, TrainConfig};

fn main() -> envpred::Result<()> {
    let arg = |i: usize, default: u64| std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default);
    let (updates, seed) = (arg(1, 400), arg(2, 1));
    let corpus = synth_corpus(&ToySingerConfig::new(1), 100, 400)?;
    for regime in [Regime::ITERATED, Regime::NOISE] {
        let model = build_model(&ModelConfig::desk(), Variant::Proposed, seed)?;
        let mut cfg = TrainConfig::new(regime, HeadKind::Mse, updates, seed);
        cfg.eval_horizon = DRIFT_HORIZON;
        let out = train(model, &corpus, &cfg, None)?;
        if let Some(LogRecord::Eval { test_mse_db2, drift_db, mean_drift_db, .. }) = out.log.last_eval() {
            let at: Vec<String> = [1, 10, 50, 100, 200].iter().map(|&k| format!("{:.2}", drift_db[k])).collect();
            println!("{regime:?}");
            println!("  held-out mse {test_mse_db2:.3} dB^2, mean drift {mean_drift_db:.3} dB");
            println!("  drift at 1/10/50/100/200 frames: {}", at.join(" / "));
        }
    }
    Ok(())
}
