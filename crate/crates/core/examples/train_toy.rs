//! Trains the proposed network with a point head on a toy corpus and
//! compares held-out error against repeating the previous frame. Writes
//! the run log and a checkpoint, then reloads it.
//!
//! `cargo run --release --example train_toy -- [updates] [n_iter]`

use envpred::arch::{build_model, load_model, HeadKind, ModelConfig, RepeatPrevious, Variant};
use envpred::eval::eval_teacher_forced;
use envpred::features::{split_indices, synth_corpus, ToySingerConfig};
use envpred::train::{train, LogRecord, Regime, TrainConfig};

fn main() -> envpred::Result<()> {
    let arg = |i: usize, default: u64| std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default);
    let (updates, n_iter) = (arg(1, 1000), arg(2, 1) as usize);
    let corpus = synth_corpus(&ToySingerConfig::new(1), 100, 400)?;
    let (_, test_idx) = split_indices(corpus.len());
    let test: Vec<_> = test_idx.iter().map(|&i| (i, &corpus[i])).collect();
    let field = ModelConfig::desk().receptive_field();
    let baseline = eval_teacher_forced(&RepeatPrevious { field, bins: 60 }, &test)?.mean_mse_db2;
    println!("repeat-previous baseline: {baseline:.4} dB^2");

    let model = build_model(&ModelConfig::desk(), Variant::Proposed, 1)?;
    let mut cfg = TrainConfig::new(Regime::Iterated { n_iter }, HeadKind::Mse, updates, 1);
    cfg.eval_every = (updates / 5).max(1);
    let dir = std::env::temp_dir().join("envpred-train-toy");
    let out = train(model, &corpus, &cfg, Some(&dir))?;
    for r in &out.log.records {
        if let LogRecord::Eval { update, test_mse_db2, .. } = r {
            println!("update {update:>6}: held-out {test_mse_db2:.4} dB^2 ({:.2} x baseline)", test_mse_db2 / baseline);
        }
    }
    out.log.write(dir.join("run.jsonl"))?;
    let last = out.checkpoints.last().expect("at least one evaluation");
    let reloaded = load_model(last)?;
    let again = eval_teacher_forced(&reloaded, &test)?.mean_mse_db2;
    println!("reloaded {}: {again:.4} dB^2", last.display());
    Ok(())
}
