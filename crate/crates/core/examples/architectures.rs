//! Parameter counts, receptive fields and layer shapes of the three networks.

use envpred::arch::probe::{layer_shapes, measure_receptive_field};
use envpred::arch::{build_model, param_count, ModelConfig, Variant};
use envpred::features::{compute_norm_stats, synth_corpus, ToySingerConfig};

fn main() -> envpred::Result<()> {
    for (preset, cfg) in [("paper", ModelConfig::paper()), ("desk", ModelConfig::desk())] {
        let counts: Vec<usize> = [Variant::Proposed, Variant::Bb1, Variant::Bb2]
            .iter()
            .map(|&v| build_model(&cfg, v, 0).map(|m| param_count(&m)))
            .collect::<envpred::Result<_>>()?;
        println!(
            "{preset:>5}: proposed {:>8}  bb1 {:>8}  bb2 {:>8}  bb2/bb1 {:.3}",
            counts[0],
            counts[1],
            counts[2],
            counts[2] as f64 / counts[1] as f64
        );
    }

    let corpus = synth_corpus(&ToySingerConfig::new(3), 1, 200)?;
    let norm = compute_norm_stats(&corpus)?;
    for variant in [Variant::Proposed, Variant::Bb1, Variant::Bb2] {
        let model = build_model(&ModelConfig::desk(), variant, 1)?.with_norm(norm);
        let rf = measure_receptive_field(&model, &corpus[0], 100, 40)?;
        println!("{:>8} measured (past, future): {rf:?}", variant.name());
        assert_eq!(rf, model.receptive_field());
    }

    let model = build_model(&ModelConfig::paper(), Variant::Proposed, 0)?;
    println!("\nproposed layer outputs [time, frequency, features]:");
    for (name, shape) in layer_shapes(&model)? {
        println!("  {name:<12} {shape:?}");
    }
    Ok(())
}
