//! Mixture head sampling: temperature zero is the per-bin mode, higher
//! temperatures spread around the mixture.

use envpred::arch::{build_model, FramePredictor, GenerationRequest, HeadKind, ModelConfig, Prediction, PredictionInput, Variant};
use envpred::features::{compute_norm_stats, synth_corpus, ToySingerConfig};
use envpred::losses::{cgm_sample, Temperature};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> envpred::Result<()> {
    let corpus = synth_corpus(&ToySingerConfig::new(2), 1, 120)?;
    let cfg = ModelConfig::desk().with_head(HeadKind::Cgm { components: 4 });
    let mut model = build_model(&cfg, Variant::Proposed, 9)?.with_norm(compute_norm_stats(&corpus)?);
    // A fresh head is nearly flat; random biases give distinct components.
    if let Some(b) = model.param_mut("head.b") {
        *b = envpred::autodiff::gradcheck::random_tensor(b.shape(), 1.5, 3);
    }
    let input = PredictionInput::from_sequence(&corpus[0], 60, &model.receptive_field())?;
    let Prediction::Mixture(mix) = model.predict(&input)? else {
        unreachable!("mixture head")
    };
    let bin = 30;
    println!("bin {bin}: weights {:.3?}", mix.weights(bin));
    println!("        means {:.2?}", mix.means(bin));
    println!("        mixture mean {:.3}, mode {:.3}", mix.mixture_mean(bin), mix.mode()[bin]);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for tau in [0.0, 0.25, 0.5, 1.0] {
        let t = Temperature::new(tau)?;
        let xs: Vec<f64> = (0..20_000).map(|_| cgm_sample(&mix, t, &mut rng)[bin]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
        println!("tau {tau:.2}: sample mean {m:.3}, sd {:.3} (model sd {:.3})", v.sqrt(), mix.tempered_variance(bin, tau).sqrt());
    }

    let gen = |seed| -> envpred::Result<Vec<f64>> {
        model.generate(&GenerationRequest::from_sequence(&corpus[0], 16, Temperature::ZERO, seed)?.with_frames(80))
    };
    println!("tau 0 generation identical across seeds: {}", gen(1)? == gen(2)?);
    Ok(())
}
