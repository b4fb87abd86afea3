//! Randomized invariants of the engine, features, losses and generation.

use envpred::arch::{build_model, FramePredictor, GenerationRequest, ModelConfig, Variant};
use envpred::autodiff::{Alignment, ConvSpec, Tape, Tensor};
use envpred::features::sequence::{decode, encode};
use envpred::features::{compute_norm_stats, sample_minibatch, synth_corpus, FeatureSequence, ToySingerConfig};
use envpred::losses::{cgm_sample, mse_loss, softmax, CgmParams, Temperature};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sequence() -> impl Strategy<Value = FeatureSequence> {
    (1usize..40, 1usize..8, 1u32..50).prop_flat_map(|(t, bins, vocab)| {
        (
            prop::collection::vec(-120.0f64..40.0, t * bins),
            prop::collection::vec(0..vocab, t),
            prop::collection::vec(50.0f64..1200.0, t),
            prop::collection::vec(-60.0f64..6.0, t),
        )
            .prop_map(move |(env, ph, f0, loud)| FeatureSequence::new(env, bins, ph, vocab, f0, loud).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn feature_file_round_trip_is_bit_exact(seq in sequence()) {
        let back = decode(&encode(&seq)).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.envelopes), bits(&seq.envelopes));
        prop_assert_eq!(bits(&back.f0), bits(&seq.f0));
        prop_assert_eq!(bits(&back.loudness), bits(&seq.loudness));
        prop_assert_eq!(back, seq);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unpadded_time_extent(t in 1usize..200, k in 1usize..5, d in 1usize..40) {
        let spec = ConvSpec::time(k, d, Alignment::CausalTime, 1, 1);
        match spec.output_extent(t, 60) {
            Ok((out, f)) => {
                prop_assert_eq!(out, t - d * (k - 1));
                prop_assert_eq!(f, 60);
            }
            Err(_) => prop_assert!(t < d * (k - 1) + 1),
        }
    }

    #[test]
    fn causal_conv_ignores_the_future(t in 4usize..20, d in 1usize..4, at in 0usize..20, seed in any::<u64>()) {
        let spec = ConvSpec::time(2, d, Alignment::CausalTime, 2, 3);
        prop_assume!(t > d);
        let at = at % t;
        let run = |bump: f64| {
            let mut tape = Tape::new();
            let mut x = envpred::autodiff::gradcheck::random_tensor(&[t, 3, 2], 1.0, seed);
            x.data_mut()[at * 6..(at + 1) * 6].iter_mut().for_each(|v| *v += bump);
            let x = tape.constant(x).unwrap();
            let w = tape.constant(envpred::autodiff::gradcheck::random_tensor(&[2, 1, 2, 3], 1.0, seed ^ 1)).unwrap();
            let b = tape.constant(Tensor::zeros([3])).unwrap();
            let y = tape.conv2d(x, w, b, spec).unwrap();
            tape.value(y).data().to_vec()
        };
        let (a, b) = (run(0.0), run(3.0));
        // Output i is aligned with input i + d and reads inputs i and i + d.
        for i in 0..t - d {
            let row = i * 9..(i + 1) * 9;
            if i + d < at || (i > at) {
                prop_assert_eq!(&a[row.clone()], &b[row]);
            }
        }
    }

    #[test]
    fn mse_is_a_symmetric_nonnegative_distance(
        x in prop::collection::vec(-50.0f64..50.0, 1..30),
        shift in prop::collection::vec(-5.0f64..5.0, 30),
    ) {
        let y: Vec<f64> = x.iter().zip(&shift).map(|(a, s)| a + s).collect();
        let xy = mse_loss(&x, &y).unwrap();
        prop_assert_eq!(xy, mse_loss(&y, &x).unwrap());
        prop_assert!(xy >= 0.0);
        prop_assert_eq!(xy == 0.0, x == y);
        prop_assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn softmax_ignores_constant_shift(l in prop::collection::vec(-20.0f64..20.0, 1..8), c in -30.0f64..30.0) {
        let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
        for (a, b) in softmax(&l).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hotter_samples_spread_more_around_a_shared_mean(
        seed in any::<u64>(),
        logits in prop::collection::vec(-2.0f64..2.0, 3),
        scales in prop::collection::vec(0.2f64..3.0, 3),
        mean in -50.0f64..10.0,
        lo in 0.0f64..0.8,
        gap in 0.2f64..1.0,
    ) {
        // Components sharing a mean; with distinct means sharpening can move
        // weight off a distant component and shrink the spread.
        let params = CgmParams::new(3, logits, vec![mean; 3], scales).unwrap();
        let hi = lo + gap;
        prop_assert!(params.tempered_variance(0, hi) >= params.tempered_variance(0, lo));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let var = |tau: f64, rng: &mut ChaCha8Rng| {
            let xs: Vec<f64> = (0..4000).map(|_| cgm_sample(&params, Temperature::new(tau).unwrap(), rng)[0]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
        };
        let (v_lo, v_hi) = (var(lo, &mut rng), var(hi, &mut rng));
        // Sample variances of 4000 draws stay within about 10% of the truth.
        prop_assert!(v_hi >= 0.8 * v_lo, "{v_hi} vs {v_lo}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn toy_corpora_are_valid_and_recomputable(seed in any::<u64>(), phrases in 1usize..4, len in 20usize..200) {
        let singer = ToySingerConfig::new(seed);
        let corpus = synth_corpus(&singer, phrases, len).unwrap();
        for seq in &corpus {
            prop_assert!(seq.validate().is_ok());
            prop_assert_eq!(seq.len(), len);
            prop_assert_eq!(singer.render(&seq.phonemes, &seq.f0, &seq.loudness), seq.envelopes.clone());
        }
    }

    #[test]
    fn minibatch_windows_stay_inside_phrases(seed in any::<u64>(), span in 1usize..120) {
        let corpus = synth_corpus(&ToySingerConfig::new(5), 6, 100).unwrap();
        let allowed = [0, 2, 3, 5];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match sample_minibatch(&corpus, &allowed, 16, span, &mut rng) {
            Ok(batch) => {
                prop_assert_eq!(batch.len(), 16);
                for w in batch {
                    prop_assert!(allowed.contains(&w.phrase));
                    prop_assert!(w.start + w.span <= corpus[w.phrase].len());
                    prop_assert_eq!(w.phonemes().len(), span);
                }
            }
            Err(_) => prop_assert!(span > 100),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generation_is_length_correct(frames in 17usize..60, seed in any::<u64>(), tau in 0.0f64..1.5) {
        let corpus = synth_corpus(&ToySingerConfig::new(seed), 1, 80).unwrap();
        let cfg = ModelConfig::desk().with_head(envpred::arch::HeadKind::Cgm { components: 2 });
        let model = build_model(&cfg, Variant::Proposed, seed).unwrap().with_norm(compute_norm_stats(&corpus).unwrap());
        let req = GenerationRequest::from_sequence(&corpus[0], 16, Temperature::new(tau).unwrap(), seed)
            .unwrap()
            .with_frames(frames);
        let out = model.generate(&req).unwrap();
        prop_assert_eq!(out.len(), frames * 60);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&out[..16 * 60]), bits(corpus[0].frames(0, 16)));
    }
}
