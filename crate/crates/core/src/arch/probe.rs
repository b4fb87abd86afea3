//! Perturbation probes, layer traces and an end-to-end gradient check for
//! the architecture contracts.

use crate::arch::config::{HeadKind, ModelConfig, ReceptiveField, Variant};
use crate::arch::forward::{ControlWindows, Controls, Forward, HeadOut};
use crate::arch::model::{build_model, Model};
use crate::arch::predictor::{FramePredictor, PredictionInput};
use crate::autodiff::gradcheck::{check_gradients, random_tensor, GradCheckReport, SUITE_STEP};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, NormStats};

#[derive(Clone, Copy)]
enum Track {
    Envelope,
    Phoneme,
    F0,
    Loudness,
}

fn perturb(seq: &FeatureSequence, track: Track, frame: usize) -> FeatureSequence {
    let mut s = seq.clone();
    match track {
        Track::Envelope => {
            let bins = s.n_bins;
            s.envelopes[frame * bins..(frame + 1) * bins].iter_mut().for_each(|v| *v += 6.0);
        }
        Track::Phoneme => s.phonemes[frame] = (s.phonemes[frame] + 1) % s.vocab,
        Track::F0 => s.f0[frame] *= 1.3,
        Track::Loudness => s.loudness[frame] += 5.0,
    }
    s
}

/// Receptive field measured by perturbing single frames of `seq` around
/// target `t`, up to `reach` frames away. For the envelope, the future
/// count includes the target frame itself.
pub fn measure_receptive_field<P: FramePredictor + ?Sized>(
    predictor: &P,
    seq: &FeatureSequence,
    t: usize,
    reach: usize,
) -> Result<ReceptiveField> {
    if t < reach || t + reach >= seq.len() {
        return Err(Error::TooShort {
            what: format!("probe sequence around frame {t}"),
            required: t + reach + 1,
            actual: seq.len(),
        });
    }
    let rf = predictor.receptive_field();
    let base = predictor.predict(&PredictionInput::from_sequence(seq, t, &rf)?)?;
    let changes = |track: Track, frame: usize| -> Result<bool> {
        let s = perturb(seq, track, frame);
        Ok(predictor.predict(&PredictionInput::from_sequence(&s, t, &rf)?)? != base)
    };
    let extent = |track: Track| -> Result<(usize, usize)> {
        let mut past = 0;
        let mut future = 0;
        for k in 1..=reach {
            if changes(track, t - k)? {
                past = k;
            }
        }
        let first = if matches!(track, Track::Envelope) { 0 } else { 1 };
        for j in first..=reach {
            if changes(track, t + j)? {
                future = j + 1 - first;
            }
        }
        Ok((past, future))
    };
    Ok(ReceptiveField {
        envelope: extent(Track::Envelope)?,
        phoneme: extent(Track::Phoneme)?,
        f0: extent(Track::F0)?,
        loudness: extent(Track::Loudness)?,
    })
}

/// `(layer, [time, frequency, features])` after every layer of one
/// single-target teacher-forced pass.
pub fn layer_shapes(model: &Model) -> Result<Vec<(String, Vec<usize>)>> {
    let cfg = model.config();
    let h = cfg.history();
    let mut tape = Tape::new();
    let hist = tape.constant(Tensor::zeros([h, cfg.n_bins, 1]))?;
    let controls = Controls {
        phonemes: &[0],
        f0: &[200.0],
        loudness: &[-12.0],
    };
    let ctrl = ControlWindows::gather(cfg, 1, &[(controls, 0)])?;
    let mut fwd = Forward::new(model, 1, false).with_trace();
    fwd.teacher(&mut tape, hist, &ctrl)?;
    Ok(fwd.trace.unwrap_or_default())
}

/// Smallest config exercising every layer type: 2 bins and depth 1 stacks.
pub fn tiny_config(head: HeadKind) -> ModelConfig {
    ModelConfig {
        n_env: 1,
        n_phoneme: 1,
        n_f0: 1,
        n_loudness: 1,
        n_bins: 2,
        freq_stacks: 2,
        layers_per_freq_stack: 2,
        densenet_growth: 2,
        bottleneck_width: 3,
        time_channels: 4,
        bb1_channels: 3,
        bb2_channels: 2,
        phoneme_vocab: 3,
        head,
        ..ModelConfig::paper()
    }
}

/// Finite-difference check of the gradient of a three-step autoregressive
/// rollout loss of a tiny `variant` model with respect to every parameter.
pub fn end_to_end_gradcheck(variant: Variant, head: HeadKind, seed: u64) -> Result<GradCheckReport> {
    let cfg = tiny_config(head);
    let norm = NormStats {
        env_mean: -30.0,
        env_sd: 12.0,
        log_f0_mean: 5.3,
        log_f0_sd: 0.4,
        loudness_mean: -15.0,
        loudness_sd: 6.0,
    };
    let model = build_model(&cfg, variant, seed)?.with_norm(norm);
    let (blocks, steps, h) = (2, 3, cfg.history());
    let width = blocks * cfg.n_bins;
    let around = |shape: &[usize], s: u64| {
        let mut t = random_tensor(shape, 10.0, s);
        t.data_mut().iter_mut().for_each(|v| *v -= 30.0);
        t
    };
    let seeds = around(&[h, width, 1], seed + 1);
    let targets = around(&[steps, width, 1], seed + 2);
    let a = Controls {
        phonemes: &[0, 2, 1, 1, 2],
        f0: &[180.0, 190.0, 230.0, 210.0, 200.0],
        loudness: &[-20.0, -18.0, -10.0, -12.0, -9.0],
    };
    let b = Controls {
        phonemes: &[1, 1, 0, 2],
        f0: &[300.0, 280.0, 260.0, 250.0],
        loudness: &[-8.0, -9.0, -11.0, -14.0],
    };
    let ctrl = ControlWindows::gather(&cfg, steps, &[(a, 1), (b, 0)])?;
    // Nonzero biases keep rectifier inputs away from the kink at zero.
    let inputs: Vec<Tensor> = model
        .names()
        .iter()
        .zip(model.params())
        .enumerate()
        .map(|(i, (name, p))| match name.ends_with(".b") {
            true => random_tensor(p.shape(), 0.5, seed ^ (i as u64) << 16),
            false => p.clone(),
        })
        .collect();
    check_gradients(&inputs, SUITE_STEP, |tape, vars| {
        let mut fwd = Forward::new(&model, blocks, true).with_vars(vars);
        let seed_db = tape.constant(seeds.clone())?;
        let outs = fwd.rollout(tape, seed_db, &ctrl, |tape, _, out: HeadOut| out.point(tape, &[1, width, 1]))?;
        let mut losses = Vec::with_capacity(steps);
        for (i, out) in outs.into_iter().enumerate() {
            let target = tape.constant(Tensor::new([1, width, 1], targets.data()[i * width..(i + 1) * width].to_vec())?)?;
            losses.push(out.loss(tape, target)?);
        }
        tape.mean(&losses)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_bb_model, param_count};
    use crate::features::{compute_norm_stats, synth_corpus, ToySingerConfig};

    fn probe_corpus() -> Vec<FeatureSequence> {
        synth_corpus(&ToySingerConfig::new(3), 1, 200).unwrap()
    }

    #[test]
    fn measured_fields_match_config() {
        let corpus = probe_corpus();
        let norm = compute_norm_stats(&corpus).unwrap();
        for variant in [Variant::Proposed, Variant::Bb1, Variant::Bb2] {
            let model = build_model(&ModelConfig::desk(), variant, 1).unwrap().with_norm(norm);
            let measured = measure_receptive_field(&model, &corpus[0], 100, 40).unwrap();
            assert_eq!(measured, model.receptive_field(), "{variant:?}");
            assert_eq!(measured.envelope, (16, 0));
            assert_eq!(measured.phoneme, (32, 31));
        }
    }

    #[test]
    fn frequency_extent_is_preserved() {
        for variant in [Variant::Proposed, Variant::Bb2] {
            let model = build_model(&ModelConfig::desk(), variant, 0).unwrap();
            let shapes = layer_shapes(&model).unwrap();
            assert!(shapes.len() >= 18);
            for (name, s) in shapes {
                assert_eq!(s[1], 60, "{variant:?} {name}");
            }
        }
    }

    #[test]
    fn densenet_features_grow_by_growth() {
        let cfg = ModelConfig::paper();
        let model = build_model(&cfg, Variant::Proposed, 0).unwrap();
        let shapes = layer_shapes(&model).unwrap();
        let features = |name: &str| shapes.iter().find(|(n, _)| n == name).unwrap().1[2];
        let input = features("concat");
        assert_eq!(input, 4 * 32);
        for j in 0..4 {
            assert_eq!(features(&format!("fs0.l{j}")), input + (j + 1) * cfg.densenet_growth);
            assert_eq!(features(&format!("fs1.l{j}")), cfg.bottleneck_width + (j + 1) * cfg.densenet_growth);
        }
    }

    #[test]
    fn envelope_stack_shrinks_to_one_frame() {
        let model = build_model(&ModelConfig::paper(), Variant::Proposed, 0).unwrap();
        let shapes = layer_shapes(&model).unwrap();
        let lens: Vec<usize> = (0..4)
            .map(|l| shapes.iter().find(|(n, _)| *n == format!("env.t{l}")).unwrap().1[0])
            .collect();
        assert_eq!(lens, [15, 13, 9, 1]);
    }

    #[test]
    fn zeroed_head_repeats_previous_frame() {
        let corpus = probe_corpus();
        let norm = compute_norm_stats(&corpus).unwrap();
        for variant in [Variant::Proposed, Variant::Bb1, Variant::Bb2] {
            let mut model = build_model(&ModelConfig::desk(), variant, 2).unwrap().with_norm(norm);
            model.zero_head();
            let rf = model.receptive_field();
            for t in [16, 90, 199] {
                let input = PredictionInput::from_sequence(&corpus[0], t, &rf).unwrap();
                assert_eq!(model.predict(&input).unwrap().point(), corpus[0].frame(t - 1));
            }
        }
    }

    #[test]
    fn tiny_model_gradients() {
        for variant in [Variant::Proposed, Variant::Bb1, Variant::Bb2] {
            for head in [HeadKind::Mse, HeadKind::Cgm { components: 2 }] {
                let r = end_to_end_gradcheck(variant, head, 4).unwrap();
                assert!(r.max_rel_error < 1e-4, "{variant:?} {head:?}: {r:?}");
            }
        }
    }

    #[test]
    fn paper_baselines_are_a_third_apart() {
        for cfg in [ModelConfig::paper(), ModelConfig::desk()] {
            let bb1 = param_count(&build_bb_model(Variant::Bb1, &cfg, 0).unwrap());
            let bb2 = param_count(&build_bb_model(Variant::Bb2, &cfg, 0).unwrap());
            let ratio = bb2 as f64 / bb1 as f64;
            assert!((0.25..=0.45).contains(&ratio), "{bb2}/{bb1} = {ratio}");
        }
    }
}
