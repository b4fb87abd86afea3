//! Objective metrics: teacher-forced error and free-running drift.

use serde::{Deserialize, Serialize};

use crate::arch::{FramePredictor, GenerationRequest};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::losses::Temperature;

/// Default free-running horizon in frames (one second at 200 frames/s).
pub const DRIFT_HORIZON: usize = 200;

/// Teacher-forced error of one phrase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhraseError {
    pub phrase: usize,
    pub frames: usize,
    pub mse_db2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherForcedReport {
    pub phrases: Vec<PhraseError>,
    /// Mean over all predicted frames and bins of the split.
    pub mean_mse_db2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub teacher_forced: TeacherForcedReport,
    /// Mean absolute error in dB at `0..=horizon` free-running steps.
    pub drift: Vec<f64>,
    pub mean_drift: f64,
}

/// Sum that does not depend on the order of `values`.
fn canonical_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().fold(0.0, |a, b| a + b)
}

/// Mean squared error in dB^2 of predictions from ground-truth histories.
/// `split` pairs corpus indices with phrases.
pub fn eval_teacher_forced<P: FramePredictor + ?Sized>(
    predictor: &P,
    split: &[(usize, &FeatureSequence)],
) -> Result<TeacherForcedReport> {
    if split.is_empty() {
        return Err(Error::EmptySplit);
    }
    let h = predictor.receptive_field().history();
    let mut phrases = Vec::with_capacity(split.len());
    let mut total = 0.0;
    let mut count = 0;
    for &(phrase, seq) in split {
        let pred = predictor.teacher_forced(seq)?;
        let truth = &seq.envelopes[h * seq.n_bins..];
        let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
        total += sse;
        count += truth.len();
        phrases.push(PhraseError {
            phrase,
            frames: seq.len() - h,
            mse_db2: sse / truth.len() as f64,
        });
    }
    Ok(TeacherForcedReport {
        phrases,
        mean_mse_db2: total / count as f64,
    })
}

/// Free-running drift: every phrase is seeded with its first `history`
/// true frames and generated for `horizon` more at temperature zero. Entry
/// `k` is the mean absolute dB error at frame `history - 1 + k`, averaged
/// over phrases and bins; entry 0 is the last seed frame.
pub fn free_run_drift<P: FramePredictor + ?Sized>(
    predictor: &P,
    split: &[&FeatureSequence],
    horizon: usize,
) -> Result<Vec<f64>> {
    if split.is_empty() {
        return Err(Error::EmptySplit);
    }
    let h = predictor.receptive_field().history();
    let mut per_step = vec![Vec::with_capacity(split.len()); horizon + 1];
    for seq in split {
        if seq.len() < h + horizon {
            return Err(Error::TooShort {
                what: "phrase for free-running drift".into(),
                required: h + horizon,
                actual: seq.len(),
            });
        }
        let req = GenerationRequest::from_sequence(seq, h, Temperature::ZERO, 0)?.with_frames(h + horizon);
        let gen = predictor.generate(&req)?;
        let bins = seq.n_bins;
        for (k, slot) in per_step.iter_mut().enumerate() {
            let t = h - 1 + k;
            let err: f64 = gen[t * bins..(t + 1) * bins]
                .iter()
                .zip(seq.frame(t))
                .map(|(g, x)| (g - x).abs())
                .sum();
            slot.push(err / bins as f64);
        }
    }
    Ok(per_step
        .iter_mut()
        .map(|v| canonical_sum(v) / split.len() as f64)
        .collect())
}

/// Teacher-forced error and drift curve of one split. A zero horizon skips
/// generation.
pub fn evaluate<P: FramePredictor + ?Sized>(
    predictor: &P,
    split: &[(usize, &FeatureSequence)],
    horizon: usize,
) -> Result<EvalReport> {
    let teacher_forced = eval_teacher_forced(predictor, split)?;
    let seqs: Vec<&FeatureSequence> = split.iter().map(|(_, s)| *s).collect();
    let drift = match horizon {
        0 => vec![0.0],
        _ => free_run_drift(predictor, &seqs, horizon)?,
    };
    let mean_drift = canonical_sum(&mut drift[1..].to_vec()) / horizon.max(1) as f64;
    Ok(EvalReport {
        teacher_forced,
        drift,
        mean_drift,
    })
}
