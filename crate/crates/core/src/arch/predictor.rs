use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::config::ReceptiveField;
use crate::arch::forward::{stack_frames, ControlWindows, Controls, Forward, HeadOut};
use crate::arch::model::Model;
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, ToySingerConfig};
use crate::losses::{cgm_sample, CgmParams, Temperature};

/// Everything one prediction reads, in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionInput {
    /// `history x bins` past envelope frames in dB, most recent last.
    pub env_history: Vec<f64>,
    /// Phoneme ids of the window around the target frame.
    pub phonemes: Vec<u32>,
    /// f0 window in Hz.
    pub f0: Vec<f64>,
    /// Loudness window in dB.
    pub loudness: Vec<f64>,
}

impl PredictionInput {
    /// Inputs for frame `t` given the frames generated so far (`frames`,
    /// frame-major, at least `t` of them) and the phrase's control tracks.
    /// Control frames outside the phrase replicate its edges.
    pub fn at(frames: &[f64], bins: usize, controls: Controls<'_>, t: usize, rf: &ReceptiveField) -> Result<Self> {
        let h = rf.history();
        if t < h {
            return Err(Error::TooShort {
                what: format!("envelope history for frame {t}"),
                required: h,
                actual: t,
            });
        }
        if frames.len() < t * bins {
            return Err(Error::Shape(format!("history ends before frame {t}")));
        }
        let window = |(past, future): (usize, usize)| {
            (0..past + future + 1).map(move |i| (t as isize - past as isize + i as isize).clamp(0, controls.len() as isize - 1) as usize)
        };
        Ok(Self {
            env_history: frames[(t - h) * bins..t * bins].to_vec(),
            phonemes: window(rf.phoneme).map(|i| controls.phonemes[i]).collect(),
            f0: window(rf.f0).map(|i| controls.f0[i]).collect(),
            loudness: window(rf.loudness).map(|i| controls.loudness[i]).collect(),
        })
    }

    /// Teacher-forced inputs for frame `t` of `seq`.
    pub fn from_sequence(seq: &FeatureSequence, t: usize, rf: &ReceptiveField) -> Result<Self> {
        if t > seq.len() {
            return Err(Error::Shape(format!("frame {t} beyond phrase of {}", seq.len())));
        }
        Self::at(&seq.envelopes, seq.n_bins, Controls::of(seq), t, rf)
    }
}

/// A predicted frame, or a mixture per bin.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Frame(Vec<f64>),
    Mixture(CgmParams),
}

impl Prediction {
    /// The frame itself, or the zero-temperature draw of the mixture.
    pub fn point(&self) -> Vec<f64> {
        match self {
            Prediction::Frame(f) => f.clone(),
            Prediction::Mixture(p) => p.mode(),
        }
    }

    pub fn sample(&self, tau: Temperature, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Prediction::Frame(f) => f.clone(),
            Prediction::Mixture(p) => cgm_sample(p, tau, rng),
        }
    }
}

/// Control tracks plus seed frames for free-running generation.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    pub phonemes: Vec<u32>,
    pub f0: Vec<f64>,
    pub loudness: Vec<f64>,
    /// The first `history` ground-truth frames, frame-major, in dB.
    pub seed_frames: Vec<f64>,
    /// Frames to produce, seeds included; at most the control length.
    pub frames: usize,
    /// Sampling temperature for mixture heads; ignored for point heads.
    pub temperature: Temperature,
    pub seed: u64,
}

impl GenerationRequest {
    /// Controls of `seq` with its first `history` frames as seeds.
    pub fn from_sequence(seq: &FeatureSequence, history: usize, temperature: Temperature, seed: u64) -> Result<Self> {
        if seq.len() <= history {
            return Err(Error::TooShort {
                what: "generation request".into(),
                required: history + 1,
                actual: seq.len(),
            });
        }
        Ok(Self {
            phonemes: seq.phonemes.clone(),
            f0: seq.f0.clone(),
            loudness: seq.loudness.clone(),
            seed_frames: seq.frames(0, history).to_vec(),
            frames: seq.len(),
            temperature,
            seed,
        })
    }

    /// Stops generation after `frames` frames; control windows still see
    /// the full tracks.
    pub fn with_frames(mut self, frames: usize) -> Self {
        self.frames = frames;
        self
    }

    /// Frames the request produces.
    pub fn len(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn controls(&self) -> Controls<'_> {
        Controls {
            phonemes: &self.phonemes,
            f0: &self.f0,
            loudness: &self.loudness,
        }
    }

    pub fn validate(&self, history: usize, bins: usize) -> Result<()> {
        let t = self.phonemes.len();
        for (track, len) in [("f0", self.f0.len()), ("loudness", self.loudness.len())] {
            if len != t {
                return Err(Error::LengthMismatch {
                    track,
                    expected: t,
                    found: len,
                });
            }
        }
        if self.seed_frames.len() != history * bins {
            return Err(Error::LengthMismatch {
                track: "seed frames",
                expected: history * bins,
                found: self.seed_frames.len(),
            });
        }
        if self.frames <= history {
            return Err(Error::TooShort {
                what: "generation request".into(),
                required: history + 1,
                actual: self.frames,
            });
        }
        if self.frames > t {
            return Err(Error::LengthMismatch {
                track: "requested frames",
                expected: t,
                found: self.frames,
            });
        }
        Ok(())
    }
}

/// Anything that maps a [`PredictionInput`] to the next frame.
pub trait FramePredictor {
    fn receptive_field(&self) -> ReceptiveField;

    fn n_bins(&self) -> usize;

    fn predict(&self, input: &PredictionInput) -> Result<Prediction>;

    /// Point predictions of frames `history..T` of `seq` from ground-truth
    /// histories, frame-major.
    fn teacher_forced(&self, seq: &FeatureSequence) -> Result<Vec<f64>> {
        let rf = self.receptive_field();
        let mut out = Vec::with_capacity(seq.envelopes.len());
        for t in rf.history()..seq.len() {
            out.extend(self.predict(&PredictionInput::from_sequence(seq, t, &rf)?)?.point());
        }
        Ok(out)
    }

    /// All `T` frames: the seeds followed by frames predicted from the
    /// growing generated history.
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<f64>> {
        let rf = self.receptive_field();
        let bins = self.n_bins();
        req.validate(rf.history(), bins)?;
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let mut frames = req.seed_frames.clone();
        for t in rf.history()..req.len() {
            let input = PredictionInput::at(&frames, bins, req.controls(), t, &rf)?;
            let next = self.predict(&input)?.sample(req.temperature, &mut rng);
            frames.extend(next);
        }
        Ok(frames)
    }
}

fn prediction(tape: &Tape, out: HeadOut) -> Result<Prediction> {
    match out {
        HeadOut::Frame(v) => Ok(Prediction::Frame(tape.value(v).data().to_vec())),
        HeadOut::Mixture { params, k } => Ok(Prediction::Mixture(CgmParams::from_packed(k, tape.value(params).data())?)),
    }
}

impl Model {
    /// Single-frame prediction.
    pub fn predict_frame(&self, input: &PredictionInput) -> Result<Prediction> {
        let cfg = self.config();
        let h = cfg.history();
        let hist = Tensor::new([h, cfg.n_bins, 1], input.env_history.clone()).map_err(|_| Error::LengthMismatch {
            track: "envelope history",
            expected: h * cfg.n_bins,
            found: input.env_history.len(),
        })?;
        let ctrl = ControlWindows {
            blocks: 1,
            steps: 1,
            phonemes: input.phonemes.iter().map(|&p| p as usize).collect(),
            f0: input.f0.clone(),
            loudness: input.loudness.clone(),
        };
        let mut tape = Tape::new();
        let mut fwd = Forward::new(self, 1, false);
        let hist = tape.constant(hist)?;
        let out = fwd.teacher(&mut tape, hist, &ctrl)?;
        prediction(&tape, out)
    }
}

/// Free-function form of [`Model::predict_frame`].
pub fn predict_frame(model: &Model, input: &PredictionInput) -> Result<Prediction> {
    model.predict_frame(input)
}

impl FramePredictor for Model {
    fn receptive_field(&self) -> ReceptiveField {
        self.config().receptive_field()
    }

    fn n_bins(&self) -> usize {
        self.config().n_bins
    }

    fn predict(&self, input: &PredictionInput) -> Result<Prediction> {
        self.predict_frame(input)
    }

    /// All targets of the phrase in one graph.
    fn teacher_forced(&self, seq: &FeatureSequence) -> Result<Vec<f64>> {
        let cfg = self.config();
        let h = cfg.history();
        if seq.len() <= h {
            return Err(Error::TooShort {
                what: "teacher-forced evaluation".into(),
                required: h + 1,
                actual: seq.len(),
            });
        }
        let n = seq.len() - h;
        let frames: Vec<&[f64]> = (0..seq.len() - 1).map(|t| seq.frame(t)).collect();
        let mut tape = Tape::new();
        let hist = tape.constant(stack_frames(&frames, 1, cfg.n_bins)?)?;
        let ctrl = ControlWindows::gather(cfg, n, &[(Controls::of(seq), h as isize)])?;
        let mut fwd = Forward::new(self, 1, false);
        let out = fwd.teacher(&mut tape, hist, &ctrl)?;
        let p = out.point(&mut tape, &[n, cfg.n_bins, 1])?;
        Ok(tape.value(p).data().to_vec())
    }

    /// One rollout graph with an incremental envelope stack.
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<f64>> {
        let cfg = self.config();
        let (h, bins) = (cfg.history(), cfg.n_bins);
        req.validate(h, bins)?;
        let n = req.len() - h;
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let tau = req.temperature;
        let mut tape = Tape::new();
        let seed = tape.constant(Tensor::new([h, bins, 1], req.seed_frames.clone())?)?;
        let ctrl = ControlWindows::gather(cfg, n, &[(req.controls(), h as isize)])?;
        let mut fwd = Forward::new(self, 1, false);
        let mut frames = req.seed_frames.clone();
        fwd.rollout(&mut tape, seed, &ctrl, |tape, _, out| {
            let v = match out {
                HeadOut::Mixture { params, k } if tau.value() > 0.0 => {
                    let p = CgmParams::from_packed(k, tape.value(params).data())?;
                    tape.constant(Tensor::new([1, bins, 1], cgm_sample(&p, tau, &mut rng))?)?
                }
                _ => out.point(tape, &[1, bins, 1])?,
            };
            frames.extend_from_slice(tape.value(v).data());
            Ok(v)
        })?;
        Ok(frames)
    }
}

/// The synthetic singer's generating formula wrapped as a predictor: a
/// perfect model of toy data that ignores the envelope history.
#[derive(Clone, Debug)]
pub struct ToyOracle {
    pub singer: ToySingerConfig,
    pub field: ReceptiveField,
}

impl FramePredictor for ToyOracle {
    fn receptive_field(&self) -> ReceptiveField {
        self.field
    }

    fn n_bins(&self) -> usize {
        self.singer.n_bins
    }

    fn predict(&self, input: &PredictionInput) -> Result<Prediction> {
        let rf = &self.field;
        let center = |track_len: usize, past: usize| {
            if track_len == 0 {
                Err(Error::Shape("empty control window".into()))
            } else {
                Ok(past.min(track_len - 1))
            }
        };
        let t = center(input.phonemes.len(), rf.phoneme.0)?;
        let f0 = input.f0[center(input.f0.len(), rf.f0.0)?];
        let loud = input.loudness[center(input.loudness.len(), rf.loudness.0)?];
        Ok(Prediction::Frame(self.singer.render_frame(&input.phonemes, t, f0, loud)))
    }
}

/// Predicts the last history frame.
#[derive(Clone, Copy, Debug)]
pub struct RepeatPrevious {
    pub field: ReceptiveField,
    pub bins: usize,
}

impl FramePredictor for RepeatPrevious {
    fn receptive_field(&self) -> ReceptiveField {
        self.field
    }

    fn n_bins(&self) -> usize {
        self.bins
    }

    fn predict(&self, input: &PredictionInput) -> Result<Prediction> {
        let h = &input.env_history;
        if h.len() < self.bins {
            return Err(Error::Shape("empty envelope history".into()));
        }
        Ok(Prediction::Frame(h[h.len() - self.bins..].to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_model, HeadKind, ModelConfig, Variant};
    use crate::features::{compute_norm_stats, synth_corpus};

    /// Hides the batched overrides so the per-frame defaults run.
    struct PerFrame<'a>(&'a Model);

    impl FramePredictor for PerFrame<'_> {
        fn receptive_field(&self) -> ReceptiveField {
            self.0.receptive_field()
        }
        fn n_bins(&self) -> usize {
            self.0.n_bins()
        }
        fn predict(&self, input: &PredictionInput) -> Result<Prediction> {
            self.0.predict(input)
        }
    }

    fn setup(variant: Variant, head: HeadKind) -> (Model, Vec<FeatureSequence>) {
        let corpus = synth_corpus(&ToySingerConfig::new(2), 2, 40).unwrap();
        let cfg = ModelConfig::desk().with_head(head);
        let model = build_model(&cfg, variant, 5)
            .unwrap()
            .with_norm(compute_norm_stats(&corpus).unwrap());
        (model, corpus)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn batched_paths_match_per_frame_paths() {
        for variant in [Variant::Proposed, Variant::Bb1, Variant::Bb2] {
            for head in [HeadKind::Mse, HeadKind::Cgm { components: 2 }] {
                let (model, corpus) = setup(variant, head);
                let seq = &corpus[0];
                close(
                    &model.teacher_forced(seq).unwrap(),
                    &PerFrame(&model).teacher_forced(seq).unwrap(),
                    1e-9,
                );
                for tau in [0.0, 0.7] {
                    let req = GenerationRequest::from_sequence(seq, 16, Temperature::new(tau).unwrap(), 3).unwrap();
                    close(&model.generate(&req).unwrap(), &PerFrame(&model).generate(&req).unwrap(), 1e-9);
                }
            }
        }
    }

    #[test]
    fn oracle_reproduces_corpus() {
        let singer = ToySingerConfig::new(8);
        let corpus = synth_corpus(&singer, 2, 120).unwrap();
        let oracle = ToyOracle {
            singer,
            field: ModelConfig::paper().receptive_field(),
        };
        for seq in &corpus {
            let req = GenerationRequest::from_sequence(seq, 16, Temperature::ZERO, 0).unwrap();
            close(&oracle.generate(&req).unwrap(), &seq.envelopes, 1e-9);
        }
    }

    #[test]
    fn repeat_previous_returns_last_frame() {
        let corpus = synth_corpus(&ToySingerConfig::new(1), 1, 30).unwrap();
        let rp = RepeatPrevious {
            field: ModelConfig::paper().receptive_field(),
            bins: 60,
        };
        let tf = rp.teacher_forced(&corpus[0]).unwrap();
        assert_eq!(&tf[..60], corpus[0].frame(15));
    }

    #[test]
    fn wrong_window_length_is_an_error() {
        let (model, corpus) = setup(Variant::Proposed, HeadKind::Mse);
        let mut input = PredictionInput::from_sequence(&corpus[0], 20, &model.receptive_field()).unwrap();
        input.f0.pop();
        assert!(matches!(model.predict_frame(&input), Err(Error::LengthMismatch { .. })));
    }
}
