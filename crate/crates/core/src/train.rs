//! Minibatch training under the two regimes: iterated multi-frame rollouts
//! and single-frame prediction from noisy histories.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arch::forward::{stack_frames, ControlWindows, Controls, Forward, HeadOut};
use crate::arch::{save_model, FramePredictor, HeadKind, Model, PredictionInput};
use crate::autodiff::adam::clip_global_norm;
use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::features::{compute_norm_stats, sample_minibatch, split_indices, FeatureSequence, NormStats, Window};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    /// Roll the model out for `n_iter` frames from a true history, feeding
    /// each prediction back, and average the loss over all of them.
    Iterated { n_iter: usize },
    /// Predict one frame from a history with Gaussian noise of `sigma_db` dB.
    Noise { sigma_db: f64 },
}

impl Regime {
    pub const ITERATED: Regime = Regime::Iterated { n_iter: 24 };
    pub const NOISE: Regime = Regime::Noise { sigma_db: 12.0 };

    /// Consecutive targets per sample.
    pub fn targets(&self) -> usize {
        match *self {
            Regime::Iterated { n_iter } => n_iter,
            Regime::Noise { .. } => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Regime::Iterated { n_iter: 0 } => Err(Error::Config("n_iter must be at least 1".into())),
            Regime::Noise { sigma_db } if !(sigma_db >= 0.0 && sigma_db.is_finite()) => {
                Err(Error::Config(format!("sigma_db = {sigma_db}, must be finite and >= 0")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    pub batch: usize,
    pub max_updates: u64,
    /// Held-out evaluation and checkpoint period; 0 evaluates only at the end.
    pub eval_every: u64,
    pub seed: u64,
    /// Head the model must carry.
    pub head: HeadKind,
    /// Global gradient-norm clip; `None` disables it.
    pub clip: Option<f64>,
    pub adam: AdamConfig,
    /// Cut the gradient path through fed-back predictions.
    pub detach_feedback: bool,
    /// Free-running horizon of held-out drift evaluations; 0 skips drift.
    pub eval_horizon: usize,
}

impl TrainConfig {
    pub fn new(regime: Regime, head: HeadKind, max_updates: u64, seed: u64) -> Self {
        Self {
            regime,
            batch: 16,
            max_updates,
            eval_every: 0,
            seed,
            head,
            clip: Some(5.0),
            adam: AdamConfig::default(),
            detach_feedback: false,
            eval_horizon: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regime.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip = {c}, must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Update {
        update: u64,
        lr: f64,
        loss: f64,
        grad_norm: f64,
    },
    Eval {
        update: u64,
        test_mse_db2: f64,
        /// Drift curve at `0..=horizon`; empty when drift is not evaluated.
        drift_db: Vec<f64>,
        mean_drift_db: f64,
    },
}

/// Training history, persisted as one JSON record per line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    /// `(update, loss)` of every update record.
    pub fn losses(&self) -> Vec<(u64, f64)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Update { update, loss, .. } => Some((*update, *loss)),
                _ => None,
            })
            .collect()
    }

    pub fn last_eval(&self) -> Option<&LogRecord> {
        self.records.iter().rev().find(|r| matches!(r, LogRecord::Eval { .. }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Batch loss in normalized units (see [`batch_loss`]).
    pub loss: f64,
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Window-relative index of the first target.
fn first_target(model: &Model) -> usize {
    model.receptive_field().past()
}

fn check_batch(model: &Model, batch: &[Window<'_>], targets: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Shape("empty minibatch".into()));
    }
    let need = model.receptive_field().span(targets);
    if let Some(w) = batch.iter().find(|w| w.span < need) {
        return Err(Error::TooShort {
            what: format!("training window for {targets} targets"),
            required: need,
            actual: w.span,
        });
    }
    Ok(())
}

/// Frames `from..to` (window-relative) of every window, time-major.
fn frames_tensor(batch: &[Window<'_>], from: usize, to: usize, bins: usize) -> Result<Tensor> {
    let frames: Vec<&[f64]> = (from..to).flat_map(|t| batch.iter().map(move |w| w.frame(t))).collect();
    stack_frames(&frames, batch.len(), bins)
}

fn control_windows(model: &Model, batch: &[Window<'_>], first: usize, steps: usize) -> Result<ControlWindows> {
    let items: Vec<(Controls<'_>, isize)> = batch
        .iter()
        .map(|w| (Controls::of(w.seq), (w.start + first) as isize))
        .collect();
    ControlWindows::gather(model.config(), steps, &items)
}

/// Loss in units of the normalized envelope: mean squared error divided by
/// the envelope variance, or mixture NLL of normalized targets.
fn normalized(tape: &mut Tape, model: &Model, loss_db: Var) -> Result<Var> {
    let sd = model.norm().env_sd;
    match model.config().head {
        HeadKind::Mse => tape.scale_shift(loss_db, 1.0 / (sd * sd), 0.0),
        HeadKind::Cgm { .. } => tape.scale_shift(loss_db, 1.0, -sd.ln()),
    }
}

/// Adds independent `N(0, sigma_db^2)` noise in dB to every value. Zero
/// sigma leaves the values and the generator untouched.
pub fn add_history_noise(values: &mut [f64], sigma_db: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if sigma_db == 0.0 {
        return Ok(());
    }
    let dist = Normal::new(0.0, sigma_db).map_err(|e| Error::Config(e.to_string()))?;
    values.iter_mut().for_each(|v| *v += dist.sample(rng));
    Ok(())
}

/// Builds the loss graph of one minibatch. `noise` supplies the history
/// noise of the noise regime.
fn loss_graph(
    tape: &mut Tape,
    model: &Model,
    batch: &[Window<'_>],
    regime: Regime,
    detach_feedback: bool,
    noise: &mut ChaCha8Rng,
    trainable: bool,
) -> Result<Var> {
    regime.validate()?;
    let n = regime.targets();
    check_batch(model, batch, n)?;
    let cfg = model.config();
    let (h, bins, b) = (cfg.history(), cfg.n_bins, batch.len());
    let width = b * bins;
    let first = first_target(model);
    let ctrl = control_windows(model, batch, first, n)?;
    let mut fwd = Forward::new(model, b, trainable);
    let loss_db = match regime {
        Regime::Iterated { .. } => {
            let seed = tape.constant(frames_tensor(batch, first - h, first, bins)?)?;
            let outs = fwd.rollout(tape, seed, &ctrl, |tape, _, out: HeadOut| {
                let p = out.point(tape, &[1, width, 1])?;
                if detach_feedback {
                    tape.detach(p)
                } else {
                    Ok(p)
                }
            })?;
            let mut losses = Vec::with_capacity(n);
            for (i, out) in outs.into_iter().enumerate() {
                let target = tape.constant(frames_tensor(batch, first + i, first + i + 1, bins)?)?;
                losses.push(out.loss(tape, target)?);
            }
            tape.mean(&losses)?
        }
        Regime::Noise { sigma_db } => {
            let mut hist = frames_tensor(batch, first - h, first, bins)?;
            add_history_noise(hist.data_mut(), sigma_db, noise)?;
            let hist = tape.constant(hist)?;
            let out = fwd.teacher(tape, hist, &ctrl)?;
            let target = tape.constant(frames_tensor(batch, first, first + 1, bins)?)?;
            out.loss(tape, target)?
        }
    };
    normalized(tape, model, loss_db)
}

/// Loss of one minibatch without updating anything.
pub fn batch_loss(
    model: &Model,
    batch: &[Window<'_>],
    regime: Regime,
    detach_feedback: bool,
    noise: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = loss_graph(&mut tape, model, batch, regime, detach_feedback, noise, false)?;
    Ok(tape.value(loss).data()[0])
}

/// Loss and per-parameter gradients of one minibatch.
pub fn batch_gradients(
    model: &Model,
    batch: &[Window<'_>],
    regime: Regime,
    detach_feedback: bool,
    noise: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let loss = loss_graph(&mut tape, model, batch, regime, detach_feedback, noise, true)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss, 1.0);
    let mut sink: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    tape.accumulate_param_grads(&grads, &mut sink);
    Ok((value, sink))
}

fn apply(model: &mut Model, adam: &mut AdamState, loss: f64, mut grads: Vec<Vec<f64>>, clip: Option<f64>) -> Result<StepStats> {
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss}")));
    }
    let grad_norm = match clip {
        Some(c) => clip_global_norm(&mut grads, c),
        None => clip_global_norm(&mut grads, f64::INFINITY),
    };
    let lr = adam.update(model.params_mut(), &grads)?;
    Ok(StepStats { loss, lr, grad_norm })
}

/// One Adam update on the mean loss of `n_iter`-frame rollouts.
pub fn train_step_iterated(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &[Window<'_>],
    n_iter: usize,
    clip: Option<f64>,
    detach_feedback: bool,
) -> Result<StepStats> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let regime = Regime::Iterated { n_iter };
    let (loss, grads) = batch_gradients(model, batch, regime, detach_feedback, &mut unused)?;
    apply(model, adam, loss, grads, clip)
}

/// One Adam update on single-frame predictions from noisy histories.
pub fn train_step_noise(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &[Window<'_>],
    sigma_db: f64,
    noise: &mut ChaCha8Rng,
    clip: Option<f64>,
) -> Result<StepStats> {
    let (loss, grads) = batch_gradients(model, batch, Regime::Noise { sigma_db }, false, noise)?;
    apply(model, adam, loss, grads, clip)
}

/// Mean squared dB error of `n_iter`-frame rollouts of any predictor over a
/// minibatch, one frame at a time through [`FramePredictor::predict`].
pub fn predictor_rollout_mse<P: FramePredictor + ?Sized>(
    predictor: &P,
    batch: &[Window<'_>],
    n_iter: usize,
) -> Result<f64> {
    let rf = predictor.receptive_field();
    let bins = predictor.n_bins();
    let first = rf.past();
    let mut sse = 0.0;
    let mut count = 0;
    for w in batch {
        if w.span < rf.span(n_iter) {
            return Err(Error::TooShort {
                what: format!("rollout window for {n_iter} targets"),
                required: rf.span(n_iter),
                actual: w.span,
            });
        }
        let t0 = w.start + first;
        let mut frames = w.seq.frames(0, t0).to_vec();
        for t in t0..t0 + n_iter {
            let input = PredictionInput::at(&frames, bins, Controls::of(w.seq), t, &rf)?;
            let p = predictor.predict(&input)?.point();
            sse += p.iter().zip(w.seq.frame(t)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            count += bins;
            frames.extend(p);
        }
    }
    Ok(sse / count as f64)
}

/// Fails if any held-out phrase index was drawn for training.
pub fn audit_leakage(seen: &BTreeSet<usize>, test: &[usize]) -> Result<()> {
    match test.iter().find(|p| seen.contains(p)) {
        Some(p) => Err(Error::Invalid(format!("held-out phrase {p} appeared in a training minibatch"))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: RunLog,
    pub checkpoints: Vec<PathBuf>,
    /// Phrase indices drawn into any minibatch.
    pub phrases_seen: BTreeSet<usize>,
}

/// Derives an independent stream seed, so the noise draws never shift the
/// minibatch sequence.
fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Trains on the training split of `corpus`. Normalization statistics come
/// from the training split unless the model already carries some. Held-out
/// evaluations run every `eval_every` updates and after the last one; with a
/// `checkpoint_dir` each evaluation also writes a checkpoint.
pub fn train(
    mut model: Model,
    corpus: &[FeatureSequence],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.config().head != cfg.head {
        return Err(Error::Config(format!(
            "training config expects a {:?} head, model has {:?}",
            cfg.head,
            model.config().head
        )));
    }
    let mut outcome = TrainOutcome {
        model: model.clone(),
        log: RunLog::default(),
        checkpoints: Vec::new(),
        phrases_seen: BTreeSet::new(),
    };
    if cfg.max_updates == 0 {
        return Ok(outcome);
    }
    let (train_idx, test_idx) = split_indices(corpus.len());
    if train_idx.is_empty() {
        return Err(Error::EmptySplit);
    }
    if *model.norm() == NormStats::identity() {
        let train_set: Vec<FeatureSequence> = train_idx.iter().map(|&i| corpus[i].clone()).collect();
        model.set_norm(compute_norm_stats(&train_set)?);
    }
    let test: Vec<(usize, &FeatureSequence)> = test_idx.iter().map(|&i| (i, &corpus[i])).collect();
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir)?;
    }

    let span = model.receptive_field().span(cfg.regime.targets());
    let mut batch_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 1));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 2));
    let mut adam = AdamState::new(cfg.adam, model.params());
    let mut last_checkpoint = None;
    for update in 1..=cfg.max_updates {
        let batch = sample_minibatch(corpus, &train_idx, cfg.batch, span, &mut batch_rng)?;
        outcome.phrases_seen.extend(batch.iter().map(|w| w.phrase));
        let step = match cfg.regime {
            Regime::Iterated { n_iter } => {
                train_step_iterated(&mut model, &mut adam, &batch, n_iter, cfg.clip, cfg.detach_feedback)
            }
            Regime::Noise { sigma_db } => {
                train_step_noise(&mut model, &mut adam, &batch, sigma_db, &mut noise_rng, cfg.clip)
            }
        };
        let diverged = |e: Error| match e {
            Error::NonFinite(_) => Error::Divergence {
                update,
                last_checkpoint: last_checkpoint.clone(),
            },
            e => e,
        };
        let stats = step.map_err(diverged)?;
        outcome.log.records.push(LogRecord::Update {
            update,
            lr: stats.lr,
            loss: stats.loss,
            grad_norm: stats.grad_norm,
        });
        let at_eval = (cfg.eval_every > 0 && update % cfg.eval_every == 0) || update == cfg.max_updates;
        if at_eval && !test.is_empty() {
            let report = evaluate(&model, &test, cfg.eval_horizon).map_err(diverged)?;
            let drift_db = if cfg.eval_horizon > 0 { report.drift } else { Vec::new() };
            outcome.log.records.push(LogRecord::Eval {
                update,
                test_mse_db2: report.teacher_forced.mean_mse_db2,
                drift_db,
                mean_drift_db: report.mean_drift,
            });
        }
        if at_eval {
            if let Some(dir) = checkpoint_dir {
                let path = dir.join(format!("checkpoint-{update:06}.json"));
                save_model(&model, &path)?;
                outcome.checkpoints.push(path.clone());
                last_checkpoint = Some(path);
            }
        }
    }
    audit_leakage(&outcome.phrases_seen, &test_idx)?;
    outcome.model = model;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_model, ModelConfig, ToyOracle, Variant};
    use crate::features::{synth_corpus, ToySingerConfig};

    struct Fixture {
        singer: ToySingerConfig,
        corpus: Vec<FeatureSequence>,
        model: Model,
    }

    fn fixture(head: HeadKind) -> Fixture {
        let singer = ToySingerConfig::new(31);
        let corpus = synth_corpus(&singer, 12, 260).unwrap();
        let model = build_model(&ModelConfig::desk().with_head(head), Variant::Proposed, 7)
            .unwrap()
            .with_norm(compute_norm_stats(&corpus).unwrap());
        Fixture { singer, corpus, model }
    }

    fn windows<'a>(f: &'a Fixture, n: usize, span: usize, seed: u64) -> Vec<Window<'a>> {
        let all: Vec<usize> = (0..f.corpus.len()).collect();
        sample_minibatch(&f.corpus, &all, n, span, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(99)
    }

    #[test]
    fn degenerate_regimes_are_teacher_forcing() {
        for head in [HeadKind::Mse, HeadKind::Cgm { components: 3 }] {
            let f = fixture(head);
            let batch = windows(&f, 4, f.model.receptive_field().span(1), 1);
            let it = batch_gradients(&f.model, &batch, Regime::Iterated { n_iter: 1 }, false, &mut rng()).unwrap();
            let nz = batch_gradients(&f.model, &batch, Regime::Noise { sigma_db: 0.0 }, false, &mut rng()).unwrap();
            assert!((it.0 - nz.0).abs() <= 1e-12 * it.0.abs().max(1.0), "{head:?}: {} vs {}", it.0, nz.0);
            for (a, b) in it.1.iter().flatten().zip(nz.1.iter().flatten()) {
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn noise_has_requested_spread() {
        let mut values = vec![0.0; 200_000];
        add_history_noise(&mut values, 12.0, &mut rng()).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 12.0).abs() < 0.05 * 12.0, "sd {sd}");
        let mut untouched = vec![1.5; 10];
        let mut r = rng();
        add_history_noise(&mut untouched, 0.0, &mut r).unwrap();
        assert_eq!(untouched, vec![1.5; 10]);
    }

    #[test]
    fn consecutive_noise_steps_differ() {
        let f = fixture(HeadKind::Mse);
        let batch = windows(&f, 4, f.model.receptive_field().span(1), 2);
        let mut r = rng();
        let a = batch_loss(&f.model, &batch, Regime::NOISE, false, &mut r).unwrap();
        let b = batch_loss(&f.model, &batch, Regime::NOISE, false, &mut r).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn oracle_rollouts_are_exact() {
        let f = fixture(HeadKind::Mse);
        let oracle = ToyOracle {
            singer: f.singer.clone(),
            field: f.model.receptive_field(),
        };
        for n in [1, 5, 24] {
            let batch = windows(&f, 8, oracle.field.span(n), n as u64);
            assert!(predictor_rollout_mse(&oracle, &batch, n).unwrap() < 1e-18);
        }
    }

    #[test]
    fn graph_rollout_matches_frame_by_frame_rollout() {
        let f = fixture(HeadKind::Mse);
        let batch = windows(&f, 3, f.model.receptive_field().span(5), 3);
        let graph = batch_loss(&f.model, &batch, Regime::Iterated { n_iter: 5 }, false, &mut rng()).unwrap();
        let direct = predictor_rollout_mse(&f.model, &batch, 5).unwrap() / f.model.norm().env_sd.powi(2);
        assert!((graph - direct).abs() < 1e-10 * direct, "{graph} vs {direct}");
    }

    #[test]
    fn rollout_reads_history_plus_targets() {
        let f = fixture(HeadKind::Mse);
        let n = 24;
        let span = f.model.receptive_field().span(n);
        let first = f.model.receptive_field().past();
        let base = windows(&f, 1, span, 4)[0];
        let loss_with = |frame: usize| {
            let mut seq = base.seq.clone();
            let t = base.start + frame;
            seq.envelopes[t * 60..(t + 1) * 60].iter_mut().for_each(|v| *v += 3.0);
            let w = Window { seq: &seq, ..base };
            batch_loss(&f.model, &[w], Regime::Iterated { n_iter: n }, false, &mut rng()).unwrap()
        };
        let clean = batch_loss(&f.model, &[base], Regime::Iterated { n_iter: n }, false, &mut rng()).unwrap();
        assert_eq!(loss_with(first - 17), clean);
        assert_eq!(loss_with(first + n), clean);
        assert_ne!(loss_with(first - 16), clean);
        assert_ne!(loss_with(first + n - 1), clean);
    }

    #[test]
    fn short_window_rejected() {
        let f = fixture(HeadKind::Mse);
        let batch = windows(&f, 2, f.model.receptive_field().span(3), 5);
        let err = batch_loss(&f.model, &batch, Regime::Iterated { n_iter: 4 }, false, &mut rng()).unwrap_err();
        assert!(matches!(err, Error::TooShort { .. }));
    }

    #[test]
    fn gradient_flows_through_feedback() {
        let f = fixture(HeadKind::Mse);
        let batch = windows(&f, 2, f.model.receptive_field().span(2), 6);
        let regime = Regime::Iterated { n_iter: 2 };
        let (la, ga) = batch_gradients(&f.model, &batch, regime, false, &mut rng()).unwrap();
        let (lb, gb) = batch_gradients(&f.model, &batch, regime, true, &mut rng()).unwrap();
        assert_eq!(la, lb);
        let diff: f64 = ga.iter().flatten().zip(gb.iter().flatten()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-9);
    }

    #[test]
    fn frozen_batch_loss_falls() {
        let f = fixture(HeadKind::Mse);
        let mut model = f.model.clone();
        let batch = windows(&f, 16, model.receptive_field().span(1), 7);
        let mut adam = AdamState::new(AdamConfig::default(), model.params());
        let losses: Vec<f64> = (0..51)
            .map(|_| train_step_iterated(&mut model, &mut adam, &batch, 1, Some(5.0), false).unwrap().loss)
            .collect();
        let rises = losses.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(rises <= 1, "{losses:?}");
    }

    #[test]
    fn zero_updates_change_nothing() {
        let f = fixture(HeadKind::Mse);
        let cfg = TrainConfig::new(Regime::ITERATED, HeadKind::Mse, 0, 1);
        let out = train(f.model.clone(), &f.corpus, &cfg, None).unwrap();
        assert_eq!(out.model.params(), f.model.params());
        assert!(out.log.records.is_empty());
    }

    #[test]
    fn seeded_runs_repeat_and_never_touch_test_phrases() {
        let f = fixture(HeadKind::Mse);
        let model = build_model(&ModelConfig::desk(), Variant::Proposed, 2).unwrap();
        let mut cfg = TrainConfig::new(Regime::Iterated { n_iter: 2 }, HeadKind::Mse, 4, 11);
        cfg.eval_every = 2;
        cfg.eval_horizon = 10;
        let a = train(model.clone(), &f.corpus, &cfg, None).unwrap();
        let b = train(model, &f.corpus, &cfg, None).unwrap();
        assert_eq!(a.log.to_jsonl().unwrap(), b.log.to_jsonl().unwrap());
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.log.losses().len(), 4);
        assert_eq!(a.log.records.len(), 6);
        let (_, test) = split_indices(f.corpus.len());
        assert!(!test.is_empty());
        audit_leakage(&a.phrases_seen, &test).unwrap();
        assert!(audit_leakage(&BTreeSet::from([test[0]]), &test).is_err());
        assert_eq!(RunLog::from_jsonl(&a.log.to_jsonl().unwrap()).unwrap(), a.log);
    }

    #[test]
    fn mismatched_head_rejected() {
        let f = fixture(HeadKind::Mse);
        let cfg = TrainConfig::new(Regime::NOISE, HeadKind::Cgm { components: 2 }, 1, 0);
        assert!(matches!(train(f.model, &f.corpus, &cfg, None), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_keeps_last_checkpoint() {
        let f = fixture(HeadKind::Mse);
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = TrainConfig::new(Regime::Iterated { n_iter: 1 }, HeadKind::Mse, 50, 3);
        cfg.clip = None;
        cfg.eval_every = 1;
        // The learning rate grows tenfold per update until the model blows up.
        cfg.adam.base_lr = 1e-3;
        cfg.adam.decay = -9.0;
        match train(f.model, &f.corpus, &cfg, Some(dir.path())) {
            Err(Error::Divergence {
                update,
                last_checkpoint: Some(path),
            }) => {
                assert!(update >= 2);
                assert_eq!(path, dir.path().join(format!("checkpoint-{:06}.json", update - 1)));
                crate::arch::load_model(&path).unwrap();
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
