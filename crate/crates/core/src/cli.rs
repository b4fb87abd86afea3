//! Command-line surface. Every subcommand writes JSON-lines reports to the
//! given writer; artifacts go to files named by flags.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::arch::{
    build_model, load_model, save_model, FramePredictor, GenerationRequest, HeadKind, ModelConfig, RepeatPrevious,
    ToyOracle, Variant,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, DRIFT_HORIZON};
use crate::features::{
    load_corpus, read_feature_file, split_indices, synth_corpus, write_feature_file, write_manifest, FeatureSequence,
    ToySingerConfig,
};
use crate::losses::Temperature;
use crate::stats::{mos_summary, one_sided_t_test, read_score_file, ScoreRange};
use crate::train::{train, Regime, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "envpred", version, about = "Autoregressive spectral envelope prediction")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

/// Named model setups: architecture, output head and training regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Setup {
    Bb1,
    Bb2,
    Mse,
    Cgm,
    Iter,
    Noise,
}

impl Setup {
    pub fn variant(self) -> Variant {
        match self {
            Setup::Bb1 => Variant::Bb1,
            Setup::Bb2 => Variant::Bb2,
            _ => Variant::Proposed,
        }
    }

    pub fn head(self) -> HeadKind {
        match self {
            Setup::Bb1 | Setup::Bb2 | Setup::Cgm => HeadKind::Cgm { components: 4 },
            Setup::Mse | Setup::Iter | Setup::Noise => HeadKind::Mse,
        }
    }

    pub fn regime(self, n_iter: usize, sigma_db: f64) -> Regime {
        match self {
            Setup::Bb1 | Setup::Bb2 | Setup::Noise => Regime::Noise { sigma_db },
            Setup::Mse | Setup::Cgm | Setup::Iter => Regime::Iterated { n_iter },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Widths small enough for single-core training.
    Desk,
    /// Full channel widths.
    Paper,
}

impl Preset {
    pub fn config(self) -> ModelConfig {
        match self {
            Preset::Desk => ModelConfig::desk(),
            Preset::Paper => ModelConfig::paper(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Test,
    Train,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Range {
    Preference,
    Mos,
}

impl From<Range> for ScoreRange {
    fn from(r: Range) -> Self {
        match r {
            Range::Preference => ScoreRange::Preference,
            Range::Mos => ScoreRange::Mos,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a toy corpus to feature files plus a manifest.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        phrases: usize,
        #[arg(long, default_value_t = 400)]
        frames: usize,
    },
    /// Train one named setup on a corpus manifest.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: Setup,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long, default_value_t = 1000)]
        updates: u64,
        /// Evaluation and checkpoint period; 0 evaluates once at the end.
        #[arg(long, default_value_t = 0)]
        eval_every: u64,
        /// Free-running horizon of evaluations; 0 skips drift.
        #[arg(long, default_value_t = 0)]
        horizon: usize,
        #[arg(long, default_value_t = 24)]
        n_iter: usize,
        #[arg(long, default_value_t = 12.0)]
        sigma_db: f64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Free-run a checkpoint from the controls and first frames of a feature file.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        /// Frames to produce, seeds included; defaults to the input length.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Teacher-forced error and free-running drift over a corpus split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Model checkpoint to score.
        #[arg(long, conflicts_with_all = ["oracle", "repeat_previous"])]
        checkpoint: Option<PathBuf>,
        /// Score the exact generator described by a singer file.
        #[arg(long, conflicts_with = "repeat_previous")]
        oracle: Option<PathBuf>,
        /// Score the repeat-previous-frame baseline.
        #[arg(long)]
        repeat_previous: bool,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long, default_value_t = DRIFT_HORIZON)]
        horizon: usize,
    },
    /// One-sided t-test of mean preference > 0 on a score file.
    Compare {
        scores: PathBuf,
        #[arg(long, value_enum, default_value_t = Range::Preference)]
        range: Range,
    },
    /// Mean opinion score with a t confidence interval.
    Mos {
        scores: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Range::Mos)]
        range: Range,
    },
}

fn emit(out: &mut dyn Write, record: Value) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(&record)?)?;
    Ok(())
}

fn select<'a>(corpus: &'a [FeatureSequence], split: Split) -> Vec<(usize, &'a FeatureSequence)> {
    let (train_idx, test_idx) = split_indices(corpus.len());
    let idx: Vec<usize> = match split {
        Split::Test => test_idx,
        Split::Train => train_idx,
        Split::All => (0..corpus.len()).collect(),
    };
    idx.into_iter().map(|i| (i, &corpus[i])).collect()
}

fn synth_data(out: &mut dyn Write, dir: &Path, phrases: usize, frames: usize, seed: u64) -> Result<()> {
    let singer = ToySingerConfig::new(seed);
    let corpus = synth_corpus(&singer, phrases, frames)?;
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(corpus.len());
    for (i, seq) in corpus.iter().enumerate() {
        let name = PathBuf::from(format!("phrase-{i:04}.fsq"));
        write_feature_file(seq, dir.join(&name))?;
        entries.push(name);
    }
    write_manifest(dir.join("manifest.txt"), &entries)?;
    std::fs::write(dir.join("singer.json"), serde_json::to_string_pretty(&singer)?)?;
    emit(
        out,
        json!({"kind": "synth_data", "seed": seed, "phrases": phrases, "frames": phrases * frames,
               "manifest": dir.join("manifest.txt")}),
    )
}

fn eval_report(out: &mut dyn Write, p: &dyn FramePredictor, split: &[(usize, &FeatureSequence)], horizon: usize) -> Result<()> {
    let report = evaluate(p, split, horizon)?;
    for e in &report.teacher_forced.phrases {
        emit(out, json!({"kind": "phrase", "phrase": e.phrase, "frames": e.frames, "mse_db2": e.mse_db2}))?;
    }
    let at_horizon = report.drift.last().copied().unwrap_or(0.0);
    emit(
        out,
        json!({"kind": "eval", "phrases": split.len(), "mse_db2": report.teacher_forced.mean_mse_db2,
               "horizon": horizon, "drift_db": report.drift, "mean_drift_db": report.mean_drift,
               "drift_at_horizon_db": at_horizon}),
    )
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            write!(out, "{e}")?;
            return Ok(());
        }
        Err(e) => return Err(Error::Usage(e.to_string())),
    };
    execute(cli, out)
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::SynthData { out: dir, phrases, frames } => synth_data(out, &dir, phrases, frames, seed),
        Command::Train {
            data,
            model,
            out: dir,
            preset,
            updates,
            eval_every,
            horizon,
            n_iter,
            sigma_db,
            batch,
        } => {
            let corpus = load_corpus(&data)?;
            let cfg = preset.config().with_head(model.head());
            let net = build_model(&cfg, model.variant(), seed)?;
            let mut tc = TrainConfig::new(model.regime(n_iter, sigma_db), model.head(), updates, seed);
            tc.eval_every = eval_every;
            tc.eval_horizon = horizon;
            tc.batch = batch;
            std::fs::create_dir_all(&dir)?;
            let outcome = train(net, &corpus, &tc, Some(&dir))?;
            outcome.log.write(dir.join("run.jsonl"))?;
            save_model(&outcome.model, dir.join("model.json"))?;
            let last = outcome.log.last_eval().cloned();
            emit(
                out,
                json!({"kind": "train", "model": format!("{model:?}").to_lowercase(), "seed": seed,
                       "updates": updates, "checkpoints": outcome.checkpoints.len(),
                       "final_loss": outcome.log.losses().last().copied(), "last_eval": last,
                       "model_path": dir.join("model.json")}),
            )
        }
        Command::Generate { checkpoint, input, out: path, tau, frames } => {
            let model = load_model(&checkpoint)?;
            let seq = read_feature_file(&input)?;
            let h = model.receptive_field().history();
            let mut req = GenerationRequest::from_sequence(&seq, h, Temperature::new(tau)?, seed)?;
            if let Some(n) = frames {
                req = req.with_frames(n);
            }
            let envelopes = model.generate(&req)?;
            let n = req.len();
            let generated = FeatureSequence::new(
                envelopes,
                seq.n_bins,
                seq.phonemes[..n].to_vec(),
                seq.vocab,
                seq.f0[..n].to_vec(),
                seq.loudness[..n].to_vec(),
            )?;
            write_feature_file(&generated, &path)?;
            let mad = generated.envelopes.iter().zip(&seq.envelopes).map(|(a, b)| (a - b).abs()).sum::<f64>()
                / generated.envelopes.len() as f64;
            emit(
                out,
                json!({"kind": "generate", "seed": seed, "tau": tau, "frames": n,
                       "mean_abs_diff_db": mad, "out": path}),
            )
        }
        Command::Eval {
            data,
            checkpoint,
            oracle,
            repeat_previous,
            split,
            horizon,
        } => {
            let corpus = load_corpus(&data)?;
            let split = select(&corpus, split);
            let field = ModelConfig::desk().receptive_field();
            let bins = corpus.first().map(|s| s.n_bins).unwrap_or(0);
            match (checkpoint, oracle, repeat_previous) {
                (Some(path), None, false) => eval_report(out, &load_model(path)?, &split, horizon),
                (None, Some(path), false) => {
                    let singer: ToySingerConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                    eval_report(out, &ToyOracle { singer, field }, &split, horizon)
                }
                (None, None, true) => eval_report(out, &RepeatPrevious { field, bins }, &split, horizon),
                _ => Err(Error::Usage(
                    "eval needs exactly one of --checkpoint, --oracle or --repeat-previous".into(),
                )),
            }
        }
        Command::Compare { scores, range } => {
            let set = read_score_file(&scores, range.into())?;
            let r = one_sided_t_test(&set)?;
            emit(out, json!({"kind": "compare", "label": set.label, "n": r.n, "mean": r.mean, "t": r.t, "p": r.p}))
        }
        Command::Mos { scores, alpha, range } => {
            let set = read_score_file(&scores, range.into())?;
            let r = mos_summary(&set, alpha)?;
            emit(
                out,
                json!({"kind": "mos", "label": set.label, "n": r.n, "mean": r.mean,
                       "half_width": r.half_width, "alpha": r.alpha}),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setups_follow_the_model_table() {
        let row = |s: Setup| (s.variant(), s.head() == HeadKind::Mse, s.regime(24, 12.0));
        assert_eq!(row(Setup::Bb1), (Variant::Bb1, false, Regime::NOISE));
        assert_eq!(row(Setup::Bb2), (Variant::Bb2, false, Regime::NOISE));
        assert_eq!(row(Setup::Mse), (Variant::Proposed, true, Regime::ITERATED));
        assert_eq!(row(Setup::Cgm), (Variant::Proposed, false, Regime::ITERATED));
        assert_eq!(row(Setup::Iter), (Variant::Proposed, true, Regime::ITERATED));
        assert_eq!(row(Setup::Noise), (Variant::Proposed, true, Regime::NOISE));
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        let mut sink = Vec::new();
        assert!(matches!(run(["envpred", "fly"], &mut sink), Err(Error::Usage(_))));
        assert!(matches!(run(["envpred", "mos", "x", "--bogus"], &mut sink), Err(Error::Usage(_))));
    }
}
