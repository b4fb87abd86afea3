//! Deterministic synthetic singer.
//!
//! Each envelope frame is a closed-form function of the control tracks at
//! (and around) that frame:
//!
//! ```text
//! env[f] = (1 - w) * template[a][f] + w * template[b][f]
//!        + tilt * loudness * f / (B - 1)
//!        + ripple * sin(2 pi * f * f0 / RIPPLE_HZ)
//! ```
//!
//! where `template[p]` is a sum of Gaussian formant bumps over bin index and
//! `w` linearly crossfades from phoneme `a` to `b` across a boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::sequence::{FeatureSequence, N_BINS};

/// f0 (Hz) at which the ripple completes one cycle per bin.
pub const RIPPLE_HZ: f64 = 4000.0;

const TEMPLATE_SEED: u64 = 0x70f5_196e_4a11_d3c5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    /// Center in bin units, within `[0, n_bins - 1]`.
    pub center: f64,
    /// Standard deviation in bins.
    pub width: f64,
    pub height_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySingerConfig {
    pub n_bins: usize,
    pub vocab: usize,
    /// Formant bumps per phoneme.
    pub templates: Vec<Vec<Formant>>,
    /// dB added at the top bin per dB of loudness.
    pub tilt: f64,
    pub ripple_db: f64,
    /// Crossfade length in frames, centered on each phoneme boundary.
    pub crossfade: usize,
    /// Inclusive range of phoneme segment lengths in frames.
    pub segment_frames: (usize, usize),
    pub seed: u64,
}

impl ToySingerConfig {
    /// Ten-phoneme singer with fixed formant templates; `seed` drives the phrases.
    pub fn new(seed: u64) -> Self {
        let vocab = 10;
        Self {
            n_bins: N_BINS,
            vocab,
            templates: default_templates(vocab, N_BINS),
            tilt: 0.3,
            ripple_db: 1.5,
            crossfade: 8,
            segment_frames: (24, 64),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.templates.len() != self.vocab {
            return Err(Error::Config(format!(
                "{} templates for vocabulary of {}",
                self.templates.len(),
                self.vocab
            )));
        }
        if self.crossfade < 1 {
            return Err(Error::Config("crossfade length must be >= 1".into()));
        }
        let (lo, hi) = self.segment_frames;
        if lo <= self.crossfade || hi < lo {
            return Err(Error::Config(format!(
                "segment lengths {lo}..={hi} must exceed the crossfade of {}",
                self.crossfade
            )));
        }
        let top = (self.n_bins - 1) as f64;
        for f in self.templates.iter().flatten() {
            if !(0.0..=top).contains(&f.center) || !(f.width > 0.0) {
                return Err(Error::Config(format!("formant {f:?} outside [0, {top}]")));
            }
        }
        Ok(())
    }

    /// Envelope of phoneme `p` alone, without tilt or ripple.
    pub fn template(&self, p: usize) -> Vec<f64> {
        (0..self.n_bins)
            .map(|f| {
                self.templates[p]
                    .iter()
                    .map(|fm| {
                        let z = (f as f64 - fm.center) / fm.width;
                        fm.height_db * (-0.5 * z * z).exp()
                    })
                    .sum()
            })
            .collect()
    }

    /// Envelope at index `t` of `phonemes` given that frame's f0 and loudness.
    ///
    /// Only boundaries within half a crossfade of `t` matter, so a window of
    /// the phoneme track around `t` suffices.
    pub fn render_frame(&self, phonemes: &[u32], t: usize, f0: f64, loudness: f64) -> Vec<f64> {
        let (a, b, w) = crossfade(phonemes, t, self.crossfade);
        let ta = self.template(a as usize);
        let tb = self.template(b as usize);
        let top = (self.n_bins - 1) as f64;
        (0..self.n_bins)
            .map(|f| {
                let x = f as f64;
                (1.0 - w) * ta[f]
                    + w * tb[f]
                    + self.tilt * loudness * x / top
                    + self.ripple_db * (2.0 * std::f64::consts::PI * x * f0 / RIPPLE_HZ).sin()
            })
            .collect()
    }

    pub fn render(&self, phonemes: &[u32], f0: &[f64], loudness: &[f64]) -> Vec<f64> {
        (0..phonemes.len())
            .flat_map(|t| self.render_frame(phonemes, t, f0[t], loudness[t]))
            .collect()
    }
}

/// `(from, to, weight_of_to)` at frame `t`.
///
/// A boundary sits at the first frame `b` of a new phoneme; frames with
/// `|t - b| <= L / 2` blend with weight `(t - b) / L + 1/2`.
pub fn crossfade(phonemes: &[u32], t: usize, length: usize) -> (u32, u32, f64) {
    let half = length as f64 / 2.0;
    let reach = length.div_ceil(2);
    let lo = t.saturating_sub(reach).max(1);
    let hi = (t + reach).min(phonemes.len().saturating_sub(1));
    for b in lo..=hi {
        if phonemes[b] != phonemes[b - 1] {
            let d = t as f64 - b as f64;
            if d.abs() <= half {
                return (phonemes[b - 1], phonemes[b], d / length as f64 + 0.5);
            }
        }
    }
    (phonemes[t], phonemes[t], 0.0)
}

fn default_templates(vocab: usize, n_bins: usize) -> Vec<Vec<Formant>> {
    let mut rng = ChaCha8Rng::seed_from_u64(TEMPLATE_SEED);
    let scale = (n_bins - 1) as f64 / 59.0;
    let bands = [(4.0, 16.0), (18.0, 34.0), (36.0, 54.0)];
    (0..vocab)
        .map(|_| {
            let n = if rng.random_bool(0.5) { 2 } else { 3 };
            bands[..n]
                .iter()
                .map(|&(lo, hi)| Formant {
                    center: rng.random_range(lo..hi) * scale,
                    width: rng.random_range(2.0..5.0) * scale,
                    height_db: rng.random_range(12.0..32.0),
                })
                .collect()
        })
        .collect()
}

fn synth_phrase(cfg: &ToySingerConfig, len: usize, rng: &mut ChaCha8Rng) -> Result<FeatureSequence> {
    let (seg_lo, seg_hi) = cfg.segment_frames;
    let jitter_f0 = Normal::new(0.0, 0.003).unwrap();
    let jitter_loud = Normal::new(0.0, 0.05).unwrap();

    let mut phonemes = Vec::with_capacity(len);
    let mut current = rng.random_range(0..cfg.vocab) as u32;
    while phonemes.len() < len {
        let seg = rng.random_range(seg_lo..=seg_hi);
        phonemes.extend(std::iter::repeat_n(current, seg.min(len - phonemes.len())));
        if cfg.vocab > 1 {
            let next = rng.random_range(0..cfg.vocab - 1) as u32;
            current = if next >= current { next + 1 } else { next };
        }
    }

    let note = |rng: &mut ChaCha8Rng| (220f64).ln() + rng.random_range(-9..=7) as f64 / 12.0 * 2f64.ln();
    let mut target = note(rng);
    let mut log_f0 = target;
    let mut f0 = Vec::with_capacity(len);
    let mut loud_target = rng.random_range(-24.0..-3.0);
    let mut loud = loud_target;
    let mut loudness = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 && phonemes[t] != phonemes[t - 1] && rng.random_bool(0.6) {
            target = note(rng);
        }
        if rng.random_bool(0.02) {
            loud_target = rng.random_range(-24.0..-3.0);
        }
        log_f0 += 0.12 * (target - log_f0) + jitter_f0.sample(rng);
        loud += 0.04 * (loud_target - loud) + jitter_loud.sample(rng);
        f0.push(log_f0.exp());
        loudness.push(loud);
    }

    let envelopes = cfg.render(&phonemes, &f0, &loudness);
    FeatureSequence::new(envelopes, cfg.n_bins, phonemes, cfg.vocab as u32, f0, loudness)
}

/// Generates `n_phrases` phrases of `phrase_len` frames, deterministically in `cfg.seed`.
pub fn synth_corpus(cfg: &ToySingerConfig, n_phrases: usize, phrase_len: usize) -> Result<Vec<FeatureSequence>> {
    cfg.validate()?;
    if n_phrases == 0 || phrase_len == 0 {
        return Err(Error::Config("corpus needs at least one non-empty phrase".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..n_phrases)
        .map(|_| synth_phrase(cfg, phrase_len, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_corpus() {
        let cfg = ToySingerConfig::new(11);
        assert_eq!(synth_corpus(&cfg, 3, 150).unwrap(), synth_corpus(&cfg, 3, 150).unwrap());
        let other = ToySingerConfig::new(12);
        assert_ne!(synth_corpus(&cfg, 1, 150).unwrap(), synth_corpus(&other, 1, 150).unwrap());
    }

    #[test]
    fn single_phoneme_without_tilt_or_ripple_is_template() {
        let mut cfg = ToySingerConfig::new(5);
        cfg.vocab = 1;
        cfg.templates.truncate(1);
        cfg.tilt = 0.0;
        cfg.ripple_db = 0.0;
        let corpus = synth_corpus(&cfg, 2, 80).unwrap();
        let tpl = cfg.template(0);
        for seq in &corpus {
            for t in 0..seq.len() {
                assert_eq!(seq.frame(t), &tpl[..]);
            }
        }
    }

    #[test]
    fn boundary_midpoint_is_average() {
        let mut cfg = ToySingerConfig::new(1);
        cfg.tilt = 0.0;
        cfg.ripple_db = 0.0;
        let mut ph = vec![2u32; 20];
        ph.extend(vec![7u32; 20]);
        let mid = cfg.render_frame(&ph, 20, 220.0, -10.0);
        let (a, b) = (cfg.template(2), cfg.template(7));
        for f in 0..cfg.n_bins {
            assert!((mid[f] - 0.5 * (a[f] + b[f])).abs() < 1e-12);
        }
        // Outside the crossfade the pure templates are used.
        assert_eq!(cfg.render_frame(&ph, 15, 220.0, -10.0), a);
        assert_eq!(cfg.render_frame(&ph, 24, 220.0, -10.0), b);
    }

    #[test]
    fn crossfade_ramp_is_linear() {
        let ph: Vec<u32> = [vec![0; 30], vec![1; 30]].concat();
        let ws: Vec<f64> = (26..=34).map(|t| crossfade(&ph, t, 8).2).collect();
        let expect: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
        for (w, e) in ws.iter().zip(&expect) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    fn frames_follow_generator_formula() {
        let cfg = ToySingerConfig::new(3);
        let corpus = synth_corpus(&cfg, 2, 200).unwrap();
        for seq in &corpus {
            seq.validate().unwrap();
            let again = cfg.render(&seq.phonemes, &seq.f0, &seq.loudness);
            assert_eq!(again, seq.envelopes);
        }
    }

    #[test]
    fn rejects_crossfade_longer_than_segments() {
        let mut cfg = ToySingerConfig::new(0);
        cfg.crossfade = 30;
        assert!(cfg.validate().is_err());
        cfg.crossfade = 0;
        assert!(cfg.validate().is_err());
    }
}
