use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::sequence::FeatureSequence;

/// Per-track standardization. Envelope statistics are shared across all bins
/// and f0 is standardized on natural-log Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub env_mean: f64,
    pub env_sd: f64,
    pub log_f0_mean: f64,
    pub log_f0_sd: f64,
    pub loudness_mean: f64,
    pub loudness_sd: f64,
}

impl NormStats {
    /// Leaves envelopes and loudness unchanged; f0 becomes `ln(hz)`.
    pub fn identity() -> Self {
        Self {
            env_mean: 0.0,
            env_sd: 1.0,
            log_f0_mean: 0.0,
            log_f0_sd: 1.0,
            loudness_mean: 0.0,
            loudness_sd: 1.0,
        }
    }

    pub fn env(&self, db: f64) -> f64 {
        (db - self.env_mean) / self.env_sd
    }

    pub fn env_inv(&self, z: f64) -> f64 {
        z * self.env_sd + self.env_mean
    }

    pub fn f0(&self, hz: f64) -> f64 {
        (hz.ln() - self.log_f0_mean) / self.log_f0_sd
    }

    pub fn f0_inv(&self, z: f64) -> f64 {
        (z * self.log_f0_sd + self.log_f0_mean).exp()
    }

    pub fn loudness(&self, db: f64) -> f64 {
        (db - self.loudness_mean) / self.loudness_sd
    }

    pub fn loudness_inv(&self, z: f64) -> f64 {
        z * self.loudness_sd + self.loudness_mean
    }
}

fn mean_sd<'a>(values: impl Iterator<Item = &'a f64> + Clone, what: &str) -> Result<(f64, f64)> {
    let n = values.clone().count();
    if n == 0 {
        return Err(Error::EmptySplit);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance(what.to_string()));
    }
    Ok((mean, var.sqrt()))
}

/// Population mean and standard deviation of every track over `corpus`.
pub fn compute_norm_stats(corpus: &[FeatureSequence]) -> Result<NormStats> {
    if corpus.is_empty() {
        return Err(Error::EmptySplit);
    }
    let (env_mean, env_sd) = mean_sd(corpus.iter().flat_map(|s| s.envelopes.iter()), "envelopes")?;
    let log_f0: Vec<f64> = corpus.iter().flat_map(|s| s.f0.iter().map(|f| f.ln())).collect();
    let (log_f0_mean, log_f0_sd) = mean_sd(log_f0.iter(), "log f0")?;
    let (loudness_mean, loudness_sd) = mean_sd(corpus.iter().flat_map(|s| s.loudness.iter()), "loudness")?;
    Ok(NormStats {
        env_mean,
        env_sd,
        log_f0_mean,
        log_f0_sd,
        loudness_mean,
        loudness_sd,
    })
}

/// A feature sequence in standardized units.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSequence {
    pub envelopes: Vec<f64>,
    pub n_bins: usize,
    pub phonemes: Vec<u32>,
    pub vocab: u32,
    pub f0: Vec<f64>,
    pub loudness: Vec<f64>,
}

pub fn apply_norm(stats: &NormStats, seq: &FeatureSequence) -> NormalizedSequence {
    NormalizedSequence {
        envelopes: seq.envelopes.iter().map(|&v| stats.env(v)).collect(),
        n_bins: seq.n_bins,
        phonemes: seq.phonemes.clone(),
        vocab: seq.vocab,
        f0: seq.f0.iter().map(|&v| stats.f0(v)).collect(),
        loudness: seq.loudness.iter().map(|&v| stats.loudness(v)).collect(),
    }
}

pub fn invert_norm(stats: &NormStats, seq: &NormalizedSequence) -> Result<FeatureSequence> {
    FeatureSequence::new(
        seq.envelopes.iter().map(|&v| stats.env_inv(v)).collect(),
        seq.n_bins,
        seq.phonemes.clone(),
        seq.vocab,
        seq.f0.iter().map(|&v| stats.f0_inv(v)).collect(),
        seq.loudness.iter().map(|&v| stats.loudness_inv(v)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::toy::{synth_corpus, ToySingerConfig};

    #[test]
    fn round_trip_within_tolerance() {
        let corpus = synth_corpus(&ToySingerConfig::new(4), 4, 120).unwrap();
        let stats = compute_norm_stats(&corpus).unwrap();
        for seq in &corpus {
            let back = invert_norm(&stats, &apply_norm(&stats, seq)).unwrap();
            for (a, b) in back
                .envelopes
                .iter()
                .chain(&back.f0)
                .chain(&back.loudness)
                .zip(seq.envelopes.iter().chain(&seq.f0).chain(&seq.loudness))
            {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn normalized_tracks_are_standard() {
        let corpus = synth_corpus(&ToySingerConfig::new(4), 6, 120).unwrap();
        let stats = compute_norm_stats(&corpus).unwrap();
        let env: Vec<f64> = corpus
            .iter()
            .flat_map(|s| apply_norm(&stats, s).envelopes)
            .collect();
        let m = env.iter().sum::<f64>() / env.len() as f64;
        let sd = (env.iter().map(|v| (v - m).powi(2)).sum::<f64>() / env.len() as f64).sqrt();
        assert!(m.abs() < 1e-10);
        assert!((sd - 1.0).abs() < 1e-10);
    }

    #[test]
    fn known_mean_and_sd() {
        // Envelopes alternate 3 and 7: mean 5, population sd 2.
        let env: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 3.0 } else { 7.0 }).collect();
        let seq = FeatureSequence::new(env, 2, vec![0; 4], 1, vec![100.0, 200.0, 100.0, 200.0], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let stats = compute_norm_stats(&[seq]).unwrap();
        assert!((stats.env_mean - 5.0).abs() < 1e-15);
        assert!((stats.env_sd - 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_track_rejected() {
        let seq = FeatureSequence::new(vec![1.0, 2.0], 1, vec![0, 0], 1, vec![220.0, 230.0], vec![-3.0, -3.0]).unwrap();
        assert!(matches!(compute_norm_stats(&[seq]), Err(Error::ZeroVariance(w)) if w == "loudness"));
    }
}
