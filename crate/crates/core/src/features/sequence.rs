//! Frame-synchronous feature tracks and their `.fsq` binary encoding.
//!
//! Layout (all integers and floats little endian):
//!
//! ```text
//! magic      8 bytes  "ENVFSEQ\0"
//! version    u32      1
//! frame_rate u32      200
//! frames     u64      T
//! vocab      u32      V
//! n_bins     u32      B
//! envelopes  u64 count (= T*B), then count f64, frame-major
//! phonemes   u64 count (= T),   then count u32
//! f0         u64 count (= T),   then count f64 (Hz)
//! loudness   u64 count (= T),   then count f64 (dB)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const FRAME_RATE_HZ: u32 = 200;
pub const N_BINS: usize = 60;
pub const MAGIC: [u8; 8] = *b"ENVFSEQ\0";
pub const FORMAT_VERSION: u32 = 1;

/// Time-aligned envelope and control tracks of one phrase.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    /// `T x n_bins` log amplitudes in dB, frame-major.
    pub envelopes: Vec<f64>,
    pub n_bins: usize,
    pub phonemes: Vec<u32>,
    pub vocab: u32,
    /// Fundamental frequency in Hz, strictly positive.
    pub f0: Vec<f64>,
    pub loudness: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(
        envelopes: Vec<f64>,
        n_bins: usize,
        phonemes: Vec<u32>,
        vocab: u32,
        f0: Vec<f64>,
        loudness: Vec<f64>,
    ) -> Result<Self> {
        let seq = Self {
            envelopes,
            n_bins,
            phonemes,
            vocab,
            f0,
            loudness,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.envelopes[t * self.n_bins..(t + 1) * self.n_bins]
    }

    /// Frames `start..end`, frame-major.
    pub fn frames(&self, start: usize, end: usize) -> &[f64] {
        &self.envelopes[start * self.n_bins..end * self.n_bins]
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.phonemes.len();
        if self.n_bins == 0 {
            return Err(Error::Invalid("zero frequency bins".into()));
        }
        if self.envelopes.len() != t * self.n_bins {
            return Err(Error::LengthMismatch {
                track: "envelopes",
                expected: t * self.n_bins,
                found: self.envelopes.len(),
            });
        }
        if self.f0.len() != t {
            return Err(Error::LengthMismatch {
                track: "f0",
                expected: t,
                found: self.f0.len(),
            });
        }
        if self.loudness.len() != t {
            return Err(Error::LengthMismatch {
                track: "loudness",
                expected: t,
                found: self.loudness.len(),
            });
        }
        if self.envelopes.iter().chain(&self.loudness).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature sequence".into()));
        }
        if let Some(bad) = self.f0.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "f0 must be positive everywhere (got {bad}); interpolate unvoiced frames first"
            )));
        }
        if let Some(&id) = self.phonemes.iter().find(|&&p| p >= self.vocab) {
            return Err(Error::IdOutOfRange {
                id: id as usize,
                vocab: self.vocab as usize,
            });
        }
        Ok(())
    }
}

pub fn encode(seq: &FeatureSequence) -> Vec<u8> {
    let t = seq.len();
    let mut out = Vec::with_capacity(48 + seq.envelopes.len() * 8 + t * 20);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&FRAME_RATE_HZ.to_le_bytes());
    out.extend_from_slice(&(t as u64).to_le_bytes());
    out.extend_from_slice(&seq.vocab.to_le_bytes());
    out.extend_from_slice(&(seq.n_bins as u32).to_le_bytes());
    out.extend_from_slice(&(seq.envelopes.len() as u64).to_le_bytes());
    seq.envelopes
        .iter()
        .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out.extend_from_slice(&(t as u64).to_le_bytes());
    seq.phonemes
        .iter()
        .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    for track in [&seq.f0, &seq.loudness] {
        out.extend_from_slice(&(track.len() as u64).to_le_bytes());
        track.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{what}: needs {n} bytes at offset {}, {} remain",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn count(&mut self, track: &'static str, expected: usize) -> Result<usize> {
        let found = self.u64(track)? as usize;
        if found != expected {
            return Err(Error::LengthMismatch {
                track,
                expected,
                found,
            });
        }
        Ok(found)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Truncated(what.into()))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<FeatureSequence> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic").map_err(|_| Error::BadMagic)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let rate = r.u32("frame rate")?;
    if rate != FRAME_RATE_HZ {
        return Err(Error::Invalid(format!("frame rate {rate} Hz, expected {FRAME_RATE_HZ}")));
    }
    let t = r.u64("frame count")? as usize;
    let vocab = r.u32("vocabulary size")?;
    let n_bins = r.u32("bin count")? as usize;

    let n = r.count("envelopes", t * n_bins)?;
    let envelopes = r.f64s(n, "envelopes")?;
    let n = r.count("phonemes", t)?;
    let phonemes = r
        .take(n * 4, "phonemes")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let n = r.count("f0", t)?;
    let f0 = r.f64s(n, "f0")?;
    let n = r.count("loudness", t)?;
    let loudness = r.f64s(n, "loudness")?;
    if r.pos != bytes.len() {
        return Err(Error::Invalid(format!(
            "{} trailing bytes after loudness track",
            bytes.len() - r.pos
        )));
    }
    FeatureSequence::new(envelopes, n_bins, phonemes, vocab, f0, loudness)
}

pub fn write_feature_file(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(seq))?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    decode(&fs::read(path)?)
}

/// Reads a manifest: one feature file path per line, relative paths resolved
/// against the manifest's directory. Blank lines and `#` comments are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = Path::new(l);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        })
        .collect())
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[PathBuf]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&e.to_string_lossy());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn load_corpus(manifest: impl AsRef<Path>) -> Result<Vec<FeatureSequence>> {
    read_manifest(manifest)?
        .iter()
        .map(read_feature_file)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FeatureSequence {
        FeatureSequence::new(
            (0..6).map(|i| i as f64 * 0.5).collect(),
            3,
            vec![0, 1],
            2,
            vec![220.0, 221.5],
            vec![-6.0, -5.5],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let s = small();
        assert_eq!(decode(&encode(&s)).unwrap(), s);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode(&small());
        bytes[0] ^= 0xff;
        assert!(matches!(decode(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&small());
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
    }

    #[test]
    fn short_phoneme_track() {
        // Re-encode by hand with one phoneme dropped.
        let s = small();
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&FRAME_RATE_HZ.to_le_bytes());
        out.extend_from_slice(&2u64.to_le_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        out.extend_from_slice(&6u64.to_le_bytes());
        s.envelopes.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend_from_slice(&1u64.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        let err = decode(&out).unwrap_err();
        assert!(matches!(
            err,
            Error::LengthMismatch {
                track: "phonemes",
                expected: 2,
                found: 1
            }
        ));
    }

    #[test]
    fn rejects_non_positive_f0() {
        let err = FeatureSequence::new(vec![0.0; 3], 3, vec![0], 1, vec![0.0], vec![0.0]).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.txt");
        std::fs::write(&m, "# corpus\na.fsq\n\n/abs/b.fsq\n").unwrap();
        let paths = read_manifest(&m).unwrap();
        assert_eq!(paths, vec![dir.path().join("a.fsq"), PathBuf::from("/abs/b.fsq")]);
    }
}
