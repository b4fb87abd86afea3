//! Train/test split and random minibatch windows.

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::sequence::FeatureSequence;

/// Contiguous frames `start..start + span` of one phrase.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    pub phrase: usize,
    pub start: usize,
    pub span: usize,
    pub seq: &'a FeatureSequence,
}

impl<'a> Window<'a> {
    /// Envelope frames `start+from .. start+to`, frame-major.
    pub fn envelopes(&self, from: usize, to: usize) -> &'a [f64] {
        self.seq.frames(self.start + from, self.start + to)
    }

    pub fn frame(&self, t: usize) -> &'a [f64] {
        self.seq.frame(self.start + t)
    }

    pub fn phonemes(&self) -> &'a [u32] {
        &self.seq.phonemes[self.start..self.start + self.span]
    }

    pub fn f0(&self) -> &'a [f64] {
        &self.seq.f0[self.start..self.start + self.span]
    }

    pub fn loudness(&self) -> &'a [f64] {
        &self.seq.loudness[self.start..self.start + self.span]
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Held-out phrases: those whose index hashes into the lowest tenth.
pub fn is_test_phrase(index: usize) -> bool {
    splitmix64(index as u64) % 10 == 0
}

/// `(train, test)` phrase indices for a corpus of `n` phrases.
pub fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|&i| !is_test_phrase(i))
}

/// Draws `batch` windows of `span` frames from the phrases in `allowed`.
///
/// Every valid `(phrase, start)` pair is equally likely. Windows never cross
/// phrase boundaries.
pub fn sample_minibatch<'a, R: Rng + ?Sized>(
    corpus: &'a [FeatureSequence],
    allowed: &[usize],
    batch: usize,
    span: usize,
    rng: &mut R,
) -> Result<Vec<Window<'a>>> {
    let starts: Vec<(usize, usize)> = allowed
        .iter()
        .filter_map(|&p| {
            let len = corpus[p].len();
            (len >= span && span > 0).then(|| (p, len - span + 1))
        })
        .collect();
    let total: usize = starts.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::NoUsablePhrase {
            span,
            longest: allowed.iter().map(|&p| corpus[p].len()).max().unwrap_or(0),
        });
    }
    (0..batch)
        .map(|_| {
            let mut u = rng.random_range(0..total);
            for &(phrase, n) in &starts {
                if u < n {
                    return Ok(Window {
                        phrase,
                        start: u,
                        span,
                        seq: &corpus[phrase],
                    });
                }
                u -= n;
            }
            unreachable!("index below total")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::toy::{synth_corpus, ToySingerConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batch_has_requested_size_and_stays_inside() {
        let corpus = synth_corpus(&ToySingerConfig::new(1), 5, 100).unwrap();
        let all: Vec<usize> = (0..5).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_minibatch(&corpus, &all, 16, 40, &mut rng).unwrap();
        assert_eq!(b.len(), 16);
        for w in &b {
            assert!(w.start + w.span <= corpus[w.phrase].len());
            assert_eq!(w.phonemes().len(), 40);
        }
    }

    #[test]
    fn full_length_span_starts_at_zero() {
        let corpus = synth_corpus(&ToySingerConfig::new(1), 3, 90).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = sample_minibatch(&corpus, &[0, 1, 2], 32, 90, &mut rng).unwrap();
        assert!(b.iter().all(|w| w.start == 0));
    }

    #[test]
    fn seeded_sampling_repeats() {
        let corpus = synth_corpus(&ToySingerConfig::new(1), 4, 120).unwrap();
        let pick = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_minibatch(&corpus, &[0, 1, 2, 3], 16, 50, &mut rng)
                .unwrap()
                .iter()
                .map(|w| (w.phrase, w.start))
                .collect::<Vec<_>>()
        };
        assert_eq!(pick(5), pick(5));
        assert_ne!(pick(5), pick(6));
    }

    #[test]
    fn too_long_span_errors() {
        let corpus = synth_corpus(&ToySingerConfig::new(1), 2, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_minibatch(&corpus, &[0, 1], 16, 51, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NoUsablePhrase { span: 51, longest: 50 }));
    }

    #[test]
    fn split_is_roughly_ninety_ten_and_disjoint() {
        let (train, test) = split_indices(1000);
        assert_eq!(train.len() + test.len(), 1000);
        assert!((60..=140).contains(&test.len()), "{}", test.len());
        assert!(test.iter().all(|i| !train.contains(i)));
    }
}
