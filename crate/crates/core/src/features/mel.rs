use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies of the envelope bins.
#[derive(Clone, Debug, PartialEq)]
pub struct MelGrid {
    pub n_bins: usize,
    pub f_max: f64,
    pub centers: Vec<f64>,
}

/// Bin centers equally spaced on the mel axis strictly inside `(0, mel(f_max))`.
///
/// The interval is divided into `n_bins + 1` equal steps and the interior
/// points are used, which keeps every center below `f_max`.
pub fn mel_grid(n_bins: usize, f_max: f64) -> Result<MelGrid> {
    if n_bins < 2 {
        return Err(Error::Config(format!("mel grid needs at least 2 bins, got {n_bins}")));
    }
    if !(f_max > 0.0) || !f_max.is_finite() {
        return Err(Error::Config(format!("f_max must be positive, got {f_max}")));
    }
    let top = hz_to_mel(f_max);
    let step = top / (n_bins + 1) as f64;
    let centers = (1..=n_bins).map(|i| mel_to_hz(step * i as f64)).collect();
    Ok(MelGrid {
        n_bins,
        f_max,
        centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_reference_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
    }

    #[test]
    fn grid_is_ascending_and_bounded() {
        let g = mel_grid(60, 8000.0).unwrap();
        assert_eq!(g.centers.len(), 60);
        assert!(g.centers.windows(2).all(|w| w[1] > w[0]));
        assert!(g.centers[0] > 0.0);
        assert!(g.centers[59] <= 8000.0);
    }

    #[test]
    fn grid_equal_mel_spacing() {
        let g = mel_grid(60, 8000.0).unwrap();
        let mels: Vec<f64> = g.centers.iter().map(|&f| hz_to_mel(f)).collect();
        let d0 = mels[1] - mels[0];
        for w in mels.windows(2) {
            assert!((w[1] - w[0] - d0).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(mel_grid(1, 8000.0).is_err());
        assert!(mel_grid(60, 0.0).is_err());
    }
}
