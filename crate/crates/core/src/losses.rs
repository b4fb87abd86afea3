//! Objectives on log-amplitude frames: mean squared error and a per-bin
//! Gaussian mixture with temperature-controlled sampling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Lower bound on mixture component scales, in dB.
pub const SIGMA_MIN_DB: f64 = 0.01;

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "mse_loss: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Unnormalized component log-densities `l_k - log s_k - (x-mu_k)^2 / 2s_k^2`.
fn component_terms(logits: &[f64], means: &[f64], scales: &[f64], x: f64) -> Vec<f64> {
    logits
        .iter()
        .zip(means)
        .zip(scales)
        .map(|((l, m), s)| {
            let z = (x - m) / s;
            l - s.ln() - 0.5 * z * z
        })
        .collect()
}

/// Negative log-likelihood of `x` under one bin's mixture.
pub(crate) fn bin_nll(logits: &[f64], means: &[f64], scales: &[f64], x: f64) -> f64 {
    let a = component_terms(logits, means, scales, x);
    log_sum_exp(logits) - log_sum_exp(&a) + HALF_LN_2PI
}

/// Accumulates `scale * d nll / d(params)` into the gradient slices and
/// returns `scale * d nll / dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bin_nll_grad(
    logits: &[f64],
    means: &[f64],
    scales: &[f64],
    x: f64,
    scale: f64,
    g_logits: &mut [f64],
    g_means: &mut [f64],
    g_scales: &mut [f64],
) -> f64 {
    let a = component_terms(logits, means, scales, x);
    let resp = softmax(&a);
    let w = softmax(logits);
    let mut gx = 0.0;
    for k in 0..logits.len() {
        let s = scales[k];
        let d = x - means[k];
        g_logits[k] += scale * (w[k] - resp[k]);
        g_means[k] -= scale * resp[k] * d / (s * s);
        g_scales[k] += scale * resp[k] * (1.0 / s - d * d / (s * s * s));
        gx += resp[k] * d / (s * s);
    }
    scale * gx
}

/// Independent mixtures, one per frequency bin, each with `k` components.
///
/// Values are stored bin-major: entry `bin * k + j` belongs to component `j`
/// of `bin`. Means and scales are absolute, in dB.
#[derive(Clone, Debug, PartialEq)]
pub struct CgmParams {
    k: usize,
    logits: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl CgmParams {
    pub fn new(k: usize, logits: Vec<f64>, means: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        if k == 0 || logits.is_empty() || logits.len() % k != 0 {
            return Err(Error::Shape(format!(
                "mixture with K={k} cannot hold {} logits",
                logits.len()
            )));
        }
        if means.len() != logits.len() || scales.len() != logits.len() {
            return Err(Error::Shape("mixture parameter blocks differ in length".into()));
        }
        if logits.iter().chain(&means).chain(&scales).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixture parameters".into()));
        }
        if scales.iter().any(|&s| s <= 0.0) {
            return Err(Error::Invalid("mixture scales must be positive".into()));
        }
        Ok(Self {
            k,
            logits,
            means,
            scales,
        })
    }

    /// Unpacks rows of `[logits | means | scales]`, one row per bin.
    pub fn from_packed(k: usize, packed: &[f64]) -> Result<Self> {
        if k == 0 || packed.len() % (3 * k) != 0 {
            return Err(Error::Shape(format!(
                "packed mixture of {} values is not a multiple of 3K={}",
                packed.len(),
                3 * k
            )));
        }
        let mut logits = Vec::new();
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for row in packed.chunks_exact(3 * k) {
            logits.extend_from_slice(&row[..k]);
            means.extend_from_slice(&row[k..2 * k]);
            scales.extend_from_slice(&row[2 * k..]);
        }
        Self::new(k, logits, means, scales)
    }

    pub fn components(&self) -> usize {
        self.k
    }

    pub fn n_bins(&self) -> usize {
        self.logits.len() / self.k
    }

    fn block<'a>(&self, v: &'a [f64], bin: usize) -> &'a [f64] {
        &v[bin * self.k..(bin + 1) * self.k]
    }

    pub fn logits(&self, bin: usize) -> &[f64] {
        self.block(&self.logits, bin)
    }

    pub fn means(&self, bin: usize) -> &[f64] {
        self.block(&self.means, bin)
    }

    pub fn scales(&self, bin: usize) -> &[f64] {
        self.block(&self.scales, bin)
    }

    pub fn weights(&self, bin: usize) -> Vec<f64> {
        softmax(self.logits(bin))
    }

    pub fn mixture_mean(&self, bin: usize) -> f64 {
        self.weights(bin)
            .iter()
            .zip(self.means(bin))
            .map(|(w, m)| w * m)
            .sum()
    }

    /// Variance of the mixture in `bin` when every scale is multiplied by `tau`
    /// and weights are sharpened to `w^(1/tau)`.
    pub fn tempered_variance(&self, bin: usize, tau: f64) -> f64 {
        let w = tempered_weights(self.logits(bin), tau);
        let mean: f64 = w.iter().zip(self.means(bin)).map(|(w, m)| w * m).sum();
        w.iter()
            .zip(self.means(bin))
            .zip(self.scales(bin))
            .map(|((w, m), s)| w * ((tau * s).powi(2) + (m - mean).powi(2)))
            .sum()
    }

    /// Mean of the highest-weight component in every bin.
    pub fn mode(&self) -> Vec<f64> {
        (0..self.n_bins())
            .map(|b| self.means(b)[crate::autodiff::tape::argmax(self.logits(b))])
            .collect()
    }
}

/// Sampling temperature, `tau >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub const ZERO: Temperature = Temperature(0.0);

    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau >= 0.0 {
            Ok(Self(tau))
        } else {
            Err(Error::Invalid(format!("temperature must be finite and >= 0, got {tau}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn tempered_weights(logits: &[f64], tau: f64) -> Vec<f64> {
    if tau == 0.0 {
        let mut w = vec![0.0; logits.len()];
        w[crate::autodiff::tape::argmax(logits)] = 1.0;
        w
    } else {
        // w^(1/tau), renormalized, is the softmax of logits / tau.
        softmax(&logits.iter().map(|l| l / tau).collect::<Vec<_>>())
    }
}

/// Mean negative log-likelihood over bins.
pub fn cgm_nll(params: &CgmParams, target: &[f64]) -> Result<f64> {
    if target.len() != params.n_bins() {
        return Err(Error::Shape(format!(
            "cgm_nll: {} targets for {} bins",
            target.len(),
            params.n_bins()
        )));
    }
    if target.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("cgm_nll target".into()));
    }
    let total: f64 = target
        .iter()
        .enumerate()
        .map(|(b, &x)| bin_nll(params.logits(b), params.means(b), params.scales(b), x))
        .sum();
    Ok(total / target.len() as f64)
}

/// Draws one frame. At `tau = 0` the result is the per-bin mode and `rng` is
/// not touched.
pub fn cgm_sample<R: Rng + ?Sized>(params: &CgmParams, tau: Temperature, rng: &mut R) -> Vec<f64> {
    let tau = tau.value();
    if tau == 0.0 {
        return params.mode();
    }
    (0..params.n_bins())
        .map(|b| {
            let w = tempered_weights(params.logits(b), tau);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut j = w.len() - 1;
            for (i, wi) in w.iter().enumerate() {
                acc += wi;
                if u < acc {
                    j = i;
                    break;
                }
            }
            let z: f64 = StandardNormal.sample(rng);
            params.means(b)[j] + tau * params.scales(b)[j] * z
        })
        .collect()
}
