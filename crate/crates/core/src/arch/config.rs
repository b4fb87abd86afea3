use serde::{Deserialize, Serialize};

use crate::autodiff::ActivationKind;
use crate::error::{Error, Result};
use crate::features::N_BINS;
use crate::losses::SIGMA_MIN_DB;

/// Output parameterization per frequency bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadKind {
    /// One value: the change from the previous frame.
    Mse,
    /// `components` weight logits, mean offsets and log scales.
    Cgm { components: usize },
}

impl HeadKind {
    pub fn outputs_per_bin(self) -> usize {
        match self {
            HeadKind::Mse => 1,
            HeadKind::Cgm { components } => 3 * components,
        }
    }

    pub fn cgm(self) -> Option<usize> {
        match self {
            HeadKind::Mse => None,
            HeadKind::Cgm { components } => Some(components),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// 2d time stacks per input, DenseNet frequency stacks.
    Proposed,
    /// 1d causal/centered dilated stacks with the bins as channels.
    Bb1,
    /// The same stacks with `(2 x 3)` kernels over time and frequency.
    Bb2,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::Bb1 => "bb1",
            Variant::Bb2 => "bb2",
        }
    }
}

/// `(past, future)` frames around the predicted frame that reach the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptiveField {
    pub envelope: (usize, usize),
    pub phoneme: (usize, usize),
    pub f0: (usize, usize),
    pub loudness: (usize, usize),
}

impl ReceptiveField {
    pub fn history(&self) -> usize {
        self.envelope.0
    }

    pub fn controls(&self) -> [(usize, usize); 3] {
        [self.phoneme, self.f0, self.loudness]
    }

    /// Frames needed before the first target: history or control past.
    pub fn past(&self) -> usize {
        self.controls().iter().map(|c| c.0).max().unwrap().max(self.envelope.0)
    }

    /// Frames needed after the last target.
    pub fn future(&self) -> usize {
        self.controls().iter().map(|c| c.1).max().unwrap()
    }

    /// Window length for `n` consecutive targets.
    pub fn span(&self, n: usize) -> usize {
        self.past() + n + self.future()
    }
}

fn window_fields(n: usize) -> (usize, usize) {
    let w = 1usize << n;
    (w.div_ceil(2), w / 2 - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Envelope time-stack depth; history is `2^n_env` frames.
    pub n_env: usize,
    pub n_phoneme: usize,
    pub n_f0: usize,
    pub n_loudness: usize,
    pub n_bins: usize,
    pub freq_stacks: usize,
    pub layers_per_freq_stack: usize,
    pub densenet_growth: usize,
    pub bottleneck_width: usize,
    /// Filters per time-convolution layer, before the activation. A gated
    /// activation halves this.
    pub time_channels: usize,
    pub time_activation: ActivationKind,
    pub freq_activation: ActivationKind,
    /// Residual width of the 1d baseline.
    pub bb1_channels: usize,
    /// Residual width of the 2d baseline.
    pub bb2_channels: usize,
    pub head: HeadKind,
    pub phoneme_vocab: usize,
    pub sigma_min_db: f64,
}

impl ModelConfig {
    /// Widths chosen for the full-size network and its baselines.
    pub fn paper() -> Self {
        Self {
            n_env: 4,
            n_phoneme: 6,
            n_f0: 3,
            n_loudness: 3,
            n_bins: N_BINS,
            freq_stacks: 3,
            layers_per_freq_stack: 4,
            densenet_growth: 16,
            bottleneck_width: 64,
            time_channels: 64,
            time_activation: ActivationKind::Gated,
            freq_activation: ActivationKind::Relu,
            bb1_channels: 256,
            bb2_channels: 94,
            head: HeadKind::Mse,
            phoneme_vocab: 10,
            sigma_min_db: SIGMA_MIN_DB,
        }
    }

    /// Same depths and windows with narrow layers, sized for single-core
    /// training runs of a few thousand updates.
    pub fn desk() -> Self {
        Self {
            time_channels: 8,
            densenet_growth: 4,
            bottleneck_width: 8,
            bb1_channels: 12,
            bb2_channels: 5,
            ..Self::paper()
        }
    }

    pub fn with_head(mut self, head: HeadKind) -> Self {
        self.head = head;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let depths = [
            ("n_env", self.n_env),
            ("n_phoneme", self.n_phoneme),
            ("n_f0", self.n_f0),
            ("n_loudness", self.n_loudness),
        ];
        for (name, n) in depths {
            if !(1..=12).contains(&n) {
                return Err(Error::Config(format!("{name} = {n}, must lie in 1..=12")));
            }
        }
        let positive = [
            ("n_bins", self.n_bins),
            ("freq_stacks", self.freq_stacks),
            ("layers_per_freq_stack", self.layers_per_freq_stack),
            ("densenet_growth", self.densenet_growth),
            ("bottleneck_width", self.bottleneck_width),
            ("time_channels", self.time_channels),
            ("bb1_channels", self.bb1_channels),
            ("bb2_channels", self.bb2_channels),
            ("phoneme_vocab", self.phoneme_vocab),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.time_activation == ActivationKind::Gated && self.time_channels % 2 != 0 {
            return Err(Error::OddGatedFeatures(self.time_channels));
        }
        if self.head.cgm() == Some(0) {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if !(self.sigma_min_db > 0.0 && self.sigma_min_db.is_finite()) {
            return Err(Error::Config(format!("sigma_min_db = {}", self.sigma_min_db)));
        }
        Ok(())
    }

    pub fn history(&self) -> usize {
        1 << self.n_env
    }

    /// Window lengths of the phoneme, f0 and loudness inputs.
    pub fn control_windows(&self) -> [usize; 3] {
        [1 << self.n_phoneme, 1 << self.n_f0, 1 << self.n_loudness]
    }

    /// Features leaving each time stack of the proposed network.
    pub fn time_features(&self) -> usize {
        match self.time_activation {
            ActivationKind::Gated => self.time_channels / 2,
            _ => self.time_channels,
        }
    }

    /// Control windows `[t - 2^(n-1), t + 2^(n-1) - 1]` around the target `t`.
    pub fn receptive_field(&self) -> ReceptiveField {
        ReceptiveField {
            envelope: (self.history(), 0),
            phoneme: window_fields(self.n_phoneme),
            f0: window_fields(self.n_f0),
            loudness: window_fields(self.n_loudness),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}
