use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::config::{ModelConfig, ReceptiveField, Variant};
use crate::autodiff::{ActivationKind, Tensor};
use crate::error::{Error, Result};
use crate::features::NormStats;

/// Input branches in the order their features are concatenated.
pub(crate) const BRANCHES: [&str; 4] = ["env", "ph", "f0", "loud"];

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// `U(-a, a)` with `a = gain * sqrt(3 / fan_in)`, unit variance per input.
    Uniform { fan_in: usize, gain: f64 },
    Zero,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// Small output layers start close to "repeat the previous frame".
const HEAD_GAIN: f64 = 0.1;

struct Layout(Vec<ParamSpec>);

impl Layout {
    fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize, gain: f64) {
        self.0.push(ParamSpec {
            name,
            shape,
            init: Init::Uniform { fan_in, gain },
        });
    }

    /// Convolution weight `[kt, kf, cin, cout]` plus bias `[cout]`.
    fn conv(&mut self, prefix: &str, kt: usize, kf: usize, cin: usize, cout: usize, gain: f64) {
        self.weight(format!("{prefix}.w"), vec![kt, kf, cin, cout], kt * kf * cin, gain);
        self.0.push(ParamSpec {
            name: format!("{prefix}.b"),
            shape: vec![cout],
            init: Init::Zero,
        });
    }
}

pub(crate) fn depths(cfg: &ModelConfig) -> [usize; 4] {
    [cfg.n_env, cfg.n_phoneme, cfg.n_f0, cfg.n_loudness]
}

/// Filters of a baseline time layer of residual width `c`.
pub(crate) fn bb_filters(cfg: &ModelConfig, c: usize) -> usize {
    match cfg.time_activation {
        ActivationKind::Gated => 2 * c,
        _ => c,
    }
}

fn layout(cfg: &ModelConfig, variant: Variant) -> Layout {
    let mut l = Layout(Vec::new());
    let bins = cfg.n_bins;
    let o = cfg.head.outputs_per_bin();
    l.weight("ph.embed".into(), vec![cfg.phoneme_vocab, bins], 1, 1.0);
    l.weight("f0.basis".into(), vec![1, bins], 1, 1.0);
    l.weight("loud.basis".into(), vec![1, bins], 1, 1.0);
    match variant {
        Variant::Proposed => {
            let c = cfg.time_features();
            for (branch, depth) in BRANCHES.iter().zip(depths(cfg)) {
                for layer in 0..depth {
                    let cin = if layer == 0 { 1 } else { c };
                    l.conv(&format!("{branch}.t{layer}"), 2, 1, cin, cfg.time_channels, 1.0);
                }
            }
            let (g, bw) = (cfg.densenet_growth, cfg.bottleneck_width);
            let mut f = 4 * c;
            for s in 0..cfg.freq_stacks {
                for j in 0..cfg.layers_per_freq_stack {
                    l.conv(&format!("fs{s}.l{j}.bn"), 1, 1, f, bw, 1.0);
                    l.conv(&format!("fs{s}.l{j}.conv"), 1, 2, bw, g, 1.0);
                    f += g;
                }
                if s + 1 < cfg.freq_stacks {
                    l.conv(&format!("fs{s}.tr"), 1, 1, f, bw, 1.0);
                    f = bw;
                }
            }
            l.conv("head", 1, 1, f, o, HEAD_GAIN);
        }
        Variant::Bb1 | Variant::Bb2 => {
            let (c, kf, cin0, head_out) = match variant {
                Variant::Bb1 => (cfg.bb1_channels, 1, bins, bins * o),
                _ => (cfg.bb2_channels, 3, 1, o),
            };
            let filters = bb_filters(cfg, c);
            for (branch, depth) in BRANCHES.iter().zip(depths(cfg)) {
                l.conv(&format!("{branch}.in"), 1, 1, cin0, c, 1.0);
                for layer in 0..depth {
                    l.conv(&format!("{branch}.t{layer}"), 2, kf, c, filters, 1.0);
                    l.conv(&format!("{branch}.t{layer}.res"), 1, 1, c, c, 1.0);
                }
            }
            l.conv("mix", 1, 1, 4 * c, c, 1.0);
            l.conv("head", 1, 1, c, head_out, HEAD_GAIN);
        }
    }
    l
}

/// A network variant with its parameters and the normalization it was
/// trained under.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    variant: Variant,
    norm: NormStats,
    names: Vec<String>,
    params: Vec<Tensor>,
    index: HashMap<String, usize>,
}

/// Builds the proposed network (or a baseline, by `variant`) with seeded
/// fan-in scaled uniform weights and zero biases.
pub fn build_model(cfg: &ModelConfig, variant: Variant, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = layout(cfg, variant).0;
    let mut names = Vec::with_capacity(specs.len());
    let mut params = Vec::with_capacity(specs.len());
    for spec in specs {
        let value = match spec.init {
            Init::Zero => Tensor::zeros(spec.shape),
            Init::Uniform { fan_in, gain } => {
                let a = gain * (3.0 / fan_in as f64).sqrt();
                Tensor::from_fn(spec.shape, |_| rng.random_range(-a..a))
            }
        };
        names.push(spec.name);
        params.push(value);
    }
    Model::from_parts(cfg.clone(), variant, NormStats::identity(), names, params)
}

/// Builds one of the two ablation baselines.
pub fn build_bb_model(variant: Variant, cfg: &ModelConfig, seed: u64) -> Result<Model> {
    if variant == Variant::Proposed {
        return Err(Error::Config("build_bb_model expects bb1 or bb2".into()));
    }
    build_model(cfg, variant, seed)
}

/// Number of trainable scalars.
pub fn param_count(model: &Model) -> usize {
    count_scalars(&model.params)
}

pub fn count_scalars(params: &[Tensor]) -> usize {
    params.iter().map(Tensor::len).sum()
}

impl Model {
    pub(crate) fn from_parts(
        config: ModelConfig,
        variant: Variant,
        norm: NormStats,
        names: Vec<String>,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config, variant).0;
        if expected.len() != names.len() || names.len() != params.len() {
            return Err(Error::Invalid(format!(
                "{} parameters supplied, {variant:?} with this config has {}",
                names.len(),
                expected.len()
            )));
        }
        for ((spec, name), p) in expected.iter().zip(&names).zip(&params) {
            if &spec.name != name {
                return Err(Error::Invalid(format!("parameter {name} where {} was expected", spec.name)));
            }
            if spec.shape != p.shape() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: spec.shape.clone(),
                    found: p.shape().to_vec(),
                });
            }
            p.ensure_finite(name)?;
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            config,
            variant,
            norm,
            names,
            params,
            index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn receptive_field(&self) -> ReceptiveField {
        self.config.receptive_field()
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn set_norm(&mut self, norm: NormStats) {
        self.norm = norm;
    }

    pub fn with_norm(mut self, norm: NormStats) -> Self {
        self.norm = norm;
        self
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.param_index(name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.param_index(name).map(|i| &mut self.params[i])
    }

    /// Sets the final 1x1 layer's weights and bias to zero.
    pub fn zero_head(&mut self) {
        for name in ["head.w", "head.b"] {
            if let Some(p) = self.param_mut(name) {
                p.data_mut().fill(0.0);
            }
        }
    }
}
