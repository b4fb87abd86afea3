//! Graph construction for all three variants.
//!
//! Batches share one node per layer: a batch of `B` spectra of `n_bins` bins
//! is laid out as a single frequency axis of `B * n_bins` entries, and every
//! frequency-aware convolution treats it as `B` independent blocks. Tensors
//! are `[time, B * n_bins, features]` throughout (the 1d baseline regroups
//! them as `[time, B, n_bins]` so the bins become features).

use crate::arch::config::{HeadKind, ModelConfig, Variant};
use crate::arch::model::{bb_filters, depths, Model, BRANCHES};
use crate::autodiff::{ActivationKind, Alignment, ConvSpec, Padding, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

/// Borrowed control tracks of one phrase (ids, Hz, dB).
#[derive(Clone, Copy, Debug)]
pub struct Controls<'a> {
    pub phonemes: &'a [u32],
    pub f0: &'a [f64],
    pub loudness: &'a [f64],
}

impl<'a> Controls<'a> {
    pub fn of(seq: &'a FeatureSequence) -> Self {
        Self {
            phonemes: &seq.phonemes,
            f0: &seq.f0,
            loudness: &seq.loudness,
        }
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }
}

/// Control inputs for `steps` consecutive targets of `blocks` sequences, in
/// physical units. Each track is time-major (`t * blocks + b`) and covers the
/// branch window of the first target through that of the last.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlWindows {
    pub blocks: usize,
    pub steps: usize,
    pub phonemes: Vec<usize>,
    pub f0: Vec<f64>,
    pub loudness: Vec<f64>,
}

impl ControlWindows {
    /// Windows for targets `first .. first + steps` of every `(controls, first)`
    /// item. Frames outside a phrase replicate its nearest edge frame.
    pub fn gather(cfg: &ModelConfig, steps: usize, items: &[(Controls<'_>, isize)]) -> Result<Self> {
        if steps == 0 || items.is_empty() {
            return Err(Error::Shape("control windows need at least one target and sequence".into()));
        }
        if let Some((c, _)) = items.iter().find(|(c, _)| c.is_empty() || c.f0.len() != c.len() || c.loudness.len() != c.len()) {
            return Err(Error::LengthMismatch {
                track: "controls",
                expected: c.len(),
                found: c.f0.len().min(c.loudness.len()),
            });
        }
        let [wp, wf, wl] = cfg.control_windows();
        fn track<T: Copy, U>(
            items: &[(Controls<'_>, isize)],
            w: usize,
            steps: usize,
            pick: impl Fn(&Controls<'_>, usize) -> T,
            map: impl Fn(T) -> U,
        ) -> Vec<U> {
            let len = w + steps - 1;
            let mut out = Vec::with_capacity(len * items.len());
            for t in 0..len {
                for (c, first) in items {
                    let idx = (first - (w / 2) as isize + t as isize).clamp(0, c.len() as isize - 1);
                    out.push(map(pick(c, idx as usize)));
                }
            }
            out
        }
        Ok(Self {
            blocks: items.len(),
            steps,
            phonemes: track(items, wp, steps, |c, i| c.phonemes[i], |p| p as usize),
            f0: track(items, wf, steps, |c, i| c.f0[i], |v| v),
            loudness: track(items, wl, steps, |c, i| c.loudness[i], |v| v),
        })
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let [wp, wf, wl] = cfg.control_windows();
        let n = self.steps;
        for (track, w, len) in [
            ("phoneme window", wp, self.phonemes.len()),
            ("f0 window", wf, self.f0.len()),
            ("loudness window", wl, self.loudness.len()),
        ] {
            if len != (w + n - 1) * self.blocks {
                return Err(Error::LengthMismatch {
                    track,
                    expected: (w + n - 1) * self.blocks,
                    found: len,
                });
            }
        }
        Ok(())
    }
}

/// Output of the head for `n` targets of `B` sequences.
#[derive(Clone, Copy, Debug)]
pub(crate) enum HeadOut {
    /// Predicted frames in dB, `[n, B * bins, 1]`.
    Frame(Var),
    /// Mixture rows `[n * B * bins, 3K]` with absolute means and scales in dB.
    Mixture { params: Var, k: usize },
}

impl HeadOut {
    /// Frames `[n, B * bins, 1]`: the prediction itself or the per-bin mode.
    pub fn point(self, tape: &mut Tape, shape: &[usize]) -> Result<Var> {
        match self {
            HeadOut::Frame(v) => Ok(v),
            HeadOut::Mixture { params, k } => {
                let m = tape.cgm_mode(params, k)?;
                tape.reshape(m, shape)
            }
        }
    }

    /// Mean squared error in dB^2, or mean mixture NLL of dB targets.
    pub fn loss(self, tape: &mut Tape, target: Var) -> Result<Var> {
        match self {
            HeadOut::Frame(v) => tape.mse(v, target),
            HeadOut::Mixture { params, k } => {
                let n = tape.value(target).len();
                let flat = tape.reshape(target, &[n])?;
                tape.cgm_nll(params, flat, k)
            }
        }
    }
}

/// Layer-wise queues of the causal envelope stack for frame-by-frame rollout.
pub(crate) struct EnvCache {
    levels: Vec<Vec<Var>>,
}

/// Builds graphs for one model on one tape.
pub(crate) struct Forward<'m> {
    model: &'m Model,
    vars: Vec<Option<Var>>,
    trainable: bool,
    blocks: usize,
    pub trace: Option<Vec<(String, Vec<usize>)>>,
}

impl<'m> Forward<'m> {
    /// `trainable` binds parameters as gradient leaves, otherwise as constants.
    pub fn new(model: &'m Model, blocks: usize, trainable: bool) -> Self {
        Self {
            model,
            vars: vec![None; model.params().len()],
            trainable,
            blocks,
            trace: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Reads parameters from leaves already on the tape, one per model
    /// parameter in layout order, instead of the model's own values.
    pub fn with_vars(mut self, vars: &[Var]) -> Self {
        self.vars = vars.iter().copied().map(Some).collect();
        self
    }

    fn cfg(&self) -> &'m ModelConfig {
        self.model.config()
    }

    fn record(&mut self, tape: &Tape, label: impl FnOnce() -> String, v: Var) {
        if let Some(trace) = &mut self.trace {
            trace.push((label(), tape.shape(v).to_vec()));
        }
    }

    fn p(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        let i = self
            .model
            .param_index(name)
            .ok_or_else(|| Error::Invalid(format!("model has no parameter {name}")))?;
        if let Some(v) = self.vars[i] {
            return Ok(v);
        }
        let value = self.model.params()[i].clone();
        let v = if self.trainable {
            tape.param(i, value)?
        } else {
            tape.constant(value)?
        };
        self.vars[i] = Some(v);
        Ok(v)
    }

    fn conv(&mut self, tape: &mut Tape, x: Var, prefix: &str, spec: ConvSpec) -> Result<Var> {
        let w = self.p(tape, &format!("{prefix}.w"))?;
        let b = self.p(tape, &format!("{prefix}.b"))?;
        tape.conv2d_blocked(x, w, b, spec, self.blocks)
    }

    fn conv1x1(&mut self, tape: &mut Tape, x: Var, prefix: &str) -> Result<Var> {
        let shape = self
            .model
            .param(&format!("{prefix}.w"))
            .ok_or_else(|| Error::Invalid(format!("model has no parameter {prefix}.w")))?
            .shape()
            .to_vec();
        let spec = ConvSpec {
            kernel: (1, 1),
            dilation: (1, 1),
            padding: Padding::None,
            alignment: Alignment::NotApplicable,
            in_features: shape[2],
            out_features: shape[3],
        };
        self.conv(tape, x, prefix, spec)
    }

    fn time_spec(&self, branch: usize, layer: usize, incremental: bool) -> ConvSpec {
        let cfg = self.cfg();
        let d = 1 << layer;
        let dt = if incremental { 1 } else { d };
        let alignment = if branch == 0 {
            Alignment::CausalTime
        } else {
            Alignment::SymmetricTime
        };
        match self.model.variant() {
            Variant::Proposed => {
                let cin = if layer == 0 { 1 } else { cfg.time_features() };
                ConvSpec::time(2, dt, alignment, cin, cfg.time_channels)
            }
            Variant::Bb1 => {
                let c = cfg.bb1_channels;
                ConvSpec::time(2, dt, alignment, c, bb_filters(cfg, c))
            }
            Variant::Bb2 => {
                let c = cfg.bb2_channels;
                ConvSpec {
                    kernel: (2, 3),
                    dilation: (dt, d),
                    padding: Padding::SameFrequency,
                    alignment,
                    in_features: c,
                    out_features: bb_filters(cfg, c),
                }
            }
        }
    }

    /// One dilated time layer. `incremental` evaluates a single output from a
    /// two-frame input holding exactly the two taps.
    fn time_layer(&mut self, tape: &mut Tape, branch: usize, layer: usize, x: Var, incremental: bool) -> Result<Var> {
        let spec = self.time_spec(branch, layer, incremental);
        let name = format!("{}.t{layer}", BRANCHES[branch]);
        let h = self.conv(tape, x, &name, spec)?;
        let a = tape.activation(h, self.cfg().time_activation)?;
        if self.model.variant() == Variant::Proposed {
            return Ok(a);
        }
        let r = self.conv1x1(tape, a, &format!("{name}.res"))?;
        let t = tape.shape(r)[0];
        let skip = tape.slice_time(x, spec.aligned_input_index(0), t)?;
        tape.add(skip, r)
    }

    /// Maps `[T, B * bins, 1]` onto the layout the branch's first layer reads.
    fn branch_input(&mut self, tape: &mut Tape, branch: usize, x: Var) -> Result<Var> {
        let prefix = format!("{}.in", BRANCHES[branch]);
        match self.model.variant() {
            Variant::Proposed => Ok(x),
            Variant::Bb1 => {
                let t = tape.shape(x)[0];
                let r = tape.reshape(x, &[t, self.blocks, self.cfg().n_bins])?;
                self.conv1x1(tape, r, &prefix)
            }
            Variant::Bb2 => self.conv1x1(tape, x, &prefix),
        }
    }

    fn normalize_env(&self, tape: &mut Tape, x_db: Var) -> Result<Var> {
        let n = self.model.norm();
        tape.scale_shift(x_db, 1.0 / n.env_sd, -n.env_mean / n.env_sd)
    }

    fn stack(&mut self, tape: &mut Tape, branch: usize, mut x: Var) -> Result<Var> {
        for layer in 0..depths(self.cfg())[branch] {
            x = self.time_layer(tape, branch, layer, x, false)?;
            self.record(tape, || format!("{}.t{layer}", BRANCHES[branch]), x);
        }
        Ok(x)
    }

    /// Envelope branch over a full history `[H + n - 1, B * bins, 1]` in dB.
    fn env_full(&mut self, tape: &mut Tape, hist_db: Var) -> Result<Var> {
        let x = self.normalize_env(tape, hist_db)?;
        let x = self.branch_input(tape, 0, x)?;
        self.stack(tape, 0, x)
    }

    /// The three control branches, each `[n, B * bins, C]`.
    fn controls_full(&mut self, tape: &mut Tape, ctrl: &ControlWindows) -> Result<[Var; 3]> {
        let cfg = self.cfg();
        ctrl.check(cfg)?;
        if ctrl.blocks != self.blocks {
            return Err(Error::Shape(format!(
                "control windows for {} sequences, graph built for {}",
                ctrl.blocks, self.blocks
            )));
        }
        let bins = cfg.n_bins;
        let width = self.blocks * bins;
        let norm = *self.model.norm();

        let table = self.p(tape, "ph.embed")?;
        let e = tape.embedding(table, &ctrl.phonemes)?;
        let ph = tape.reshape(e, &[ctrl.phonemes.len() / self.blocks, width, 1])?;

        let scalar = |tape: &mut Tape, this: &mut Self, values: Vec<f64>, basis: &str| -> Result<Var> {
            let n = values.len();
            let track = tape.constant(Tensor::new([n, 1], values)?)?;
            let b = this.p(tape, basis)?;
            let x = tape.scalar_expand(track, b)?;
            tape.reshape(x, &[n / this.blocks, width, 1])
        };
        let f0 = scalar(tape, self, ctrl.f0.iter().map(|&v| norm.f0(v)).collect(), "f0.basis")?;
        let loud = scalar(
            tape,
            self,
            ctrl.loudness.iter().map(|&v| norm.loudness(v)).collect(),
            "loud.basis",
        )?;

        let mut out = [ph, f0, loud];
        for (i, x) in out.iter_mut().enumerate() {
            let input = self.branch_input(tape, i + 1, *x)?;
            *x = self.stack(tape, i + 1, input)?;
            debug_assert_eq!(tape.shape(*x)[0], ctrl.steps);
        }
        Ok(out)
    }

    fn new_cache(&self) -> EnvCache {
        EnvCache {
            levels: vec![Vec::new(); self.cfg().n_env + 1],
        }
    }

    /// Appends one prepared envelope frame and returns the stack output for
    /// the newest position once the history is full.
    fn cache_push(&mut self, tape: &mut Tape, cache: &mut EnvCache, x: Var) -> Result<Option<Var>> {
        cache.levels[0].push(x);
        for layer in 0..self.cfg().n_env {
            let seq = &cache.levels[layer];
            let d = 1 << layer;
            if seq.len() <= d {
                return Ok(None);
            }
            let pair = tape.concat_time(&[seq[seq.len() - 1 - d], seq[seq.len() - 1]])?;
            let y = self.time_layer(tape, 0, layer, pair, true)?;
            cache.levels[layer + 1].push(y);
        }
        Ok(cache.levels.last().and_then(|l| l.last().copied()))
    }

    fn freq_stacks(&mut self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        let cfg = self.cfg();
        let act = cfg.freq_activation;
        for s in 0..cfg.freq_stacks {
            for j in 0..cfg.layers_per_freq_stack {
                let b = self.conv1x1(tape, x, &format!("fs{s}.l{j}.bn"))?;
                let b = tape.activation(b, act)?;
                let spec = ConvSpec::frequency(2, 1 << j, cfg.bottleneck_width, cfg.densenet_growth);
                let g = self.conv(tape, b, &format!("fs{s}.l{j}.conv"), spec)?;
                let g = tape.activation(g, act)?;
                x = tape.concat_features(&[x, g])?;
                self.record(tape, || format!("fs{s}.l{j}"), x);
            }
            if s + 1 < cfg.freq_stacks {
                let t = self.conv1x1(tape, x, &format!("fs{s}.tr"))?;
                x = tape.activation(t, act)?;
                self.record(tape, || format!("fs{s}.tr"), x);
            }
        }
        Ok(x)
    }

    /// Combines branch outputs for `n` targets and applies the residual head
    /// on `prev_db` (`[n, B * bins, 1]`).
    fn head(&mut self, tape: &mut Tape, env: Var, ctrl: [Var; 3], prev_db: Var) -> Result<HeadOut> {
        let cfg = self.cfg();
        let x = tape.concat_features(&[env, ctrl[0], ctrl[1], ctrl[2]])?;
        self.record(tape, || "concat".into(), x);
        let n = tape.shape(x)[0];
        let width = self.blocks * cfg.n_bins;
        let o = cfg.head.outputs_per_bin();
        let raw = match self.model.variant() {
            Variant::Proposed => {
                let x = self.freq_stacks(tape, x)?;
                self.conv1x1(tape, x, "head")?
            }
            Variant::Bb1 | Variant::Bb2 => {
                let m = self.conv1x1(tape, x, "mix")?;
                let m = tape.activation(m, ActivationKind::Relu)?;
                let h = self.conv1x1(tape, m, "head")?;
                tape.reshape(h, &[n, width, o])?
            }
        };
        self.record(tape, || "head".into(), raw);
        let sd = self.model.norm().env_sd;
        match cfg.head {
            HeadKind::Mse => {
                let delta = tape.scale_shift(raw, sd, 0.0)?;
                Ok(HeadOut::Frame(tape.add(prev_db, delta)?))
            }
            HeadKind::Cgm { components: k } => {
                let r = tape.reshape(raw, &[n * width, 3 * k])?;
                let p = tape.reshape(prev_db, &[n * width])?;
                let params = tape.cgm_head(r, p, k, sd, cfg.sigma_min_db)?;
                Ok(HeadOut::Mixture { params, k })
            }
        }
    }

    /// Teacher-forced predictions for `n` consecutive targets from the
    /// ground-truth history `[H + n - 1, B * bins, 1]` (dB).
    pub fn teacher(&mut self, tape: &mut Tape, hist_db: Var, ctrl: &ControlWindows) -> Result<HeadOut> {
        let h = self.cfg().history();
        let n = ctrl.steps;
        self.check_frames(tape, hist_db, h + n - 1, "envelope history")?;
        let env = self.env_full(tape, hist_db)?;
        self.record(tape, || "env".into(), env);
        let c = self.controls_full(tape, ctrl)?;
        let prev = tape.slice_time(hist_db, h - 1, n)?;
        self.head(tape, env, c, prev)
    }

    /// Autoregressive rollout from `H` seed frames. After every prediction
    /// `feedback` returns the dB frame `[1, B * bins, 1]` appended to the
    /// history.
    pub fn rollout<F>(&mut self, tape: &mut Tape, seed_db: Var, ctrl: &ControlWindows, mut feedback: F) -> Result<Vec<HeadOut>>
    where
        F: FnMut(&mut Tape, usize, HeadOut) -> Result<Var>,
    {
        let h = self.cfg().history();
        self.check_frames(tape, seed_db, h, "seed history")?;
        let c = self.controls_full(tape, ctrl)?;
        let x = self.normalize_env(tape, seed_db)?;
        let x = self.branch_input(tape, 0, x)?;
        let mut cache = self.new_cache();
        let mut top = None;
        for k in 0..h {
            let f = tape.slice_time(x, k, 1)?;
            top = self.cache_push(tape, &mut cache, f)?;
        }
        let mut prev = tape.slice_time(seed_db, h - 1, 1)?;
        let mut outs = Vec::with_capacity(ctrl.steps);
        for i in 0..ctrl.steps {
            let env = top.expect("full history yields an output");
            let mut ci = c;
            for v in &mut ci {
                *v = tape.slice_time(*v, i, 1)?;
            }
            let out = self.head(tape, env, ci, prev)?;
            outs.push(out);
            let frame = feedback(tape, i, out)?;
            if i + 1 < ctrl.steps {
                let x = self.normalize_env(tape, frame)?;
                let x = self.branch_input(tape, 0, x)?;
                top = self.cache_push(tape, &mut cache, x)?;
            }
            prev = frame;
        }
        Ok(outs)
    }

    fn check_frames(&self, tape: &Tape, v: Var, frames: usize, what: &str) -> Result<()> {
        let expected = [frames, self.blocks * self.cfg().n_bins, 1];
        if tape.shape(v) != expected {
            return Err(Error::Shape(format!(
                "{what}: expected {expected:?}, got {:?}",
                tape.shape(v)
            )));
        }
        Ok(())
    }
}

/// Packs frames `[t][b][bins]` given as per-sequence frame slices into a
/// time-major `[T, B * bins, 1]` tensor.
pub(crate) fn stack_frames(frames: &[&[f64]], blocks: usize, bins: usize) -> Result<Tensor> {
    let t = frames.len() / blocks;
    let mut data = Vec::with_capacity(t * blocks * bins);
    for f in frames {
        if f.len() != bins {
            return Err(Error::Shape(format!("frame of {} bins, expected {bins}", f.len())));
        }
        data.extend_from_slice(f);
    }
    Tensor::new([t, blocks * bins, 1], data)
}
