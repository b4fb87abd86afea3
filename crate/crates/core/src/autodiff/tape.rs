//! Reverse-mode differentiation by operation recording.
//!
//! Every primitive appends a node holding its forward value. `backward`
//! replays the nodes in reverse order and accumulates vector-Jacobian
//! products into per-node gradient buffers. Nodes that depend on no
//! parameter are never visited during the backward pass.

use crate::autodiff::conv::{self, ConvSpec, Grid};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::losses::{bin_nll, bin_nll_grad};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Tanh,
    /// `tanh(a) * sigmoid(b)` where `a`, `b` are the two halves of the feature axis.
    Gated,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        spec: ConvSpec,
        blocks: usize,
    },
    Affine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Activation {
        input: Var,
        kind: ActivationKind,
        /// `(tanh(a), sigmoid(b))` pairs of a gated activation, kept for the
        /// reverse pass.
        gates: Vec<f64>,
    },
    ConcatFeatures {
        inputs: Vec<Var>,
    },
    ConcatTime {
        inputs: Vec<Var>,
    },
    SliceTime {
        input: Var,
        start: usize,
    },
    Reshape {
        input: Var,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ScalarExpand {
        track: Var,
        basis: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    ScaleShift {
        input: Var,
        scale: f64,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Mean {
        inputs: Vec<Var>,
    },
    CgmHead {
        raw: Var,
        prev: Var,
        k: usize,
        env_scale: f64,
    },
    CgmNll {
        params: Var,
        target: Var,
        k: usize,
    },
    CgmMode {
        params: Var,
        k: usize,
        picks: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradient buffers produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn grid3(t: &Tensor, blocks: usize, what: &str) -> Result<Grid> {
    match *t.shape() {
        [t, f, c] if blocks > 0 && f % blocks == 0 => Ok(Grid {
            t,
            f: f / blocks,
            c,
            blocks,
        }),
        ref s => Err(Error::Shape(format!(
            "{what}: expected rank-3 tensor with {blocks} frequency blocks, got {s:?}"
        ))),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.data().iter().all(|x| x.is_finite()) {
            let op: String = format!("{op:?}").chars().take(40).collect();
            return Err(Error::NonFinite(format!("output of {op}")));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Constant, false)
    }

    /// Trainable leaf; `index` identifies the parameter in its owning set.
    pub fn param(&mut self, index: usize, value: Tensor) -> Result<Var> {
        self.push(value, Op::Param(index), true)
    }

    /// Copy of `v` with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        self.conv2d_blocked(input, weight, bias, spec, 1)
    }

    /// Convolution over an input whose frequency axis concatenates `blocks`
    /// independent spectra. Frequency taps and padding never cross a block
    /// boundary, so a batch can share one node.
    pub fn conv2d_blocked(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        spec: ConvSpec,
        blocks: usize,
    ) -> Result<Var> {
        spec.validate()?;
        let xg = grid3(self.value(input), blocks, "conv2d input")?;
        if xg.c != spec.in_features {
            return Err(Error::Shape(format!(
                "conv2d expects {} input features, got {}",
                spec.in_features, xg.c
            )));
        }
        let ws = spec.weight_shape();
        if self.shape(weight) != ws {
            return Err(Error::Shape(format!(
                "conv2d weight shape {:?}, expected {ws:?}",
                self.shape(weight)
            )));
        }
        if self.shape(bias) != [spec.out_features] {
            return Err(Error::Shape(format!(
                "conv2d bias shape {:?}, expected [{}]",
                self.shape(bias),
                spec.out_features
            )));
        }
        let (ot, of) = spec.output_extent(xg.t, xg.f)?;
        let og = Grid {
            t: ot,
            f: of,
            c: spec.out_features,
            blocks,
        };
        let mut out = vec![0.0; ot * of * blocks * og.c];
        conv::forward(
            &spec,
            self.value(input).data(),
            xg,
            self.value(weight).data(),
            self.value(bias).data(),
            &mut out,
            og,
        );
        let ng = self.any_grad(&[input, weight, bias]);
        self.push(
            Tensor::new([ot, of * blocks, og.c], out)?,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
                blocks,
            },
            ng,
        )
    }

    /// `input · weight + bias` over the innermost axis.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let din = x.last_dim();
        let w = self.value(weight);
        let [wi, dout] = *w.shape() else {
            return Err(Error::Shape(format!("affine weight must be rank 2, got {:?}", w.shape())));
        };
        if wi != din {
            return Err(Error::Shape(format!(
                "affine inner dimensions disagree: input {din}, weight {wi}"
            )));
        }
        if self.shape(bias) != [dout] {
            return Err(Error::Shape(format!(
                "affine bias shape {:?}, expected [{dout}]",
                self.shape(bias)
            )));
        }
        let rows = x.len() / din;
        let b = self.value(bias).data();
        let mut out = Vec::with_capacity(rows * dout);
        for xrow in x.data().chunks_exact(din) {
            let start = out.len();
            out.extend_from_slice(b);
            let o = &mut out[start..];
            for (&xv, wrow) in xrow.iter().zip(w.data().chunks_exact(dout)) {
                for (ov, &wv) in o.iter_mut().zip(wrow) {
                    *ov += xv * wv;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let ng = self.any_grad(&[input, weight, bias]);
        self.push(
            Tensor::new(shape, out)?,
            Op::Affine {
                input,
                weight,
                bias,
            },
            ng,
        )
    }

    pub fn activation(&mut self, input: Var, kind: ActivationKind) -> Result<Var> {
        let x = self.value(input);
        let mut gates = Vec::new();
        let value = match kind {
            ActivationKind::Relu => Tensor::new(x.shape(), x.data().iter().map(|v| v.max(0.0)).collect())?,
            ActivationKind::Tanh => Tensor::new(x.shape(), x.data().iter().map(|v| v.tanh()).collect())?,
            ActivationKind::Gated => {
                let c = x.last_dim();
                if c % 2 != 0 {
                    return Err(Error::OddGatedFeatures(c));
                }
                let h = c / 2;
                let mut out = Vec::with_capacity(x.len() / 2);
                for row in x.data().chunks_exact(c) {
                    let (a, b) = row.split_at(h);
                    for (a, b) in a.iter().zip(b) {
                        let (ta, sb) = (a.tanh(), sigmoid(*b));
                        out.push(ta * sb);
                        gates.push(ta);
                        gates.push(sb);
                    }
                }
                let mut shape = x.shape().to_vec();
                *shape.last_mut().unwrap() = h;
                Tensor::new(shape, out)?
            }
        };
        let ng = self.needs_grad(input);
        if !ng {
            gates = Vec::new();
        }
        self.push(value, Op::Activation { input, kind, gates }, ng)
    }

    /// Concatenates along the innermost (feature) axis.
    pub fn concat_features(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let lead = &self.shape(*first)[..self.shape(*first).len() - 1];
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != lead.len() + 1 || &s[..s.len() - 1] != lead {
                return Err(Error::Shape(format!(
                    "concat_features: leading extents {:?} vs {:?}",
                    &s[..s.len().saturating_sub(1)],
                    lead
                )));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = inputs.iter().map(|v| self.value(*v).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*v).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let ng = self.any_grad(inputs);
        self.push(
            Tensor::new(shape, out)?,
            Op::ConcatFeatures {
                inputs: inputs.to_vec(),
            },
            ng,
        )
    }

    /// Concatenates along the outermost (time) axis.
    pub fn concat_time(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let trail = self.shape(*first)[1..].to_vec();
        let mut t = 0;
        let mut out = Vec::new();
        for v in inputs {
            let s = self.shape(*v);
            if s[1..] != trail[..] {
                return Err(Error::Shape(format!(
                    "concat_time: trailing extents {:?} vs {:?}",
                    &s[1..],
                    trail
                )));
            }
            t += s[0];
            out.extend_from_slice(self.value(*v).data());
        }
        let mut shape = vec![t];
        shape.extend(trail);
        let ng = self.any_grad(inputs);
        self.push(
            Tensor::new(shape, out)?,
            Op::ConcatTime {
                inputs: inputs.to_vec(),
            },
            ng,
        )
    }

    /// Rows `start..start + len` of the time axis.
    pub fn slice_time(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if start + len > s[0] {
            return Err(Error::Shape(format!(
                "slice_time {start}..{} out of range for extent {}",
                start + len,
                s[0]
            )));
        }
        let row: usize = s[1..].iter().product();
        let data = self.value(input).data()[start * row..(start + len) * row].to_vec();
        let mut shape = s;
        shape[0] = len;
        let ng = self.needs_grad(input);
        self.push(Tensor::new(shape, data)?, Op::SliceTime { input, start }, ng)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let ng = self.needs_grad(input);
        self.push(value, Op::Reshape { input }, ng)
    }

    /// Gathers rows of `table` (`[V, F]`) into `[T, F]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let [v, f] = *tv.shape() else {
            return Err(Error::Shape(format!("embedding table must be rank 2, got {:?}", tv.shape())));
        };
        let mut out = Vec::with_capacity(ids.len() * f);
        for &id in ids {
            if id >= v {
                return Err(Error::IdOutOfRange { id, vocab: v });
            }
            out.extend_from_slice(&tv.data()[id * f..(id + 1) * f]);
        }
        let ng = self.needs_grad(table);
        self.push(
            Tensor::new([ids.len(), f], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    /// Outer product of a `[T, 1]` track with a `[1, F]` basis.
    pub fn scalar_expand(&mut self, track: Var, basis: Var) -> Result<Var> {
        let tr = self.value(track);
        let bs = self.value(basis);
        if tr.last_dim() != 1 || tr.rank() != 2 {
            return Err(Error::Shape(format!("scalar_expand track must be [T, 1], got {:?}", tr.shape())));
        }
        if bs.rank() != 2 || bs.shape()[0] != 1 {
            return Err(Error::Shape(format!("scalar_expand basis must be [1, F], got {:?}", bs.shape())));
        }
        let f = bs.last_dim();
        let mut out = Vec::with_capacity(tr.len() * f);
        for &x in tr.data() {
            out.extend(bs.data().iter().map(|b| x * b));
        }
        let ng = self.any_grad(&[track, basis]);
        self.push(
            Tensor::new([tr.len(), f], out)?,
            Op::ScalarExpand { track, basis },
            ng,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let ng = self.any_grad(&[a, b]);
        self.push(value, Op::Add { a, b }, ng)
    }

    /// `input * scale + shift`, elementwise.
    pub fn scale_shift(&mut self, input: Var, scale: f64, shift: f64) -> Result<Var> {
        let x = self.value(input);
        let value = Tensor::new(x.shape(), x.data().iter().map(|v| v * scale + shift).collect())?;
        let ng = self.needs_grad(input);
        self.push(value, Op::ScaleShift { input, scale }, ng)
    }

    /// Mean of squared differences; a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.value(pred).len() != self.value(target).len() {
            return Err(Error::Shape(format!(
                "mse: {:?} vs {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let loss = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        let ng = self.any_grad(&[pred, target]);
        self.push(Tensor::scalar(loss), Op::Mse { pred, target }, ng)
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Shape("mean of zero scalars".into()));
        }
        let mut sum = 0.0;
        for v in inputs {
            let t = self.value(*v);
            if t.len() != 1 {
                return Err(Error::Shape(format!("mean expects scalars, got {:?}", t.shape())));
            }
            sum += t.data()[0];
        }
        let ng = self.any_grad(inputs);
        self.push(
            Tensor::scalar(sum / inputs.len() as f64),
            Op::Mean {
                inputs: inputs.to_vec(),
            },
            ng,
        )
    }

    /// Converts raw per-bin head outputs `[F, 3K]` into mixture parameters.
    ///
    /// The raw row is `[logits | mean offsets | log scales]`. Means become
    /// `prev + env_scale * offset` and scales `sigma_min + env_scale * exp(log_scale)`.
    pub fn cgm_head(
        &mut self,
        raw: Var,
        prev: Var,
        k: usize,
        env_scale: f64,
        sigma_min: f64,
    ) -> Result<Var> {
        let r = self.value(raw);
        let p = self.value(prev);
        let f = p.len();
        if r.len() != f * 3 * k {
            return Err(Error::Shape(format!(
                "cgm_head: raw has {} values, expected {f} bins x {}",
                r.len(),
                3 * k
            )));
        }
        let mut out = r.data().to_vec();
        for (row, &pv) in out.chunks_exact_mut(3 * k).zip(p.data()) {
            for m in &mut row[k..2 * k] {
                *m = pv + env_scale * *m;
            }
            for s in &mut row[2 * k..] {
                *s = sigma_min + env_scale * s.exp();
            }
        }
        let ng = self.any_grad(&[raw, prev]);
        self.push(
            Tensor::new([f, 3 * k], out)?,
            Op::CgmHead {
                raw,
                prev,
                k,
                env_scale,
            },
            ng,
        )
    }

    /// Mixture negative log-likelihood averaged over bins.
    pub fn cgm_nll(&mut self, params: Var, target: Var, k: usize) -> Result<Var> {
        let pv = self.value(params);
        let tv = self.value(target);
        if pv.len() != tv.len() * 3 * k {
            return Err(Error::Shape(format!(
                "cgm_nll: {} parameters for {} bins and K={k}",
                pv.len(),
                tv.len()
            )));
        }
        let total: f64 = pv
            .data()
            .chunks_exact(3 * k)
            .zip(tv.data())
            .map(|(row, &x)| bin_nll(&row[..k], &row[k..2 * k], &row[2 * k..], x))
            .sum();
        let ng = self.any_grad(&[params, target]);
        self.push(
            Tensor::scalar(total / tv.len() as f64),
            Op::CgmNll { params, target, k },
            ng,
        )
    }

    /// Per-bin mean of the highest-weight component (zero-temperature draw).
    pub fn cgm_mode(&mut self, params: Var, k: usize) -> Result<Var> {
        let pv = self.value(params);
        if pv.len() % (3 * k) != 0 {
            return Err(Error::Shape("cgm_mode: parameter count not divisible by 3K".into()));
        }
        let mut picks = Vec::new();
        let mut out = Vec::new();
        for row in pv.data().chunks_exact(3 * k) {
            let j = argmax(&row[..k]);
            picks.push(j);
            out.push(row[k + j]);
        }
        let ng = self.needs_grad(params);
        let n = out.len();
        self.push(Tensor::new([n], out)?, Op::CgmMode { params, k, picks }, ng)
    }

    /// Reverse pass from `root`, seeding its gradient with `seed` everywhere.
    pub fn backward(&self, root: Var, seed: f64) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![seed; self.nodes[root.0].value.len()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Adds every parameter leaf's gradient into `sink[param_index]`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, sink: &mut [Vec<f64>]) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(p), Some(g)) = (&node.op, grads.grads[i].as_deref()) {
                add_into(&mut sink[*p], g);
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
                blocks,
            } => {
                let x = self.value(*input);
                let xg = grid3(x, *blocks, "conv2d").expect("checked in forward");
                let og = grid3(&node.value, *blocks, "conv2d").expect("checked in forward");
                // Separate buffers: the three targets are distinct nodes.
                let mut gx = self.nodes[input.0].needs_grad.then(|| vec![0.0; x.len()]);
                let mut gw = self.nodes[weight.0]
                    .needs_grad
                    .then(|| vec![0.0; self.value(*weight).len()]);
                let mut gb = self.nodes[bias.0]
                    .needs_grad
                    .then(|| vec![0.0; spec.out_features]);
                conv::backward(
                    spec,
                    x.data(),
                    xg,
                    self.value(*weight).data(),
                    g,
                    og,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                for (v, buf) in [(input, gx), (weight, gw), (bias, gb)] {
                    if let (Some(buf), Some(dst)) = (buf, self.slot(grads, *v)) {
                        add_into(dst, &buf);
                    }
                }
            }
            Op::Affine {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let din = x.last_dim();
                let dout = w.last_dim();
                if let Some(gb) = self.slot(grads, *bias) {
                    for go in g.chunks_exact(dout) {
                        add_into(gb, go);
                    }
                }
                if let Some(gw) = self.slot(grads, *weight) {
                    for (xrow, go) in x.data().chunks_exact(din).zip(g.chunks_exact(dout)) {
                        for (&xv, grow) in xrow.iter().zip(gw.chunks_exact_mut(dout)) {
                            for (gv, &o) in grow.iter_mut().zip(go) {
                                *gv += xv * o;
                            }
                        }
                    }
                }
                if let Some(gx) = self.slot(grads, *input) {
                    for (gxrow, go) in gx.chunks_exact_mut(din).zip(g.chunks_exact(dout)) {
                        for (gv, wrow) in gxrow.iter_mut().zip(w.data().chunks_exact(dout)) {
                            *gv += wrow.iter().zip(go).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
            Op::Activation { input, kind, gates } => {
                let x = self.value(*input).data();
                let y = node.value.data();
                let Some(gx) = self.slot(grads, *input) else { return };
                match kind {
                    ActivationKind::Relu => {
                        for ((gv, &xv), &o) in gx.iter_mut().zip(x).zip(g) {
                            if xv > 0.0 {
                                *gv += o;
                            }
                        }
                    }
                    ActivationKind::Tanh => {
                        for ((gv, &yv), &o) in gx.iter_mut().zip(y).zip(g) {
                            *gv += o * (1.0 - yv * yv);
                        }
                    }
                    ActivationKind::Gated => {
                        let c = self.value(*input).last_dim();
                        let h = c / 2;
                        for ((gxrow, pairs), go) in gx
                            .chunks_exact_mut(c)
                            .zip(gates.chunks_exact(c))
                            .zip(g.chunks_exact(h))
                        {
                            for j in 0..h {
                                let (ta, sb) = (pairs[2 * j], pairs[2 * j + 1]);
                                gxrow[j] += go[j] * (1.0 - ta * ta) * sb;
                                gxrow[h + j] += go[j] * ta * sb * (1.0 - sb);
                            }
                        }
                    }
                }
            }
            Op::ConcatFeatures { inputs } => {
                let total = node.value.last_dim();
                let rows = node.value.len() / total;
                let mut offset = 0;
                for v in inputs {
                    let w = self.value(*v).last_dim();
                    if let Some(gv) = self.slot(grads, *v) {
                        for r in 0..rows {
                            add_into(
                                &mut gv[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatTime { inputs } => {
                let mut offset = 0;
                for v in inputs {
                    let n = self.value(*v).len();
                    if let Some(gv) = self.slot(grads, *v) {
                        add_into(gv, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::SliceTime { input, start } => {
                let row: usize = node.value.shape()[1..].iter().product();
                if let Some(gx) = self.slot(grads, *input) {
                    add_into(&mut gx[start * row..start * row + g.len()], g);
                }
            }
            Op::Reshape { input } => {
                if let Some(gx) = self.slot(grads, *input) {
                    add_into(gx, g);
                }
            }
            Op::Embedding { table, ids } => {
                let f = self.value(*table).last_dim();
                if let Some(gt) = self.slot(grads, *table) {
                    for (&id, go) in ids.iter().zip(g.chunks_exact(f)) {
                        add_into(&mut gt[id * f..(id + 1) * f], go);
                    }
                }
            }
            Op::ScalarExpand { track, basis } => {
                let tr = self.value(*track).data();
                let bs = self.value(*basis).data();
                let f = bs.len();
                if let Some(gt) = self.slot(grads, *track) {
                    for (gv, go) in gt.iter_mut().zip(g.chunks_exact(f)) {
                        *gv += go.iter().zip(bs).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                if let Some(gb) = self.slot(grads, *basis) {
                    for (&x, go) in tr.iter().zip(g.chunks_exact(f)) {
                        for (gv, &o) in gb.iter_mut().zip(go) {
                            *gv += x * o;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if let Some(gv) = self.slot(grads, *v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::ScaleShift { input, scale } => {
                if let Some(gx) = self.slot(grads, *input) {
                    for (gv, &o) in gx.iter_mut().zip(g) {
                        *gv += o * scale;
                    }
                }
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let c = 2.0 * g[0] / p.len() as f64;
                if let Some(gp) = self.slot(grads, *pred) {
                    for ((gv, a), b) in gp.iter_mut().zip(p).zip(t) {
                        *gv += c * (a - b);
                    }
                }
                if let Some(gt) = self.slot(grads, *target) {
                    for ((gv, a), b) in gt.iter_mut().zip(p).zip(t) {
                        *gv -= c * (a - b);
                    }
                }
            }
            Op::Mean { inputs } => {
                let c = g[0] / inputs.len() as f64;
                for v in inputs {
                    if let Some(gv) = self.slot(grads, *v) {
                        gv[0] += c;
                    }
                }
            }
            Op::CgmHead {
                raw,
                prev,
                k,
                env_scale,
            } => {
                let k = *k;
                let r = self.value(*raw).data();
                if let Some(gp) = self.slot(grads, *prev) {
                    for (gv, go) in gp.iter_mut().zip(g.chunks_exact(3 * k)) {
                        *gv += go[k..2 * k].iter().sum::<f64>();
                    }
                }
                if let Some(gr) = self.slot(grads, *raw) {
                    for ((grow, go), rrow) in gr
                        .chunks_exact_mut(3 * k)
                        .zip(g.chunks_exact(3 * k))
                        .zip(r.chunks_exact(3 * k))
                    {
                        for j in 0..k {
                            grow[j] += go[j];
                            grow[k + j] += go[k + j] * env_scale;
                            grow[2 * k + j] += go[2 * k + j] * env_scale * rrow[2 * k + j].exp();
                        }
                    }
                }
            }
            Op::CgmNll { params, target, k } => {
                let k = *k;
                let pv = self.value(*params).data();
                let tv = self.value(*target).data();
                let c = g[0] / tv.len() as f64;
                let mut gp = vec![0.0; pv.len()];
                let mut gt = vec![0.0; tv.len()];
                for ((row, grow), (&x, gx)) in pv
                    .chunks_exact(3 * k)
                    .zip(gp.chunks_exact_mut(3 * k))
                    .zip(tv.iter().zip(gt.iter_mut()))
                {
                    let (gl, rest) = grow.split_at_mut(k);
                    let (gm, gs) = rest.split_at_mut(k);
                    *gx += bin_nll_grad(&row[..k], &row[k..2 * k], &row[2 * k..], x, c, gl, gm, gs);
                }
                if let Some(dst) = self.slot(grads, *params) {
                    add_into(dst, &gp);
                }
                if let Some(dst) = self.slot(grads, *target) {
                    add_into(dst, &gt);
                }
            }
            Op::CgmMode { params, k, picks } => {
                let k = *k;
                if let Some(gp) = self.slot(grads, *params) {
                    for (bin, (&j, &o)) in picks.iter().zip(g).enumerate() {
                        gp[bin * 3 * k + k + j] += o;
                    }
                }
            }
        }
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
