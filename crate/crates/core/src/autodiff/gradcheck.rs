//! Central finite-difference checks for tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element)` of the worst disagreement.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares reverse-mode gradients of a scalar graph with central differences.
///
/// `build` receives a fresh tape and one parameter leaf per entry of `inputs`
/// and must return a scalar node. Every element of every input is probed.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(i, t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = build(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Shape("gradient check needs a scalar output".into()));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(inputs)?;
    let grads = tape.backward(out, 1.0);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + step;
            let (t, _, o) = eval(&probe)?;
            let up = t.value(o).data()[0];
            probe[i].data_mut()[j] = orig - step;
            let (t, _, o) = eval(&probe)?;
            let down = t.value(o).data()[0];
            probe[i].data_mut()[j] = orig;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic[j];
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Reduces `v` to a scalar by a squared distance to a fixed random target,
/// so every output element carries a distinct upstream gradient.
pub fn probe_loss(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(v).to_vec();
    let target = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let c = tape.constant(target)?;
    tape.mse(v, c)
}

/// Tensor of uniform values in `[-scale, scale]`.
pub fn random_tensor(shape: &[usize], scale: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Step used by [`primitive_suite`] and the end-to-end model check.
pub const SUITE_STEP: f64 = 1e-6;

type Case = (&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

/// Finite-difference check of every tape primitive on small random inputs,
/// each reduced to a scalar through [`probe_loss`] unless it is one already.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use crate::autodiff::conv::{Alignment, ConvSpec, Padding};
    use crate::autodiff::tape::ActivationKind;

    let conv = |spec: ConvSpec, blocks: usize| {
        Box::new(move |t: &mut Tape, v: &[Var]| {
            let y = t.conv2d_blocked(v[0], v[1], v[2], spec, blocks)?;
            probe_loss(t, y, 1)
        }) as Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>
    };
    let conv_shapes = |spec: ConvSpec, t: usize, f: usize| {
        vec![vec![t, f, spec.in_features], spec.weight_shape().to_vec(), vec![spec.out_features]]
    };
    let causal = ConvSpec::time(2, 2, Alignment::CausalTime, 2, 3);
    let symmetric = ConvSpec::time(2, 4, Alignment::SymmetricTime, 3, 2);
    let freq = ConvSpec::frequency(2, 2, 2, 3);
    let grid = ConvSpec {
        kernel: (2, 3),
        dilation: (2, 2),
        padding: Padding::SameFrequency,
        alignment: Alignment::CausalTime,
        in_features: 2,
        out_features: 2,
    };
    let activation = |kind: ActivationKind| {
        Box::new(move |t: &mut Tape, v: &[Var]| {
            let y = t.activation(v[0], kind)?;
            probe_loss(t, y, 2)
        }) as Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>
    };

    let cases: Vec<Case> = vec![
        ("conv2d causal time", conv_shapes(causal, 5, 3), conv(causal, 1)),
        ("conv2d symmetric time", conv_shapes(symmetric, 6, 2), conv(symmetric, 1)),
        ("conv2d frequency same padding", conv_shapes(freq, 2, 5), conv(freq, 1)),
        ("conv2d 2x3 time-frequency", conv_shapes(grid, 4, 4), conv(grid, 1)),
        ("conv2d blocked", conv_shapes(grid, 3, 6), conv(grid, 2)),
        (
            "affine",
            vec![vec![3, 2, 4], vec![4, 3], vec![3]],
            Box::new(|t, v| {
                let y = t.affine(v[0], v[1], v[2])?;
                probe_loss(t, y, 3)
            }),
        ),
        ("relu", vec![vec![3, 4, 2]], activation(ActivationKind::Relu)),
        ("tanh", vec![vec![3, 4, 2]], activation(ActivationKind::Tanh)),
        ("gated", vec![vec![3, 4, 4]], activation(ActivationKind::Gated)),
        (
            "concat features",
            vec![vec![2, 3, 1], vec![2, 3, 2]],
            Box::new(|t, v| {
                let y = t.concat_features(&[v[0], v[1], v[0]])?;
                probe_loss(t, y, 4)
            }),
        ),
        (
            "concat time",
            vec![vec![1, 3, 2], vec![2, 3, 2]],
            Box::new(|t, v| {
                let y = t.concat_time(&[v[1], v[0]])?;
                probe_loss(t, y, 5)
            }),
        ),
        (
            "slice time",
            vec![vec![5, 2, 2]],
            Box::new(|t, v| {
                let y = t.slice_time(v[0], 1, 3)?;
                probe_loss(t, y, 6)
            }),
        ),
        (
            "reshape",
            vec![vec![2, 3, 2]],
            Box::new(|t, v| {
                let y = t.reshape(v[0], &[3, 4])?;
                let z = t.activation(y, ActivationKind::Tanh)?;
                probe_loss(t, z, 7)
            }),
        ),
        (
            "embedding",
            vec![vec![4, 3]],
            Box::new(|t, v| {
                let y = t.embedding(v[0], &[2, 0, 2, 3, 1])?;
                probe_loss(t, y, 8)
            }),
        ),
        (
            "scalar expand",
            vec![vec![4, 1], vec![1, 3]],
            Box::new(|t, v| {
                let y = t.scalar_expand(v[0], v[1])?;
                probe_loss(t, y, 9)
            }),
        ),
        (
            "add and scale shift",
            vec![vec![2, 3], vec![2, 3]],
            Box::new(|t, v| {
                let s = t.scale_shift(v[1], -1.7, 0.4)?;
                let y = t.add(v[0], s)?;
                probe_loss(t, y, 10)
            }),
        ),
        (
            "mse and mean",
            vec![vec![3, 2], vec![3, 2], vec![4]],
            Box::new(|t, v| {
                let a = t.mse(v[0], v[1])?;
                let c = t.constant(Tensor::zeros([4]))?;
                let b = t.mse(v[2], c)?;
                t.mean(&[a, b, a])
            }),
        ),
        (
            "cgm head and nll",
            vec![vec![4, 9], vec![4], vec![4]],
            Box::new(|t, v| {
                let p = t.cgm_head(v[0], v[1], 3, 1.5, 0.1)?;
                t.cgm_nll(p, v[2], 3)
            }),
        ),
        (
            "cgm mode",
            vec![vec![5, 6], vec![5]],
            Box::new(|t, v| {
                let p = t.cgm_head(v[0], v[1], 2, 2.0, 0.1)?;
                let m = t.cgm_mode(p, 2)?;
                probe_loss(t, m, 11)
            }),
        ),
    ];

    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, shapes, build))| {
            let inputs: Vec<Tensor> = shapes
                .iter()
                .enumerate()
                .map(|(j, s)| random_tensor(s, 1.0, seed ^ ((i as u64) << 8 | j as u64)))
                .collect();
            Ok((name, check_gradients(&inputs, SUITE_STEP, build)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        for (name, report) in primitive_suite(17).unwrap() {
            assert!(report.checked > 0, "{name}");
            assert!(report.max_rel_error < 1e-4, "{name}: {report:?}");
        }
    }

    #[test]
    fn detached_input_gets_zero_gradient() {
        let x = random_tensor(&[3], 1.0, 0);
        let report = check_gradients(&[x], SUITE_STEP, |t, v| {
            let d = t.detach(v[0])?;
            let c = t.constant(Tensor::zeros([3]))?;
            t.mse(d, c)
        });
        // The numeric gradient is nonzero while the analytic one is cut.
        assert!(report.unwrap().max_rel_error > 0.5);
    }
}
