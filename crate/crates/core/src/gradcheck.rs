//! Finite-difference verification of the autodiff rules.
//!
//! Every check runs in `f64` with central differences and compares
//! against the tape's vector-Jacobian product for a fixed random
//! projection of the output.

use rand::seq::index::sample;
use rand::{Rng as _, RngCore};
use serde::Serialize;

use crate::autodiff::{OpKind, Tape, Var};
use crate::blocks::{ForwardCtx, Model, ModelSpec, Variant};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Tolerance for individual operations.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for whole networks.
pub const NETWORK_TOLERANCE: f64 = 1e-3;
/// Gradient magnitudes below this are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub checked: usize,
    /// Perturbations discarded because they crossed a ReLU kink.
    pub skipped: usize,
    pub worst_rel_error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst_rel_error < self.tolerance
    }

    fn merge(self, other: CheckOutcome) -> CheckOutcome {
        CheckOutcome {
            name: self.name,
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
            worst_rel_error: self.worst_rel_error.max(other.worst_rel_error),
            tolerance: self.tolerance.min(other.tolerance),
        }
    }
}

/// Which input elements to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// A random subset of this many elements across all inputs.
    Sample(usize),
}

/// Checks `build` (a function of `inputs`) against central differences.
///
/// Gradients are taken for the inputs flagged in `wrt`; the output is
/// projected onto fixed random weights so non-scalar outputs are covered.
#[allow(clippy::too_many_arguments)]
pub fn check<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    wrt: &[bool],
    build: F,
    coverage: Coverage,
    tolerance: f64,
    fault: Option<OpKind>,
    rng: &mut Rng,
) -> Result<CheckOutcome>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    assert_eq!(inputs.len(), wrt.len());
    let mut tape = Tape::new();
    if let Some(kind) = fault {
        tape.inject_fault(kind);
    }
    let vars: Vec<Var> = inputs
        .iter()
        .zip(wrt)
        .map(|(t, &w)| {
            if w {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect();
    let out = build(&mut tape, &vars)?;
    let out_shape = tape.value(out).shape().to_vec();
    let projection = Tensor::from_fn(out_shape, |_| rng.random_range(0.5..1.5));
    let grads = tape.backward_from(out, projection.clone())?;
    drop(tape);

    let objective = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = values.iter().map(|v| t.constant(v.clone())).collect();
        let o = build(&mut t, &vs)?;
        Ok(t.value(o)
            .data()
            .iter()
            .zip(projection.data())
            .map(|(a, b)| a * b)
            .sum())
    };

    let candidates: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .filter(|(i, _)| wrt[*i])
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    let chosen: Vec<(usize, usize)> = match coverage {
        Coverage::Sample(n) if n < candidates.len() => {
            let mut picks = sample(rng, candidates.len(), n).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|k| candidates[k]).collect()
        }
        _ => candidates,
    };

    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    for &(i, j) in &chosen {
        let original = work[i].data()[j];
        work[i].data_mut()[j] = original + FD_STEP;
        let plus = objective(&work)?;
        work[i].data_mut()[j] = original - FD_STEP;
        let minus = objective(&work)?;
        work[i].data_mut()[j] = original;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = grads.get(vars[i]).expect("requested gradient").data()[j];
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(CheckOutcome {
        name: name.to_string(),
        checked: chosen.len(),
        skipped: 0,
        worst_rel_error: worst,
        tolerance,
    })
}

fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// One finite-difference check per differentiable operation.
pub fn op_suite(seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::derive(seed, "gradcheck-ops");
    let mut reports = Vec::new();
    for kind in OpKind::DIFFERENTIABLE {
        reports.push(check_op(kind, &mut rng, fault)?);
    }
    Ok(reports)
}

/// Finite-difference check of one operation on random inputs in [-1, 1].
pub fn check_op(kind: OpKind, rng: &mut Rng, fault: Option<OpKind>) -> Result<CheckOutcome> {
    let name = kind.name();
    let tol = OP_TOLERANCE;
    let all = Coverage::All;
    let outcome = match kind {
        OpKind::Leaf => unreachable!("leaves have no backward rule"),
        OpKind::Conv2d => {
            let same = check(
                name,
                &[
                    uniform(&[2, 2, 5, 5], rng),
                    uniform(&[3, 2, 3, 3], rng),
                    uniform(&[3], rng),
                ],
                &[true, true, true],
                |t, v| t.conv2d(v[0], v[1], v[2], 1),
                all,
                tol,
                fault,
                rng,
            )?;
            let pointwise = check(
                name,
                &[
                    uniform(&[2, 4, 3, 3], rng),
                    uniform(&[2, 4, 1, 1], rng),
                    uniform(&[2], rng),
                ],
                &[true, true, true],
                |t, v| t.conv2d(v[0], v[1], v[2], 0),
                all,
                tol,
                fault,
                rng,
            )?;
            same.merge(pointwise)
        }
        OpKind::MatMul => {
            let plain = check(
                name,
                &[uniform(&[3, 4], rng), uniform(&[4, 5], rng)],
                &[true, true],
                |t, v| t.matmul(v[0], v[1]),
                all,
                tol,
                fault,
                rng,
            )?;
            let mut merged = plain;
            for (ta, tb) in [(true, false), (false, true), (true, true)] {
                let a_shape = if ta { [2, 4, 3] } else { [2, 3, 4] };
                let b_shape = if tb { [2, 5, 4] } else { [2, 4, 5] };
                let batched = check(
                    name,
                    &[uniform(&a_shape, rng), uniform(&b_shape, rng)],
                    &[true, true],
                    |t, v| t.matmul_t(v[0], ta, v[1], tb),
                    all,
                    tol,
                    fault,
                    rng,
                )?;
                merged = merged.merge(batched);
            }
            merged
        }
        OpKind::Softmax => check(
            name,
            &[uniform(&[2, 3, 6], rng)],
            &[true],
            |t, v| t.softmax_rows(v[0]),
            all,
            tol,
            fault,
            rng,
        )?,
        OpKind::BatchNorm => {
            let mut merged: Option<CheckOutcome> = None;
            for training in [true, false] {
                let mut params = crate::autodiff::BatchNormParams::<f64>::new(3);
                params.running_mean = uniform(&[3], rng);
                params.running_var = Tensor::from_fn([3], |_| rng.random_range(0.5..1.5));
                let o = check(
                    name,
                    &[
                        uniform(&[2, 3, 3, 3], rng),
                        Tensor::from_fn([3], |_| rng.random_range(0.5..1.5)),
                        uniform(&[3], rng),
                    ],
                    &[true, true, true],
                    |t, v| Ok(t.batchnorm2d(v[0], v[1], v[2], &params, training)?.0),
                    all,
                    tol,
                    fault,
                    rng,
                )?;
                merged = Some(match merged {
                    Some(m) => m.merge(o),
                    None => o,
                });
            }
            merged.expect("two runs")
        }
        OpKind::Dropout => {
            let mask_seed = rng.random::<u64>();
            check(
                name,
                &[uniform(&[4, 8], rng)],
                &[true],
                |t, v| t.dropout(v[0], 0.3, true, &mut Rng::seed(mask_seed)),
                all,
                tol,
                fault,
                rng,
            )?
        }
        OpKind::GlobalAvgPool => check(
            name,
            &[uniform(&[2, 3, 4, 4], rng)],
            &[true],
            |t, v| t.global_avg_pool(v[0], 4),
            all,
            tol,
            fault,
            rng,
        )?,
        OpKind::Bce => {
            let pred = Tensor::from_fn([6], |_| rng.random_range(0.05..0.95));
            let target: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
            check(
                name,
                &[pred],
                &[true],
                |t, v| t.bce_loss(v[0], &target),
                all,
                tol,
                fault,
                rng,
            )?
        }
        OpKind::Add => check(
            name,
            &[uniform(&[3, 4], rng), uniform(&[3, 4], rng)],
            &[true, true],
            |t, v| t.add(v[0], v[1]),
            all,
            tol,
            fault,
            rng,
        )?,
        OpKind::Mul => check(
            name,
            &[uniform(&[3, 4], rng), uniform(&[3, 4], rng)],
            &[true, true],
            |t, v| t.mul(v[0], v[1]),
            all,
            tol,
            fault,
            rng,
        )?,
        OpKind::Scale => check(
            name,
            &[uniform(&[3, 4], rng)],
            &[true],
            |t, v| Ok(t.scale(v[0], -1.7)),
            all,
            tol,
            fault,
            rng,
        )?,
        OpKind::Relu => {
            // Keep inputs away from the kink.
            let x = Tensor::from_fn([4, 5], |_| {
                let v: f64 = rng.random_range(0.05..1.0);
                if rng.random::<bool>() {
                    v
                } else {
                    -v
                }
            });
            check(
                name,
                &[x],
                &[true],
                |t, v| Ok(t.relu(v[0])),
                all,
                tol,
                fault,
                rng,
            )?
        }
        OpKind::Sigmoid => check(
            name,
            &[uniform(&[4, 5], rng)],
            &[true],
            |t, v| Ok(t.sigmoid(v[0])),
            all,
            tol,
            fault,
            rng,
        )?,
        OpKind::Linear => check(
            name,
            &[
                uniform(&[3, 5], rng),
                uniform(&[2, 5], rng),
                uniform(&[2], rng),
            ],
            &[true, true, true],
            |t, v| t.linear(v[0], v[1], v[2]),
            all,
            tol,
            fault,
            rng,
        )?,
        OpKind::Sum => check(
            name,
            &[uniform(&[3, 4], rng)],
            &[true],
            |t, v| Ok(t.sum(v[0])),
            all,
            tol,
            fault,
            rng,
        )?,
        OpKind::Reshape => check(
            name,
            &[uniform(&[3, 4], rng)],
            &[true],
            |t, v| t.reshape(v[0], [2, 6]),
            all,
            tol,
            fault,
            rng,
        )?,
        OpKind::Attention => check(
            name,
            &[
                uniform(&[2, 2, 5], rng),
                uniform(&[2, 2, 5], rng),
                uniform(&[2, 3, 5], rng),
            ],
            &[true, true, true],
            |t, v| t.attention(v[0], v[1], v[2]),
            all,
            tol,
            fault,
            rng,
        )?,
        OpKind::GatedResidual => check(
            name,
            &[
                uniform(&[2, 3, 2], rng),
                uniform(&[2, 3, 2], rng),
                uniform(&[1], rng),
            ],
            &[true, true, true],
            |t, v| t.gated_residual(v[0], v[1], v[2]),
            all,
            tol,
            fault,
            rng,
        )?,
    };
    Ok(outcome)
}

/// Parameters perturbed per network check.
pub const NETWORK_SUBSAMPLE: usize = 200;

/// Finite-difference check of a whole network in training mode.
///
/// The objective is the mean BCE loss of a random batch. Every
/// non-local gate is set to `gate` so the attention path contributes,
/// and dropout draws the same mask on every evaluation.
///
/// With tens of thousands of ReLU units, a perturbation of `FD_STEP`
/// occasionally flips one of them, and the central difference then
/// straddles a kink where the loss is not differentiable. Such
/// parameters are detected by comparing the ReLU sign patterns of the two
/// evaluations, counted as skipped, and replaced by further random draws.
pub fn check_model(
    spec: &ModelSpec,
    batch: usize,
    gate: f64,
    subsample: usize,
    fault: Option<OpKind>,
    seed: u64,
) -> Result<CheckOutcome> {
    let mut rng = Rng::derive(seed, "gradcheck-model");
    let mut model = Model::<f64>::build(spec.clone(), &mut rng)?;
    for block in model.non_local_blocks_mut() {
        block.set_gamma(gate);
    }
    let s = spec.input_size;
    let x = Tensor::from_fn([batch, 1, s, s], |_| rng.random_range(0.0..1.0));
    let targets: Vec<f64> = (0..batch).map(|i| (i % 2) as f64).collect();
    let dropout_seed = rng.next_u64();

    let loss_of =
        |model: &Model<f64>, tape: &mut Tape<f64>, ctx: &mut ForwardCtx<'_, f64>| -> Result<Var> {
            let xv = tape.constant(x.clone());
            let p = model.forward(tape, xv, ctx)?;
            tape.bce_loss(p, &targets)
        };

    let mut tape = Tape::new();
    if let Some(kind) = fault {
        tape.inject_fault(kind);
    }
    let mut dropout = Rng::seed(dropout_seed);
    let mut ctx = ForwardCtx::train(&mut dropout);
    let loss = loss_of(&model, &mut tape, &mut ctx)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = ctx
        .params
        .iter()
        .map(|&v| grads.get(v).expect("parameter gradient").clone())
        .collect();
    drop(ctx);
    drop(tape);

    // Loss plus the on/off pattern of every ReLU output.
    let objective = |model: &Model<f64>| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let mut dropout = Rng::seed(dropout_seed);
        let mut ctx = ForwardCtx::train(&mut dropout);
        let loss = loss_of(model, &mut tape, &mut ctx)?;
        let pattern = tape
            .records()
            .filter(|r| r.op == OpKind::Relu)
            .flat_map(|r| tape.value(r.output).data().iter().map(|&v| v > 0.0))
            .collect();
        Ok((tape.value(loss).item(), pattern))
    };

    let candidates: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    let order = sample(&mut rng, candidates.len(), candidates.len()).into_vec();

    let (mut checked, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    for k in order {
        if checked == subsample {
            break;
        }
        let (i, j) = candidates[k];
        let original = model.params()[i].data()[j];
        model.params_mut()[i].data_mut()[j] = original + FD_STEP;
        let (plus, plus_pattern) = objective(&model)?;
        model.params_mut()[i].data_mut()[j] = original - FD_STEP;
        let (minus, minus_pattern) = objective(&model)?;
        model.params_mut()[i].data_mut()[j] = original;
        if plus_pattern != minus_pattern {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i].data()[j], numeric));
        checked += 1;
    }
    Ok(CheckOutcome {
        name: format!("network:{}", spec.variant),
        checked,
        skipped,
        worst_rel_error: worst,
        tolerance: NETWORK_TOLERANCE,
    })
}

/// Every operation check followed by a network check of each variant.
pub fn full_suite(seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckOutcome>> {
    let mut outcomes = op_suite(seed, fault)?;
    for variant in Variant::ALL {
        outcomes.push(check_model(
            &ModelSpec::new(variant),
            2,
            0.5,
            NETWORK_SUBSAMPLE,
            fault,
            seed,
        )?);
    }
    Ok(outcomes)
}
