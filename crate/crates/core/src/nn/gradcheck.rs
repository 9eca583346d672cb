//! Finite-difference validation of analytic gradients.
//!
//! The objective is `f = sum(forward(x) * U)` for a fixed seeded upstream
//! tensor `U`, so `df/de` equals the backward pass fed with `U`. Central
//! differences use `eps = 1e-5` in double precision. Elements whose
//! perturbation flips a discrete routing decision (a ReLU sign or a pool
//! argmax) sit on a non-differentiable kink; they are skipped and counted.

use super::layer::{Layer, LayerSpec};
use crate::rng::SplitMix64;
use crate::tensor::{ShapeError, Tensor};

pub const FD_EPSILON: f64 = 1e-5;

/// Maximum element count the exhaustive checker accepts.
const EXHAUSTIVE_LIMIT: usize = 10_000;

/// Gradients whose analytic and numeric values are both below this are
/// accepted as zero. Central differences bottom out at roundoff of about
/// `|f| * 2^-52 / eps = 1e-11`, so exact zeros (e.g. a conv bias feeding
/// batch norm, which is shift-invariant) would otherwise read as noise.
const ZERO_GRAD_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Elements skipped because a kink crossed between the two evaluations.
    pub skipped: usize,
}

/// Checks one layer built from `spec` with seeded parameters.
pub fn grad_check(
    spec: &LayerSpec,
    input: &Tensor<f64>,
    seed: u64,
) -> Result<GradCheckReport, ShapeError> {
    let mut layer: Layer<f64> = spec.build(&mut SplitMix64::new(seed))?;
    grad_check_layers(std::slice::from_mut(&mut layer), input, seed ^ 0x5eed)
}

/// Exhaustive check over every input and parameter element of a layer stack.
pub fn grad_check_layers(
    layers: &mut [Layer<f64>],
    input: &Tensor<f64>,
    upstream_seed: u64,
) -> Result<GradCheckReport, ShapeError> {
    let param_elems: usize = layers.iter_mut().map(total_param_elems).sum();
    let total = input.len() + param_elems;
    if total > EXHAUSTIVE_LIMIT {
        return Err(ShapeError::Invalid(format!(
            "{total} elements exceed the exhaustive grad-check limit of {EXHAUSTIVE_LIMIT}"
        )));
    }
    grad_check_layers_sampled(layers, input, upstream_seed, usize::MAX)
}

/// Like [`grad_check_layers`] but perturbing at most `max_param_elems`
/// parameter elements, taken at a uniform stride across the concatenated
/// parameter vector. Every input element is always checked.
pub fn grad_check_layers_sampled(
    layers: &mut [Layer<f64>],
    input: &Tensor<f64>,
    upstream_seed: u64,
    max_param_elems: usize,
) -> Result<GradCheckReport, ShapeError> {
    let dropout_marks: Vec<Option<u64>> = layers.iter().map(|l| l.dropout_calls()).collect();

    let mut x = input.clone();
    let base_out = run_forward(layers, &x, &dropout_marks)?;
    let base_sig = signatures(layers);

    let mut rng = SplitMix64::from_stream(upstream_seed, &[0x9d0c]);
    let upstream = Tensor::new(
        base_out.shape().to_vec(),
        (0..base_out.len()).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )?;

    // Analytic gradients: one backward sweep from the cached forward.
    for layer in layers.iter_mut() {
        layer.for_each_param(&mut |p| p.zero_grad());
    }
    let mut g = upstream.clone();
    for layer in layers.iter_mut().rev() {
        g = layer.backward(&g)?;
    }
    let analytic_input = g;
    let mut analytic_params: Vec<f64> = Vec::new();
    for layer in layers.iter_mut() {
        layer.for_each_param(&mut |p| analytic_params.extend(p.grad.data()));
    }

    let param_total = analytic_params.len();
    let stride = if max_param_elems == usize::MAX || param_total <= max_param_elems {
        1
    } else {
        param_total.div_ceil(max_param_elems)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };

    let eval = |layers: &mut [Layer<f64>],
                    x: &Tensor<f64>|
     -> Result<(f64, Vec<Vec<u32>>), ShapeError> {
        let out = run_forward(layers, x, &dropout_marks)?;
        let f = out
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(&y, &u)| y * u)
            .sum();
        Ok((f, signatures(layers)))
    };

    // Input elements.
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + FD_EPSILON;
        let (f_plus, sig_plus) = eval(layers, &x)?;
        x.data_mut()[i] = orig - FD_EPSILON;
        let (f_minus, sig_minus) = eval(layers, &x)?;
        x.data_mut()[i] = orig;
        record(
            &mut report,
            analytic_input.data()[i],
            f_plus,
            f_minus,
            &sig_plus,
            &sig_minus,
            &base_sig,
        );
    }

    // Parameter elements, strided sample across the concatenated vector.
    let mut global = 0usize;
    for li in 0..layers.len() {
        let counts = param_lens(&mut layers[li]);
        for (pi, &len) in counts.iter().enumerate() {
            for ei in 0..len {
                let this = global;
                global += 1;
                if this % stride != 0 {
                    continue;
                }
                let orig = with_param_elem(&mut layers[li], pi, ei, |v| {
                    let o = *v;
                    *v = o + FD_EPSILON;
                    o
                });
                let (f_plus, sig_plus) = eval(layers, &x)?;
                with_param_elem(&mut layers[li], pi, ei, |v| *v = orig - FD_EPSILON);
                let (f_minus, sig_minus) = eval(layers, &x)?;
                with_param_elem(&mut layers[li], pi, ei, |v| *v = orig);
                record(
                    &mut report,
                    analytic_params[this],
                    f_plus,
                    f_minus,
                    &sig_plus,
                    &sig_minus,
                    &base_sig,
                );
            }
        }
    }

    // Leave the stack in its base state for any caller that keeps using it.
    run_forward(layers, &x, &dropout_marks)?;
    Ok(report)
}

fn record(
    report: &mut GradCheckReport,
    analytic: f64,
    f_plus: f64,
    f_minus: f64,
    sig_plus: &[Vec<u32>],
    sig_minus: &[Vec<u32>],
    base_sig: &[Vec<u32>],
) {
    if sig_plus != base_sig || sig_minus != base_sig {
        report.skipped += 1;
        return;
    }
    let numeric = (f_plus - f_minus) / (2.0 * FD_EPSILON);
    if analytic.abs() < ZERO_GRAD_TOL && numeric.abs() < ZERO_GRAD_TOL {
        report.checked += 1;
        return;
    }
    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
    if rel > report.max_rel_err {
        report.max_rel_err = rel;
    }
    report.checked += 1;
}

fn run_forward(
    layers: &mut [Layer<f64>],
    input: &Tensor<f64>,
    dropout_marks: &[Option<u64>],
) -> Result<Tensor<f64>, ShapeError> {
    for (layer, mark) in layers.iter_mut().zip(dropout_marks) {
        if let Some(calls) = mark {
            layer.rewind_dropout(*calls);
        }
    }
    let mut cur = input.clone();
    for layer in layers.iter_mut() {
        cur = layer.forward_train(&cur)?;
    }
    Ok(cur)
}

fn signatures(layers: &[Layer<f64>]) -> Vec<Vec<u32>> {
    layers
        .iter()
        .filter_map(|l| l.decision_signature())
        .collect()
}

fn total_param_elems(layer: &mut Layer<f64>) -> usize {
    let mut n = 0;
    layer.for_each_param(&mut |p| n += p.value.len());
    n
}

fn param_lens(layer: &mut Layer<f64>) -> Vec<usize> {
    let mut lens = Vec::new();
    layer.for_each_param(&mut |p| lens.push(p.value.len()));
    lens
}

fn with_param_elem<R>(
    layer: &mut Layer<f64>,
    param_idx: usize,
    elem_idx: usize,
    f: impl FnOnce(&mut f64) -> R,
) -> R {
    let mut f = Some(f);
    let mut out = None;
    let mut i = 0;
    layer.for_each_param(&mut |p| {
        if i == param_idx {
            out = Some(f.take().expect("visited once")(&mut p.value.data_mut()[elem_idx]));
        }
        i += 1;
    });
    out.expect("parameter index in range")
}
