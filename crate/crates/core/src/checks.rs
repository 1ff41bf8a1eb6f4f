//! Finite-difference gradient suite over every differentiable building block
//! and the full recurrent model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::layers::{convlstm_step, ConvLstmParams, ConvLstmStateVars};
use crate::model::{ArchitectureConfig, Crnn};
use crate::tensor::gradcheck::{finite_difference_gradient, max_relative_error, relative_error};
use crate::tensor::{Conv2dGeometry, Tape, Tensor, Var};
use crate::training::{batch_gradients, l2_loss_value};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Tolerance for single primitives and layers.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
/// Tolerance for the end-to-end model.
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Parameters sampled per end-to-end check.
pub const MODEL_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -2.0, 2.0, rng)
}

/// Uniform in ±[0.05, 2] so no element sits on the ReLU kink.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..2.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Compares tape gradients of `sum(build(inputs) ⊙ R)` against central
/// differences for every input, with `R` a fixed random projection.
fn check_graph(
    name: &str,
    seed: u64,
    inputs: Vec<Tensor>,
    rng: &mut ChaCha8Rng,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        tape.value(out).shape().to_vec()
    };
    let projection = uniform(&probe, rng);
    let objective = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let out = build(tape, vars)?;
        let r = tape.constant(projection.clone());
        let weighted = tape.mul(out, r)?;
        Ok(tape.sum(weighted))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = objective(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let numeric = finite_difference_gradient(
            |x| {
                let mut tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| tape.constant(if j == i { x.clone() } else { t.clone() }))
                    .collect();
                let loss = objective(&mut tape, &vars).expect("shapes already validated");
                tape.value(loss).item()
            },
            &inputs[i],
            FD_STEP,
        );
        let analytic = grads.get(*var).expect("every input is a parameter");
        worst = worst.max(max_relative_error(analytic, &numeric));
    }
    Ok(GradCheck {
        name: name.into(),
        seed,
        max_rel_error: worst,
        tolerance: PRIMITIVE_TOLERANCE,
    })
}

/// Dense, conv2d, every elementwise op, pixel shuffle and a ConvLSTM step.
pub fn primitive_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();

    let ins = vec![uniform(&[3, 5], r), uniform(&[5, 4], r), uniform(&[4], r)];
    out.push(check_graph("dense", seed, ins, r, |t, v| t.dense(v[0], v[1], v[2]))?);

    let ins = vec![uniform(&[2, 3, 6, 5], r), uniform(&[4, 3, 4, 4], r), uniform(&[4], r)];
    out.push(check_graph("conv2d stride 2 pad 1", seed, ins, r, |t, v| {
        t.conv2d(v[0], v[1], v[2], Conv2dGeometry::new(2, 1))
    })?);
    let ins = vec![uniform(&[1, 2, 5, 4], r), uniform(&[3, 2, 3, 3], r), uniform(&[3], r)];
    out.push(check_graph("conv2d stride 1 pad 1", seed, ins, r, |t, v| {
        t.conv2d(v[0], v[1], v[2], Conv2dGeometry::new(1, 1))
    })?);

    let shape = [2, 3, 4];
    let ins = vec![uniform(&shape, r), uniform(&shape, r)];
    out.push(check_graph("add", seed, ins, r, |t, v| t.add(v[0], v[1]))?);
    let ins = vec![uniform(&shape, r), uniform(&shape, r)];
    out.push(check_graph("sub", seed, ins, r, |t, v| t.sub(v[0], v[1]))?);
    let ins = vec![uniform(&shape, r), uniform(&shape, r)];
    out.push(check_graph("mul", seed, ins, r, |t, v| t.mul(v[0], v[1]))?);
    let ins = vec![uniform(&shape, r)];
    out.push(check_graph("scale", seed, ins, r, |t, v| Ok(t.scale(v[0], -1.7)))?);
    let ins = vec![uniform(&shape, r)];
    out.push(check_graph("sigmoid", seed, ins, r, |t, v| Ok(t.sigmoid(v[0])))?);
    let ins = vec![uniform(&shape, r)];
    out.push(check_graph("tanh", seed, ins, r, |t, v| Ok(t.tanh(v[0])))?);
    let ins = vec![off_kink(&shape, r)];
    out.push(check_graph("relu", seed, ins, r, |t, v| Ok(t.relu(v[0])))?);

    let ins = vec![uniform(&[2, 8, 3, 2], r)];
    out.push(check_graph("pixel_shuffle", seed, ins, r, |t, v| {
        t.pixel_shuffle(v[0], 2)
    })?);

    let (n, c_in, c_h, k, h, w) = (2, 2, 3, 3, 4, 3);
    let mut ins = vec![
        uniform(&[n, c_in, h, w], r),
        uniform(&[n, c_h, h, w], r),
        uniform(&[n, c_h, h, w], r),
    ];
    ins.extend((0..4).map(|_| uniform(&[c_h, c_in + c_h, k, k], r).map(|v| 0.5 * v)));
    ins.extend((0..4).map(|_| uniform(&[c_h], r)));
    let template = ConvLstmParams::zeros(c_in, c_h, k);
    out.push(check_graph("convlstm_step", seed, ins, r, |t, v| {
        let cell = template.bind_vars(t, [v[3], v[4], v[5], v[6]], [v[7], v[8], v[9], v[10]])?;
        let state = ConvLstmStateVars { h: v[1], c: v[2] };
        let step = convlstm_step(t, v[0], state, &cell, 1)?;
        t.concat(&[step.state.h, step.state.c], 1)
    })?);
    Ok(out)
}

/// Loss gradient of the [`ArchitectureConfig::tiny`] model (8×8 grid, r=2,
/// T=3, one sequence) on [`MODEL_SAMPLES`] randomly chosen parameters.
pub fn model_check(seed: u64) -> Result<GradCheck> {
    let cfg = ArchitectureConfig::tiny(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Crnn::init(cfg.clone(), seed)?;
    let inputs = uniform(&[1, cfg.n_steps, cfg.n_features], &mut rng);
    let labels = Tensor::uniform(&[1, cfg.n_steps, cfg.n_sp()], -0.5, 0.5, &mut rng);
    let (_, grads) = batch_gradients(&model, &inputs, &labels)?;

    let sizes: Vec<usize> = model.params().tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst = 0.0f64;
    for _ in 0..MODEL_SAMPLES {
        let mut flat = rng.gen_range(0..total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let orig = model.params().tensors()[which].data()[flat];
        let mut loss_at = |v: f64| -> Result<f64> {
            model.params_mut().tensors_mut()[which].data_mut()[flat] = v;
            l2_loss_value(&model.predict(&inputs)?, &labels)
        };
        let up = loss_at(orig + FD_STEP)?;
        let down = loss_at(orig - FD_STEP)?;
        loss_at(orig)?;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grads[which].data()[flat], numeric));
    }
    Ok(GradCheck {
        name: "crnn (8x8, r=2, T=3)".into(),
        seed,
        max_rel_error: worst,
        tolerance: MODEL_TOLERANCE,
    })
}

/// Primitive and model checks for every seed in `seeds`.
pub fn gradient_suite(seeds: impl IntoIterator<Item = u64>) -> Result<Vec<GradCheck>> {
    let mut all = Vec::new();
    for seed in seeds {
        all.extend(primitive_checks(seed)?);
        all.push(model_check(seed)?);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_seed_passes() {
        for c in gradient_suite([7]).unwrap() {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ins = vec![uniform(&[4], &mut rng)];
        // Detaching half the graph makes the tape gradient disagree with the
        // numeric one.
        let c = check_graph("detached", 0, ins, &mut rng, |t, v| {
            let frozen = t.constant(t.value(v[0]).clone());
            t.mul(v[0], frozen)
        })
        .unwrap();
        assert!(!c.passed());
    }
}
