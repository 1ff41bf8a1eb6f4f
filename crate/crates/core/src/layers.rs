//! Layer building blocks: dense and convolutional parameter sets, the
//! ConvLSTM cell, pixel shuffle and activation selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Conv2dGeometry, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    None,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::None => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        d_in: usize,
        d_out: usize,
    },
    Conv {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvLstm {
        c_in: usize,
        c_hidden: usize,
        kernel: usize,
        padding: usize,
    },
    PixelShuffle {
        r: usize,
    },
    /// Reinterprets the per-sample extent; `shape` excludes the batch axis.
    Reshape {
        shape: Vec<usize>,
    },
    Activation,
}

/// Static description of one layer, used for shape planning and reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(name: &str, kind: LayerKind, activation: Activation) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind,
            activation,
        }
    }

    /// Output shape (batch axis included) for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let batch = input[0];
        match &self.kind {
            LayerKind::Dense { d_in, d_out } => {
                if input.last() != Some(d_in) {
                    return Err(dim_err!("{}: input {input:?} does not end in {d_in}", self.name));
                }
                let mut out = input.to_vec();
                *out.last_mut().unwrap() = *d_out;
                Ok(out)
            }
            LayerKind::Conv {
                c_in,
                c_out,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 4 || input[1] != *c_in {
                    return Err(dim_err!("{}: expected [N, {c_in}, H, W], got {input:?}", self.name));
                }
                let (h, w) =
                    Conv2dGeometry::new(*stride, *padding).output_size((input[2], input[3]), (*kernel, *kernel))?;
                Ok(vec![batch, *c_out, h, w])
            }
            LayerKind::ConvLstm {
                c_in,
                c_hidden,
                kernel,
                padding,
            } => {
                if input.len() != 4 || input[1] != *c_in {
                    return Err(dim_err!("{}: expected [N, {c_in}, H, W], got {input:?}", self.name));
                }
                let (h, w) = Conv2dGeometry::new(1, *padding).output_size((input[2], input[3]), (*kernel, *kernel))?;
                if (h, w) != (input[2], input[3]) {
                    return Err(dim_err!(
                        "{}: padding {padding} does not preserve {}x{}",
                        self.name,
                        input[2],
                        input[3]
                    ));
                }
                Ok(vec![batch, *c_hidden, h, w])
            }
            LayerKind::PixelShuffle { r } => {
                if input.len() != 4 || *r == 0 || !input[1].is_multiple_of(r * r) {
                    return Err(dim_err!(
                        "{}: {input:?} channels not divisible by r^2 = {}",
                        self.name,
                        r * r
                    ));
                }
                Ok(vec![batch, input[1] / (r * r), input[2] * r, input[3] * r])
            }
            LayerKind::Reshape { shape } => {
                let have: usize = input[1..].iter().product();
                if have != shape.iter().product::<usize>() {
                    return Err(dim_err!("{}: cannot reshape {input:?} to [N, {shape:?}]", self.name));
                }
                let mut out = vec![batch];
                out.extend_from_slice(shape);
                Ok(out)
            }
            LayerKind::Activation => Ok(input.to_vec()),
        }
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `[d_in, d_out]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        DenseParams {
            weight: init_uniform(&[d_in, d_out], d_in, rng),
            bias: init_uniform(&[d_out], d_in, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `[c_out, c_in, k, k]`
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, rng: &mut R) -> Self {
        let fan_in = c_in * k * k;
        ConvParams {
            kernel: init_uniform(&[c_out, c_in, k, k], fan_in, rng),
            bias: init_uniform(&[c_out], fan_in, rng),
        }
    }
}

/// Gate kernels `[c_hidden, c_in + c_hidden, k, k]` and biases `[c_hidden]`
/// for the input (`i`), forget (`f`), candidate (`c`) and output (`o`) gates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmParams {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_c: Tensor,
    pub w_o: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

impl ConvLstmParams {
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_hidden: usize, k: usize, forget_bias: f64, rng: &mut R) -> Self {
        let shape = [c_hidden, c_in + c_hidden, k, k];
        let fan_in = (c_in + c_hidden) * k * k;
        ConvLstmParams {
            w_i: init_uniform(&shape, fan_in, rng),
            w_f: init_uniform(&shape, fan_in, rng),
            w_c: init_uniform(&shape, fan_in, rng),
            w_o: init_uniform(&shape, fan_in, rng),
            b_i: Tensor::zeros(&[c_hidden]),
            b_f: Tensor::full(&[c_hidden], forget_bias),
            b_c: Tensor::zeros(&[c_hidden]),
            b_o: Tensor::zeros(&[c_hidden]),
        }
    }

    pub fn zeros(c_in: usize, c_hidden: usize, k: usize) -> Self {
        let w = Tensor::zeros(&[c_hidden, c_in + c_hidden, k, k]);
        let b = Tensor::zeros(&[c_hidden]);
        ConvLstmParams {
            w_i: w.clone(),
            w_f: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_i: b.clone(),
            b_f: b.clone(),
            b_c: b.clone(),
            b_o: b,
        }
    }

    pub fn kernels(&self) -> [&Tensor; 4] {
        [&self.w_i, &self.w_f, &self.w_c, &self.w_o]
    }

    pub fn biases(&self) -> [&Tensor; 4] {
        [&self.b_i, &self.b_f, &self.b_c, &self.b_o]
    }

    /// Checks the shared-shape invariants; returns `(c_in, c_hidden, kernel)`.
    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        let s = self.w_i.shape();
        if s.len() != 4 || s[2] != s[3] {
            return Err(dim_err!("convlstm: gate kernel must be [Ch, Cin+Ch, k, k], got {s:?}"));
        }
        if self.kernels().iter().any(|k| k.shape() != s) {
            return Err(dim_err!("convlstm: gate kernels must share one shape"));
        }
        let c_hidden = s[0];
        if s[1] <= c_hidden {
            return Err(dim_err!("convlstm: kernel {s:?} leaves no input channels"));
        }
        if self.biases().iter().any(|b| b.shape() != [c_hidden]) {
            return Err(dim_err!("convlstm: every gate bias must have length {c_hidden}"));
        }
        Ok((s[1] - c_hidden, c_hidden, s[2]))
    }

    /// Records the eight tensors as trainable leaves plus the fused
    /// four-gate kernel and bias used by [`convlstm_step`].
    pub fn register(&self, tape: &mut Tape) -> Result<ConvLstmVars> {
        self.dims()?;
        let kernels = self.kernels().map(|t| tape.param(t.clone()));
        let biases = self.biases().map(|t| tape.param(t.clone()));
        self.bind_vars(tape, kernels, biases)
    }

    /// Builds the fused gate kernel and bias from already-recorded leaves.
    pub fn bind_vars(&self, tape: &mut Tape, kernels: [Var; 4], biases: [Var; 4]) -> Result<ConvLstmVars> {
        let (_, c_hidden, _) = self.dims()?;
        let fused_kernel = tape.concat(&kernels, 0)?;
        let fused_bias = tape.concat(&biases, 0)?;
        Ok(ConvLstmVars {
            kernels,
            biases,
            fused_kernel,
            fused_bias,
            c_hidden,
        })
    }
}

/// Tape handles for a registered [`ConvLstmParams`].
#[derive(Debug, Clone, Copy)]
pub struct ConvLstmVars {
    /// `[w_i, w_f, w_c, w_o]`
    pub kernels: [Var; 4],
    /// `[b_i, b_f, b_c, b_o]`
    pub biases: [Var; 4],
    fused_kernel: Var,
    fused_bias: Var,
    c_hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl ConvLstmState {
    pub fn zeros(n: usize, c_hidden: usize, h: usize, w: usize) -> Self {
        ConvLstmState {
            h: Tensor::zeros(&[n, c_hidden, h, w]),
            c: Tensor::zeros(&[n, c_hidden, h, w]),
        }
    }

    pub fn record(&self, tape: &mut Tape) -> Result<ConvLstmStateVars> {
        if self.h.shape() != self.c.shape() {
            return Err(dim_err!(
                "convlstm state: h {:?} and C {:?} differ",
                self.h.shape(),
                self.c.shape()
            ));
        }
        Ok(ConvLstmStateVars {
            h: tape.constant(self.h.clone()),
            c: tape.constant(self.c.clone()),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvLstmStateVars {
    pub h: Var,
    pub c: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvLstmGates {
    pub input: Var,
    pub forget: Var,
    pub candidate: Var,
    pub output: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvLstmStep {
    pub state: ConvLstmStateVars,
    pub gates: ConvLstmGates,
}

/// One ConvLSTM update with "same" padding:
///
/// ```text
/// i = σ(W_i * [x, h] + b_i)     f = σ(W_f * [x, h] + b_f)
/// c̃ = tanh(W_c * [x, h] + b_c)  o = σ(W_o * [x, h] + b_o)
/// C' = f ⊙ C + i ⊙ c̃            h' = o ⊙ tanh(C')
/// ```
pub fn convlstm_step(
    tape: &mut Tape,
    x: Var,
    state: ConvLstmStateVars,
    params: &ConvLstmVars,
    padding: usize,
) -> Result<ConvLstmStep> {
    let k_shape = tape.shape(params.fused_kernel).to_vec();
    let ch = params.c_hidden;
    let (xs, hs, cs) = (tape.shape(x), tape.shape(state.h), tape.shape(state.c));
    if xs.len() != 4 || hs != cs || hs.len() != 4 || hs[1] != ch {
        return Err(dim_err!(
            "convlstm: input {xs:?}, hidden {hs:?}, cell {cs:?} incompatible with {ch} hidden channels"
        ));
    }
    if xs[1] + ch != k_shape[1] {
        return Err(dim_err!(
            "convlstm: input has {} channels but kernels expect {}",
            xs[1],
            k_shape[1] - ch
        ));
    }
    if xs[0] != hs[0] || xs[2..] != hs[2..] {
        return Err(dim_err!(
            "convlstm: input {xs:?} not spatially congruent with state {hs:?}"
        ));
    }
    if 2 * padding + 1 != k_shape[2] {
        return Err(dim_err!(
            "convlstm: padding {padding} does not preserve size for kernel {}",
            k_shape[2]
        ));
    }
    let xh = tape.concat(&[x, state.h], 1)?;
    let pre = tape.conv2d(
        xh,
        params.fused_kernel,
        params.fused_bias,
        Conv2dGeometry::new(1, padding),
    )?;
    let pre_i = tape.narrow(pre, 1, 0, ch)?;
    let pre_f = tape.narrow(pre, 1, ch, ch)?;
    let pre_c = tape.narrow(pre, 1, 2 * ch, ch)?;
    let pre_o = tape.narrow(pre, 1, 3 * ch, ch)?;
    let input = tape.sigmoid(pre_i);
    let forget = tape.sigmoid(pre_f);
    let candidate = tape.tanh(pre_c);
    let output = tape.sigmoid(pre_o);
    let kept = tape.mul(forget, state.c)?;
    let written = tape.mul(input, candidate)?;
    let c = tape.add(kept, written)?;
    let squashed = tape.tanh(c);
    let h = tape.mul(output, squashed)?;
    Ok(ConvLstmStep {
        state: ConvLstmStateVars { h, c },
        gates: ConvLstmGates {
            input,
            forget,
            candidate,
            output,
        },
    })
}

/// Values of every gate for one step, for inspection outside a training tape.
#[derive(Debug, Clone)]
pub struct GateValues {
    pub input: Tensor,
    pub forget: Tensor,
    pub candidate: Tensor,
    pub output: Tensor,
}

/// Evaluates [`convlstm_step`] on plain tensors.
pub fn convlstm_step_values(
    x: &Tensor,
    state: &ConvLstmState,
    params: &ConvLstmParams,
) -> Result<(ConvLstmState, GateValues)> {
    let (_, _, k) = params.dims()?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape)?;
    let xv = tape.constant(x.clone());
    let sv = state.record(&mut tape)?;
    let step = convlstm_step(&mut tape, xv, sv, &vars, (k - 1) / 2)?;
    let g = step.gates;
    Ok((
        ConvLstmState {
            h: tape.value(step.state.h).clone(),
            c: tape.value(step.state.c).clone(),
        },
        GateValues {
            input: tape.value(g.input).clone(),
            forget: tape.value(g.forget).clone(),
            candidate: tape.value(g.candidate).clone(),
            output: tape.value(g.output).clone(),
        },
    ))
}

/// Checks that a ConvLSTM kernel supports "same" padding.
pub fn same_padding(kernel: usize) -> Result<usize> {
    if kernel.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "ConvLSTM kernel {kernel} must be odd for size-preserving padding"
        )));
    }
    Ok((kernel - 1) / 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kernels::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar4(v: f64) -> Tensor {
        Tensor::full(&[1, 1, 1, 1], v)
    }

    #[test]
    fn zero_params_zero_state() {
        let p = ConvLstmParams::zeros(1, 1, 1);
        let s = ConvLstmState::zeros(1, 1, 1, 1);
        let (next, g) = convlstm_step_values(&scalar4(0.7), &s, &p).unwrap();
        assert_eq!(g.input.item(), 0.5);
        assert_eq!(g.forget.item(), 0.5);
        assert_eq!(g.output.item(), 0.5);
        assert_eq!(g.candidate.item(), 0.0);
        assert_eq!(next.c.item(), 0.0);
        assert_eq!(next.h.item(), 0.0);
    }

    #[test]
    fn zero_params_carry_cell() {
        let p = ConvLstmParams::zeros(1, 1, 1);
        let c = 1.3;
        let s = ConvLstmState {
            h: scalar4(0.0),
            c: scalar4(c),
        };
        let (next, _) = convlstm_step_values(&scalar4(-0.4), &s, &p).unwrap();
        assert_eq!(next.c.item(), 0.5 * c);
        assert_eq!(next.h.item(), 0.5 * (0.5 * c).tanh());
    }

    #[test]
    fn scalar_case_matches_plain_lstm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut p = ConvLstmParams::init(1, 1, 1, 0.0, &mut rng);
            for b in [&mut p.b_i, &mut p.b_f, &mut p.b_c, &mut p.b_o] {
                *b = Tensor::uniform(&[1], -1.0, 1.0, &mut rng);
            }
            let (x, h, c) = (
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-2.0..2.0),
            );
            let s = ConvLstmState {
                h: scalar4(h),
                c: scalar4(c),
            };
            let (next, _) = convlstm_step_values(&scalar4(x), &s, &p).unwrap();
            // weights are [1, 2, 1, 1]: element 0 multiplies x, element 1 multiplies h
            let gate = |w: &Tensor, b: &Tensor| w.data()[0] * x + w.data()[1] * h + b.data()[0];
            let i = sigmoid(gate(&p.w_i, &p.b_i));
            let f = sigmoid(gate(&p.w_f, &p.b_f));
            let cand = gate(&p.w_c, &p.b_c).tanh();
            let o = sigmoid(gate(&p.w_o, &p.b_o));
            let c_new = f * c + i * cand;
            let h_new = o * c_new.tanh();
            assert!((next.c.item() - c_new).abs() <= 1e-12);
            assert!((next.h.item() - h_new).abs() <= 1e-12);
        }
    }

    #[test]
    fn full_scale_latent_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ConvLstmParams::init(64, 64, 5, 0.0, &mut rng);
        let x = Tensor::uniform(&[2, 64, 15, 5], -1.0, 1.0, &mut rng);
        let (next, _) = convlstm_step_values(&x, &ConvLstmState::zeros(2, 64, 15, 5), &p).unwrap();
        assert_eq!(next.h.shape(), &[2, 64, 15, 5]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let p = ConvLstmParams::zeros(3, 2, 3);
        let x = Tensor::zeros(&[1, 4, 3, 3]);
        let err = convlstm_step_values(&x, &ConvLstmState::zeros(1, 2, 3, 3), &p).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn gate_kernels_must_share_shape() {
        let mut p = ConvLstmParams::zeros(2, 2, 3);
        p.w_o = Tensor::zeros(&[2, 4, 5, 5]);
        assert!(p.dims().is_err());
    }

    #[test]
    fn layer_spec_shapes() {
        let ps = LayerSpec::new("ps", LayerKind::PixelShuffle { r: 8 }, Activation::None);
        assert_eq!(ps.output_shape(&[100, 64, 15, 5]).unwrap(), vec![100, 1, 120, 40]);
        assert!(ps.output_shape(&[100, 60, 15, 5]).is_err());
        let conv = LayerSpec::new(
            "conv",
            LayerKind::Conv {
                c_in: 16,
                c_out: 32,
                kernel: 4,
                stride: 2,
                padding: 1,
            },
            Activation::Relu,
        );
        assert_eq!(conv.output_shape(&[100, 16, 60, 20]).unwrap(), vec![100, 32, 30, 10]);
    }

    #[test]
    fn even_kernel_has_no_same_padding() {
        assert_eq!(same_padding(5).unwrap(), 2);
        assert!(same_padding(4).is_err());
    }
}
