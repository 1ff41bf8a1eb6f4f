//! The convolutional recurrent network: tanh dense projection, ReLU
//! convolutional encoder, one ConvLSTM cell in latent space, pixel-shuffle
//! decoder and a linear dense head, wrapped in a forward-Euler residual
//! `u_t = u_{t-1} + δt · NN(x_t, u_{t-1})`.

mod io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::layers::{
    convlstm_step, Activation, ConvLstmParams, ConvLstmState, ConvLstmStateVars, ConvLstmVars, ConvParams, DenseParams,
    LayerKind, LayerSpec,
};
use crate::tensor::{kernels, Conv2dGeometry, Tape, Tensor, Var};

pub use io::{load_params, save_params, SavedModel, PARAMS_FORMAT, PARAMS_FORMAT_VERSION};

/// Channels entering the encoder: the projected storm features and the
/// previous surge field `u`.
pub const ENCODER_INPUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub n_features: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Widths of the tanh projection layers; the last equals `grid_h * grid_w`.
    pub dense_widths: Vec<usize>,
    pub encoder_channels: Vec<usize>,
    pub encoder_kernel: usize,
    pub encoder_padding: usize,
    pub encoder_stride: usize,
    pub convlstm_kernel: usize,
    pub convlstm_padding: usize,
    /// Hidden channels of the ConvLSTM; equals `upscale²`.
    pub latent_channels: usize,
    pub upscale: usize,
    /// δt of the residual update.
    pub residual_step: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub forget_bias: f64,
}

impl ArchitectureConfig {
    /// 120×40 save points, 125 steps, channels 16/32/64, upscale 8.
    pub fn full_scale() -> Self {
        Self::with_grid(120, 40, 125)
    }

    /// 24×8 save points, 40 steps; same layer stack as [`full_scale`](Self::full_scale).
    pub fn desk() -> Self {
        Self::with_grid(24, 8, 40)
    }

    /// The full layer stack on an arbitrary grid divisible by 8.
    pub fn with_grid(grid_h: usize, grid_w: usize, n_steps: usize) -> Self {
        ArchitectureConfig {
            n_features: 4,
            grid_h,
            grid_w,
            dense_widths: vec![40, 400, grid_h * grid_w],
            encoder_channels: vec![16, 32, 64],
            encoder_kernel: 4,
            encoder_padding: 1,
            encoder_stride: 2,
            convlstm_kernel: 5,
            convlstm_padding: 2,
            latent_channels: 64,
            upscale: 8,
            residual_step: 1.0,
            n_steps,
            forget_bias: 0.0,
        }
    }

    /// An 8×8 grid with a single stride-2 encoder layer, 4 latent channels
    /// and upscale 2, small enough for exhaustive finite-difference checks.
    pub fn tiny(n_steps: usize) -> Self {
        ArchitectureConfig {
            n_features: 4,
            grid_h: 8,
            grid_w: 8,
            dense_widths: vec![6, 64],
            encoder_channels: vec![4],
            encoder_kernel: 4,
            encoder_padding: 1,
            encoder_stride: 2,
            convlstm_kernel: 3,
            convlstm_padding: 1,
            latent_channels: 4,
            upscale: 2,
            residual_step: 1.0,
            n_steps,
            forget_bias: 0.0,
        }
    }

    pub fn n_sp(&self) -> usize {
        self.grid_h * self.grid_w
    }

    fn encoder_geometry(&self) -> Conv2dGeometry {
        Conv2dGeometry::new(self.encoder_stride, self.encoder_padding)
    }

    /// Spatial extent after the encoder.
    pub fn latent_hw(&self) -> Result<(usize, usize)> {
        let mut hw = (self.grid_h, self.grid_w);
        for _ in &self.encoder_channels {
            hw = self
                .encoder_geometry()
                .output_size(hw, (self.encoder_kernel, self.encoder_kernel))
                .map_err(|e| Error::Config(format!("encoder: {e}")))?;
        }
        Ok(hw)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_features == 0 || self.n_steps == 0 {
            return fail("n_features and n_steps must be positive".into());
        }
        if self.dense_widths.is_empty() || self.dense_widths.contains(&0) {
            return fail("dense_widths must be non-empty and positive".into());
        }
        if *self.dense_widths.last().unwrap() != self.n_sp() {
            return fail(format!(
                "last dense width {} must equal grid_h * grid_w = {}",
                self.dense_widths.last().unwrap(),
                self.n_sp()
            ));
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return fail("encoder_channels must be non-empty and positive".into());
        }
        if self.upscale == 0 || self.latent_channels != self.upscale * self.upscale {
            return fail(format!(
                "latent_channels {} must equal upscale² = {} (one decoder output channel)",
                self.latent_channels,
                self.upscale * self.upscale
            ));
        }
        if self.convlstm_kernel.is_multiple_of(2) || 2 * self.convlstm_padding + 1 != self.convlstm_kernel {
            return fail(format!(
                "ConvLSTM kernel {} with padding {} does not preserve the latent size",
                self.convlstm_kernel, self.convlstm_padding
            ));
        }
        let (lh, lw) = self.latent_hw()?;
        if (lh * self.upscale, lw * self.upscale) != (self.grid_h, self.grid_w) {
            return fail(format!(
                "latent {lh}x{lw} upscaled by {} gives {}x{}, not the {}x{} grid",
                self.upscale,
                lh * self.upscale,
                lw * self.upscale,
                self.grid_h,
                self.grid_w
            ));
        }
        if !self.residual_step.is_finite() || !self.forget_bias.is_finite() {
            return fail("residual_step and forget_bias must be finite".into());
        }
        Ok(())
    }

    /// One entry per row of the architecture table, batch axis first.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut rows = Vec::new();
        let mut d_in = self.n_features;
        for (i, &w) in self.dense_widths.iter().enumerate() {
            rows.push(LayerSpec::new(
                &format!("dense_{}", i + 1),
                LayerKind::Dense { d_in, d_out: w },
                Activation::Tanh,
            ));
            d_in = w;
        }
        rows.push(LayerSpec::new(
            "reshape",
            LayerKind::Reshape {
                shape: vec![1, self.grid_h, self.grid_w],
            },
            Activation::None,
        ));
        let mut c_in = ENCODER_INPUT_CHANNELS;
        for (i, &c) in self.encoder_channels.iter().enumerate() {
            rows.push(LayerSpec::new(
                &format!("encoder_{}", i + 1),
                LayerKind::Conv {
                    c_in,
                    c_out: c,
                    kernel: self.encoder_kernel,
                    stride: self.encoder_stride,
                    padding: self.encoder_padding,
                },
                Activation::Relu,
            ));
            c_in = c;
        }
        rows.push(LayerSpec::new(
            "convlstm",
            LayerKind::ConvLstm {
                c_in,
                c_hidden: self.latent_channels,
                kernel: self.convlstm_kernel,
                padding: self.convlstm_padding,
            },
            Activation::None,
        ));
        rows.push(LayerSpec::new(
            "pixel_shuffle",
            LayerKind::PixelShuffle { r: self.upscale },
            Activation::None,
        ));
        rows.push(LayerSpec::new(
            "flatten",
            LayerKind::Reshape {
                shape: vec![1, self.n_sp()],
            },
            Activation::None,
        ));
        rows.push(LayerSpec::new(
            "head",
            LayerKind::Dense {
                d_in: self.n_sp(),
                d_out: self.n_sp(),
            },
            Activation::None,
        ));
        rows
    }

    /// Statically planned output shape of every table row for a batch of
    /// `batch` storms, including the leading "input" and trailing "output"
    /// rows. The encoder's first layer sees the extra `u` channel.
    pub fn planned_shapes(&self, batch: usize) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let mut shape = vec![batch, 1, self.n_features];
        let mut out = vec![("input".to_string(), shape.clone())];
        for spec in self.layer_specs() {
            let input = if spec.name == "encoder_1" {
                let mut s = shape.clone();
                s[1] = ENCODER_INPUT_CHANNELS;
                s
            } else {
                shape.clone()
            };
            shape = spec.output_shape(&input)?;
            out.push((spec.name.clone(), shape.clone()));
        }
        out.push(("output".to_string(), shape));
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dense: Vec<DenseParams>,
    pub encoder: Vec<ConvParams>,
    pub convlstm: ConvLstmParams,
    pub head: DenseParams,
}

impl ModelParams {
    /// Seeded uniform fan-in initialization; ConvLSTM biases start at zero
    /// except the forget gate, which starts at `cfg.forget_bias`.
    pub fn init(cfg: &ArchitectureConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d_in = cfg.n_features;
        let dense = cfg
            .dense_widths
            .iter()
            .map(|&w| {
                let p = DenseParams::init(d_in, w, &mut rng);
                d_in = w;
                p
            })
            .collect();
        let mut c_in = ENCODER_INPUT_CHANNELS;
        let encoder = cfg
            .encoder_channels
            .iter()
            .map(|&c| {
                let p = ConvParams::init(c_in, c, cfg.encoder_kernel, &mut rng);
                c_in = c;
                p
            })
            .collect();
        let convlstm = ConvLstmParams::init(
            c_in,
            cfg.latent_channels,
            cfg.convlstm_kernel,
            cfg.forget_bias,
            &mut rng,
        );
        let head = DenseParams::init(cfg.n_sp(), cfg.n_sp(), &mut rng);
        Ok(ModelParams {
            dense,
            encoder,
            convlstm,
            head,
        })
    }

    pub fn zeros(cfg: &ArchitectureConfig) -> Result<Self> {
        let mut p = Self::init(cfg, 0)?;
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(p)
    }

    /// Parameter names and shapes implied by `cfg`, in canonical order.
    pub fn expected_shapes(cfg: &ArchitectureConfig) -> Result<Vec<(String, Vec<usize>)>> {
        cfg.validate()?;
        let mut out = Vec::new();
        let mut d_in = cfg.n_features;
        for (i, &w) in cfg.dense_widths.iter().enumerate() {
            out.push((format!("dense.{i}.weight"), vec![d_in, w]));
            out.push((format!("dense.{i}.bias"), vec![w]));
            d_in = w;
        }
        let (k, mut c_in) = (cfg.encoder_kernel, ENCODER_INPUT_CHANNELS);
        for (i, &c) in cfg.encoder_channels.iter().enumerate() {
            out.push((format!("encoder.{i}.kernel"), vec![c, c_in, k, k]));
            out.push((format!("encoder.{i}.bias"), vec![c]));
            c_in = c;
        }
        let (ch, kl) = (cfg.latent_channels, cfg.convlstm_kernel);
        for g in ["i", "f", "c", "o"] {
            out.push((format!("convlstm.w_{g}"), vec![ch, c_in + ch, kl, kl]));
        }
        for g in ["i", "f", "c", "o"] {
            out.push((format!("convlstm.b_{g}"), vec![ch]));
        }
        out.push(("head.weight".into(), vec![cfg.n_sp(), cfg.n_sp()]));
        out.push(("head.bias".into(), vec![cfg.n_sp()]));
        Ok(out)
    }

    /// Every tensor in canonical order (matches [`expected_shapes`](Self::expected_shapes)).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for d in &self.dense {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        for e in &self.encoder {
            out.push(&e.kernel);
            out.push(&e.bias);
        }
        out.extend(self.convlstm.kernels());
        out.extend(self.convlstm.biases());
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for d in &mut self.dense {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        for e in &mut self.encoder {
            out.push(&mut e.kernel);
            out.push(&mut e.bias);
        }
        let l = &mut self.convlstm;
        out.extend([&mut l.w_i, &mut l.w_f, &mut l.w_c, &mut l.w_o]);
        out.extend([&mut l.b_i, &mut l.b_f, &mut l.b_c, &mut l.b_o]);
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn named_tensors(&self, cfg: &ArchitectureConfig) -> Result<Vec<(String, &Tensor)>> {
        let names = Self::expected_shapes(cfg)?;
        Ok(names.into_iter().map(|(n, _)| n).zip(self.tensors()).collect())
    }

    /// Rebuilds parameters from canonical-order tensors, checking every shape.
    pub fn from_tensors(cfg: &ArchitectureConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let expected = Self::expected_shapes(cfg)?;
        if tensors.len() != expected.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut params = Self::zeros(cfg)?;
        for ((name, shape), ((got_name, t), slot)) in expected.iter().zip(tensors.into_iter().zip(params.tensors_mut()))
        {
            if *name != got_name || t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    name: got_name,
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
            *slot = t;
        }
        Ok(params)
    }

    pub fn check_shapes(&self, cfg: &ArchitectureConfig) -> Result<()> {
        for ((name, shape), t) in Self::expected_shapes(cfg)?.into_iter().zip(self.tensors()) {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: shape,
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Tape handles for every parameter, in canonical order via [`ParamVars::all`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub dense: Vec<(Var, Var)>,
    pub encoder: Vec<(Var, Var)>,
    pub convlstm: ConvLstmVars,
    pub head: (Var, Var),
}

impl ParamVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(w, b) in self.dense.iter().chain(&self.encoder) {
            out.push(w);
            out.push(b);
        }
        out.extend(self.convlstm.kernels);
        out.extend(self.convlstm.biases);
        out.push(self.head.0);
        out.push(self.head.1);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub convlstm: ConvLstmState,
    /// Previous predicted surge field `[N, 1, grid_h, grid_w]`.
    pub u: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelStateVars {
    pub convlstm: ConvLstmStateVars,
    pub u: Var,
}

/// Output shape of each table row, recorded during an actual forward step.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Crnn {
    cfg: ArchitectureConfig,
    params: ModelParams,
}

impl Crnn {
    pub fn new(cfg: ArchitectureConfig, params: ModelParams) -> Result<Self> {
        cfg.validate()?;
        params.check_shapes(&cfg)?;
        Ok(Crnn { cfg, params })
    }

    pub fn init(cfg: ArchitectureConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&cfg, seed)?;
        Ok(Crnn { cfg, params })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Records every parameter on `tape`; `trainable = false` records them
    /// as constants so no gradient bookkeeping is kept.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Result<ParamVars> {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let p = &self.params;
        let dense = p.dense.iter().map(|d| (leaf(&d.weight), leaf(&d.bias))).collect();
        let encoder = p.encoder.iter().map(|e| (leaf(&e.kernel), leaf(&e.bias))).collect();
        let head = (leaf(&p.head.weight), leaf(&p.head.bias));
        let kernels = p.convlstm.kernels().map(&mut leaf);
        let biases = p.convlstm.biases().map(&mut leaf);
        let convlstm = p.convlstm.bind_vars(tape, kernels, biases)?;
        Ok(ParamVars {
            dense,
            encoder,
            convlstm,
            head,
        })
    }

    pub fn zero_state(&self, n: usize) -> Result<ModelState> {
        let (lh, lw) = self.cfg.latent_hw()?;
        Ok(ModelState {
            convlstm: ConvLstmState::zeros(n, self.cfg.latent_channels, lh, lw),
            u: Tensor::zeros(&[n, 1, self.cfg.grid_h, self.cfg.grid_w]),
        })
    }

    pub fn record_state(&self, tape: &mut Tape, state: &ModelState) -> Result<ModelStateVars> {
        let expected = self.zero_state(state.u.shape()[0])?;
        if state.u.shape() != expected.u.shape() || state.convlstm.h.shape() != expected.convlstm.h.shape() {
            return Err(dim_err!(
                "model state shapes u {:?}, h {:?} do not match the architecture",
                state.u.shape(),
                state.convlstm.h.shape()
            ));
        }
        Ok(ModelStateVars {
            convlstm: state.convlstm.record(tape)?,
            u: tape.constant(state.u.clone()),
        })
    }

    /// One time step. `inputs_t` is `[N, n_features]`; returns the surge
    /// `[N, n_sp]` and the next state.
    pub fn forward_step(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        inputs_t: Var,
        state: ModelStateVars,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<(Var, ModelStateVars)> {
        let cfg = &self.cfg;
        let in_shape = tape.shape(inputs_t).to_vec();
        if in_shape.len() != 2 || in_shape[1] != cfg.n_features {
            return Err(dim_err!(
                "forward_step: inputs {in_shape:?} are not [N, {}]",
                cfg.n_features
            ));
        }
        let n = in_shape[0];
        if tape.shape(state.u) != [n, 1, cfg.grid_h, cfg.grid_w] {
            return Err(dim_err!(
                "forward_step: state u {:?} does not match batch {n} on a {}x{} grid",
                tape.shape(state.u),
                cfg.grid_h,
                cfg.grid_w
            ));
        }
        let mut record = |tape: &Tape, name: &str, v: Var| {
            if let Some(t) = trace.as_deref_mut() {
                t.push((name.to_string(), tape.shape(v).to_vec()));
            }
        };

        let mut z = tape.reshape(inputs_t, &[n, 1, cfg.n_features])?;
        record(tape, "input", z);
        for (i, &(w, b)) in vars.dense.iter().enumerate() {
            let pre = tape.dense(z, w, b)?;
            z = tape.tanh(pre);
            record(tape, &format!("dense_{}", i + 1), z);
        }
        let field = tape.reshape(z, &[n, 1, cfg.grid_h, cfg.grid_w])?;
        record(tape, "reshape", field);

        let mut e = tape.concat(&[field, state.u], 1)?;
        let geom = cfg.encoder_geometry();
        for (i, &(k, b)) in vars.encoder.iter().enumerate() {
            let pre = tape.conv2d(e, k, b, geom)?;
            e = tape.relu(pre);
            record(tape, &format!("encoder_{}", i + 1), e);
        }

        let step = convlstm_step(tape, e, state.convlstm, &vars.convlstm, cfg.convlstm_padding)?;
        record(tape, "convlstm", step.state.h);

        let decoded = tape.pixel_shuffle(step.state.h, cfg.upscale)?;
        record(tape, "pixel_shuffle", decoded);
        let flat = tape.reshape(decoded, &[n, 1, cfg.n_sp()])?;
        record(tape, "flatten", flat);
        let increment = tape.dense(flat, vars.head.0, vars.head.1)?;
        record(tape, "head", increment);

        let u_flat = tape.reshape(state.u, &[n, 1, cfg.n_sp()])?;
        let scaled = tape.scale(increment, cfg.residual_step);
        let surge = tape.add(u_flat, scaled)?;
        record(tape, "output", surge);

        let u = tape.reshape(surge, &[n, 1, cfg.grid_h, cfg.grid_w])?;
        let surge = tape.reshape(surge, &[n, cfg.n_sp()])?;
        Ok((
            surge,
            ModelStateVars {
                convlstm: step.state,
                u,
            },
        ))
    }

    /// Unrolls [`forward_step`](Self::forward_step) from the zero state over
    /// `inputs` `[N, T, n_features]`; returns `[N, T, n_sp]`.
    pub fn forward_sequence(&self, tape: &mut Tape, vars: &ParamVars, inputs: &Tensor) -> Result<Var> {
        let cfg = &self.cfg;
        let s = inputs.shape();
        if s.len() != 3 || s[1] != cfg.n_steps || s[2] != cfg.n_features {
            return Err(dim_err!(
                "forward_sequence: inputs {s:?} are not [N, {}, {}]",
                cfg.n_steps,
                cfg.n_features
            ));
        }
        let n = s[0];
        let mut state = self.record_state(tape, &self.zero_state(n)?)?;
        let mut outputs = Vec::with_capacity(cfg.n_steps);
        for t in 0..cfg.n_steps {
            let x_t = kernels::narrow(inputs, 1, t, 1)?.reshape(&[n, cfg.n_features])?;
            let x_t = tape.constant(x_t);
            let (surge, next) = self.forward_step(tape, vars, x_t, state, None)?;
            outputs.push(tape.reshape(surge, &[n, 1, cfg.n_sp()])?);
            state = next;
        }
        tape.concat(&outputs, 1)
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false)?;
        let out = self.forward_sequence(&mut tape, &vars, inputs)?;
        Ok(tape.value(out).clone())
    }

    /// Runs one step on the zero state and returns the shape of every table row.
    pub fn trace_shapes(&self, inputs_t: &Tensor) -> Result<ShapeTrace> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false)?;
        let n = inputs_t.shape()[0];
        let state = self.record_state(&mut tape, &self.zero_state(n)?)?;
        let x = tape.constant(inputs_t.clone());
        let mut trace = ShapeTrace::new();
        self.forward_step(&mut tape, &vars, x, state, Some(&mut trace))?;
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configs_validate() {
        ArchitectureConfig::full_scale().validate().unwrap();
        ArchitectureConfig::desk().validate().unwrap();
        ArchitectureConfig::tiny(3).validate().unwrap();
        let mut bad = ArchitectureConfig::desk();
        bad.grid_h = 20;
        bad.dense_widths = vec![40, 400, 160];
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = ArchitectureConfig::desk();
        bad.latent_channels = 32;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn planned_shapes_follow_the_table() {
        let rows = ArchitectureConfig::full_scale().planned_shapes(100).unwrap();
        let shapes: Vec<Vec<usize>> = rows.into_iter().map(|(_, s)| s).collect();
        assert_eq!(
            shapes,
            vec![
                vec![100, 1, 4],
                vec![100, 1, 40],
                vec![100, 1, 400],
                vec![100, 1, 4800],
                vec![100, 1, 120, 40],
                vec![100, 16, 60, 20],
                vec![100, 32, 30, 10],
                vec![100, 64, 15, 5],
                vec![100, 64, 15, 5],
                vec![100, 1, 120, 40],
                vec![100, 1, 4800],
                vec![100, 1, 4800],
                vec![100, 1, 4800],
            ]
        );
    }

    #[test]
    fn zero_network_gives_zero_output() {
        let cfg = ArchitectureConfig::tiny(3);
        let model = Crnn::new(cfg.clone(), ModelParams::zeros(&cfg).unwrap()).unwrap();
        let inputs = Tensor::from_fn(&[2, 3, 4], |i| (i as f64 * 0.37).sin());
        let out = model.predict(&inputs).unwrap();
        assert_eq!(out.shape(), &[2, 3, 64]);
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn zero_residual_step_returns_carried_state() {
        let mut cfg = ArchitectureConfig::tiny(1);
        cfg.residual_step = 0.0;
        let model = Crnn::init(cfg, 4).unwrap();
        let mut tape = Tape::new();
        let vars = model.register(&mut tape, false).unwrap();
        let mut state = model.zero_state(1).unwrap();
        state.u = Tensor::from_fn(&[1, 1, 8, 8], |i| i as f64 * 0.01);
        let sv = model.record_state(&mut tape, &state).unwrap();
        let x = tape.constant(Tensor::ones(&[1, 4]));
        let (surge, _) = model.forward_step(&mut tape, &vars, x, sv, None).unwrap();
        assert_eq!(tape.value(surge).data(), state.u.data());
    }

    #[test]
    fn sequence_length_is_checked() {
        let model = Crnn::init(ArchitectureConfig::tiny(3), 1).unwrap();
        assert!(matches!(
            model.predict(&Tensor::zeros(&[1, 4, 4])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn single_step_sequence_equals_one_step() {
        let model = Crnn::init(ArchitectureConfig::tiny(1), 9).unwrap();
        let x = Tensor::from_vec(vec![0.1, -0.3, 0.8, 1.2]).reshape(&[1, 1, 4]).unwrap();
        let seq = model.predict(&x).unwrap();
        let mut tape = Tape::new();
        let vars = model.register(&mut tape, false).unwrap();
        let sv = model.record_state(&mut tape, &model.zero_state(1).unwrap()).unwrap();
        let xv = tape.constant(x.reshape(&[1, 4]).unwrap());
        let (surge, _) = model.forward_step(&mut tape, &vars, xv, sv, None).unwrap();
        assert!(tape.value(surge).reshape(&[1, 1, 64]).unwrap().bit_eq(&seq));
    }

    #[test]
    fn desk_sequence_shape() {
        let model = Crnn::init(ArchitectureConfig::desk(), 2).unwrap();
        let out = model.predict(&Tensor::zeros(&[2, 40, 4])).unwrap();
        assert_eq!(out.shape(), &[2, 40, 192]);
    }

    #[test]
    fn param_shapes_round_trip() {
        let cfg = ArchitectureConfig::tiny(2);
        let p = ModelParams::init(&cfg, 3).unwrap();
        let named: Vec<(String, Tensor)> = p
            .named_tensors(&cfg)
            .unwrap()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        assert_eq!(ModelParams::from_tensors(&cfg, named).unwrap(), p);
    }
}
