//! Stacked cells with an affine output head.
//!
//! Layer 1 reads the input frame; layer `l > 1` reads the full `n_y`-wide
//! output of layer `l - 1` at the same time step. The top layer's output
//! goes through a single affine map to produce per-frame logits; softmax
//! lives in the loss, not here. Every utterance starts from a zero state.

mod count;
mod model_file;

pub use count::{count_params, feasible_n_out, format_millions, round_to_tenths, table1_rows, Table1Row, TABLE1_DIMS};
pub use model_file::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_VERSION, SUPPORTED_VERSIONS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cells::{CellDims, CellSpec, CellState, GateStyle, LayerParams, ResidualVariant, StepOptions, StepTrace};
use crate::error::{Error, Result};
use crate::linalg::{add_into, affine, matvec_t, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    pub depth: usize,
    pub dims: CellDims,
    pub style: GateStyle,
    pub variant: ResidualVariant,
    pub n_out: usize,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.n_out < 2 {
            return Err(Error::Config(format!("n_out must be >= 2, got {}", self.n_out)));
        }
        Ok(())
    }

    /// Input width of layer `layer` (0-based).
    pub fn layer_input_size(&self, layer: usize) -> usize {
        if layer == 0 {
            self.dims.n_x
        } else {
            self.dims.n_y()
        }
    }

    pub fn cell_spec(&self) -> CellSpec {
        CellSpec::new(self.dims, self.style, self.variant)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    pub w_out: Matrix,
    pub b_out: Vector,
}

impl NetworkParams {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let layers = (0..config.depth)
            .map(|l| LayerParams::zeros(&config.dims, config.layer_input_size(l), config.style, config.variant))
            .collect();
        NetworkParams {
            layers,
            w_out: Matrix::zeros(config.n_out, config.dims.n_y()),
            b_out: Vector::zeros(config.n_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        NetworkParams {
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
            w_out: Matrix::zeros(self.w_out.rows(), self.w_out.cols()),
            b_out: Vector::zeros(self.b_out.len()),
        }
    }

    /// All tensors, layer by layer, then `w_out`, `b_out`.
    pub fn tensors(&self) -> Vec<(&'static str, (usize, usize), &[f64])> {
        let mut out: Vec<_> = self.layers.iter().flat_map(LayerParams::tensors).collect();
        out.push(("w_out", self.w_out.shape(), self.w_out.as_slice()));
        out.push(("b_out", (self.b_out.len(), 1), self.b_out.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.layers.iter_mut().flat_map(LayerParams::tensors_mut).collect();
        out.push(self.w_out.as_mut_slice());
        out.push(self.b_out.as_mut_slice());
        out
    }

    pub fn num_elements(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Every scalar, in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, _, t)| t.iter().copied()).collect()
    }

    pub fn check_shapes(&self, config: &NetworkConfig) -> Result<()> {
        if self.layers.len() != config.depth {
            return Err(Error::dim(
                "NetworkParams",
                format!("{} layers for depth {}", self.layers.len(), config.depth),
            ));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.check_shapes(&config.dims, config.layer_input_size(l), config.style, config.variant)?;
        }
        if self.w_out.shape() != (config.n_out, config.dims.n_y()) || self.b_out.len() != config.n_out {
            return Err(Error::dim(
                "NetworkParams",
                format!(
                    "output head is {:?} + {}, expected ({}, {}) + {}",
                    self.w_out.shape(),
                    self.b_out.len(),
                    config.n_out,
                    config.dims.n_y(),
                    config.n_out
                ),
            ));
        }
        Ok(())
    }
}

/// Uniform `[-s, s]` weights with `s = 1/√fan_in` (fan-in = column count);
/// biases and peepholes zero. Deterministic per seed.
pub fn init_params(config: &NetworkConfig, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros(config);
    let mut fill = |m: &mut Matrix| {
        let s = 1.0 / (m.cols() as f64).sqrt();
        for v in m.as_mut_slice() {
            *v = rng.random_range(-s..=s);
        }
    };
    for layer in &mut params.layers {
        for m in [
            &mut layer.w_ix,
            &mut layer.w_ir,
            &mut layer.w_fx,
            &mut layer.w_fr,
            &mut layer.w_ox,
            &mut layer.w_or,
            &mut layer.w_gx,
            &mut layer.w_gr,
        ] {
            fill(m);
        }
        if let Some(m) = layer.w_rp.as_mut() {
            fill(m);
        }
        if let Some(m) = layer.w_res.as_mut() {
            fill(m);
        }
    }
    fill(&mut params.w_out);
    params
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub cell_clip: Option<f64>,
}

/// Per-step, per-layer traces plus the logits.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Indexed `[t][layer]`.
    pub steps: Vec<Vec<StepTrace>>,
    pub logits: Matrix,
}

pub fn forward(params: &NetworkParams, config: &NetworkConfig, frames: &Matrix) -> Result<(Matrix, ForwardTrace)> {
    forward_with(params, config, frames, &ForwardOptions::default())
}

pub fn forward_with(
    params: &NetworkParams,
    config: &NetworkConfig,
    frames: &Matrix,
    opts: &ForwardOptions,
) -> Result<(Matrix, ForwardTrace)> {
    if frames.rows() == 0 {
        return Err(Error::dim("forward", "sequence has no frames"));
    }
    if frames.cols() != config.dims.n_x {
        return Err(Error::dim(
            "forward",
            format!("frames have dim {}, network expects n_x = {}", frames.cols(), config.dims.n_x),
        ));
    }
    params.check_shapes(config)?;
    let spec = config.cell_spec();
    let n_t = frames.rows();
    let mut states: Vec<CellState> = (0..config.depth).map(|_| CellState::zeros(&config.dims)).collect();
    let mut steps = Vec::with_capacity(n_t);
    let mut logits = Matrix::zeros(n_t, config.n_out);
    for t in 0..n_t {
        let mut input = Vector::from(frames.row(t));
        let mut layer_traces = Vec::with_capacity(config.depth);
        for (l, (layer, state)) in params.layers.iter().zip(states.iter_mut()).enumerate() {
            let step_opts = StepOptions {
                cell_clip: opts.cell_clip,
                step: t,
                layer: l,
            };
            let (y, next, trace) = spec.step_with(layer, &input, state, &step_opts)?;
            *state = next;
            layer_traces.push(trace);
            input = y;
        }
        let out = affine(&params.w_out, &input, &params.b_out)?;
        logits.row_mut(t).copy_from_slice(&out);
        steps.push(layer_traces);
    }
    let trace = ForwardTrace {
        steps,
        logits: logits.clone(),
    };
    Ok((logits, trace))
}

/// Backpropagation through time. Returns gradients shaped like the params.
pub fn backward(
    params: &NetworkParams,
    config: &NetworkConfig,
    trace: &ForwardTrace,
    d_logits: &Matrix,
) -> Result<NetworkParams> {
    let mut grads = params.zeros_like();
    backward_into(params, config, trace, d_logits, &mut grads)?;
    Ok(grads)
}

/// As [`backward`], accumulating into `grads`.
pub fn backward_into(
    params: &NetworkParams,
    config: &NetworkConfig,
    trace: &ForwardTrace,
    d_logits: &Matrix,
    grads: &mut NetworkParams,
) -> Result<()> {
    let n_t = trace.steps.len();
    if d_logits.shape() != (n_t, config.n_out) {
        return Err(Error::Contract(format!(
            "d_logits is {:?}, trace expects ({n_t}, {})",
            d_logits.shape(),
            config.n_out
        )));
    }
    if trace.steps.iter().any(|s| s.len() != config.depth) {
        return Err(Error::Contract("trace depth does not match config".into()));
    }
    let spec = config.cell_spec();
    let dims = &config.dims;
    let zero_c = Vector::zeros(dims.n_c);
    let zero_r = Vector::zeros(dims.n_r);
    let mut d_c: Vec<Vector> = vec![zero_c.clone(); config.depth];
    let mut d_r: Vec<Vector> = vec![zero_r.clone(); config.depth];

    for t in (0..n_t).rev() {
        let d_out = d_logits.row(t);
        let top = &trace.steps[t][config.depth - 1].y;
        grads.w_out.add_outer(d_out, top);
        add_into(&mut grads.b_out, d_out);
        let mut d_in = matvec_t(&params.w_out, d_out)?;
        for l in (0..config.depth).rev() {
            let tr = &trace.steps[t][l];
            let (c_prev, r_prev) = if t > 0 {
                let p = &trace.steps[t - 1][l];
                (&p.c, &p.r)
            } else {
                (&zero_c, &zero_r)
            };
            let g = spec.backward_into(&params.layers[l], tr, c_prev, r_prev, &d_in, &d_c[l], &d_r[l], &mut grads.layers[l])?;
            d_c[l] = g.d_c_prev;
            d_r[l] = g.d_r_prev;
            d_in = g.d_x;
        }
    }
    Ok(())
}
