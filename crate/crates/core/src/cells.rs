//! One time step of the projected LSTM family, forward and backward.
//!
//! Two orthogonal axes select the cell:
//!
//! - [`GateStyle`]: `Standard` gates read the cell through diagonal
//!   peepholes (input/forget gates see `c_{t-1}`, the output gate sees the
//!   freshly updated `c_t`); `Fast` gates drop the peepholes so all four
//!   preactivations share one shape and can be computed by a single fused
//!   product ([`fused_gate_preactivations`]).
//! - [`ResidualVariant`]: where the layer input `x_t` is spliced into the
//!   cell and projected back to the original width.
//!
//! ```text
//! None:  m = o ⊙ tanh(c)                 y = W_rp·m          r = y[..n_r]
//! Res1:  h = [tanh(c); x]  m = o ⊙ (W_res·h)  y = W_rp·m     r = y[..n_r]
//! Res2:  m = o ⊙ tanh(c)   h = [m; x]    y = W_res·h         r = y[..n_r]
//! Res3:  m = o ⊙ tanh(c)   z = W_rp·m    h = [z; x]  y = W_res·h   r = z[..n_r]
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{self, add_into, concat, matvec, matvec_t, sigmoid, tanh_v, Matrix, Vector};

/// Layer geometry. `n_x` is the network input width; layers above the first
/// see the full `n_y`-wide output of the layer below.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellDims {
    pub n_x: usize,
    pub n_c: usize,
    pub n_r: usize,
    pub n_nr: usize,
}

impl CellDims {
    pub fn new(n_x: usize, n_c: usize, n_r: usize, n_nr: usize) -> Result<Self> {
        let dims = CellDims { n_x, n_c, n_r, n_nr };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_c == 0 || self.n_r == 0 {
            return Err(Error::Config(format!(
                "n_x, n_c and n_r must be >= 1 (got n_x={}, n_c={}, n_r={})",
                self.n_x, self.n_c, self.n_r
            )));
        }
        Ok(())
    }

    /// Output width `n_r + n_nr`.
    pub fn n_y(&self) -> usize {
        self.n_r + self.n_nr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateStyle {
    Standard,
    Fast,
}

impl GateStyle {
    pub const ALL: [GateStyle; 2] = [GateStyle::Standard, GateStyle::Fast];

    pub fn code(self) -> u32 {
        match self {
            GateStyle::Standard => 0,
            GateStyle::Fast => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(GateStyle::Standard),
            1 => Some(GateStyle::Fast),
            _ => None,
        }
    }

    pub fn has_peepholes(self) -> bool {
        self == GateStyle::Standard
    }
}

impl fmt::Display for GateStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateStyle::Standard => "standard",
            GateStyle::Fast => "fast",
        })
    }
}

impl FromStr for GateStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" | "std" | "lstm" => Ok(GateStyle::Standard),
            "fast" => Ok(GateStyle::Fast),
            other => Err(Error::Config(format!(
                "unknown gate style {other:?} (expected standard|fast)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResidualVariant {
    None,
    Res1,
    Res2,
    Res3,
}

impl ResidualVariant {
    pub const ALL: [ResidualVariant; 4] = [
        ResidualVariant::None,
        ResidualVariant::Res1,
        ResidualVariant::Res2,
        ResidualVariant::Res3,
    ];

    pub fn code(self) -> u32 {
        match self {
            ResidualVariant::None => 0,
            ResidualVariant::Res1 => 1,
            ResidualVariant::Res2 => 2,
            ResidualVariant::Res3 => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Whether the layer owns the shared `W_rp` projection (all but Res2,
    /// whose residual matrix replaces it).
    pub fn has_projection(self) -> bool {
        self != ResidualVariant::Res2
    }

    /// Shape of `W_res` for a layer with input width `n_in`.
    pub fn residual_shape(self, dims: &CellDims, n_in: usize) -> Option<(usize, usize)> {
        let (n_c, n_y) = (dims.n_c, dims.n_y());
        match self {
            ResidualVariant::None => None,
            ResidualVariant::Res1 => Some((n_c, n_c + n_in)),
            ResidualVariant::Res2 => Some((n_y, n_c + n_in)),
            ResidualVariant::Res3 => Some((n_y, n_y + n_in)),
        }
    }
}

impl fmt::Display for ResidualVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResidualVariant::None => "none",
            ResidualVariant::Res1 => "res1",
            ResidualVariant::Res2 => "res2",
            ResidualVariant::Res3 => "res3",
        })
    }
}

impl FromStr for ResidualVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "plain" => Ok(ResidualVariant::None),
            "res1" | "res-1" => Ok(ResidualVariant::Res1),
            "res2" | "res-2" => Ok(ResidualVariant::Res2),
            "res3" | "res-3" => Ok(ResidualVariant::Res3),
            other => Err(Error::Config(format!(
                "unknown residual variant {other:?} (expected none|res1|res2|res3)"
            ))),
        }
    }
}

/// Diagonal peephole weights, stored as vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Peepholes {
    pub w_ic: Vector,
    pub w_fc: Vector,
    pub w_oc: Vector,
}

/// Every weight of one layer. The same struct doubles as the gradient
/// accumulator for the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_ix: Matrix,
    pub w_ir: Matrix,
    pub w_fx: Matrix,
    pub w_fr: Matrix,
    pub w_ox: Matrix,
    pub w_or: Matrix,
    pub w_gx: Matrix,
    pub w_gr: Matrix,
    /// Present iff the style is `Standard`.
    pub peephole: Option<Peepholes>,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_o: Vector,
    pub b_g: Vector,
    /// `n_y × n_c`; absent for Res2.
    pub w_rp: Option<Matrix>,
    /// Absent for variant None.
    pub w_res: Option<Matrix>,
}

impl LayerParams {
    /// All-zero parameters for a layer whose input width is `n_in`.
    pub fn zeros(dims: &CellDims, n_in: usize, style: GateStyle, variant: ResidualVariant) -> Self {
        let (n_c, n_r, n_y) = (dims.n_c, dims.n_r, dims.n_y());
        let peephole = style.has_peepholes().then(|| Peepholes {
            w_ic: Vector::zeros(n_c),
            w_fc: Vector::zeros(n_c),
            w_oc: Vector::zeros(n_c),
        });
        LayerParams {
            w_ix: Matrix::zeros(n_c, n_in),
            w_ir: Matrix::zeros(n_c, n_r),
            w_fx: Matrix::zeros(n_c, n_in),
            w_fr: Matrix::zeros(n_c, n_r),
            w_ox: Matrix::zeros(n_c, n_in),
            w_or: Matrix::zeros(n_c, n_r),
            w_gx: Matrix::zeros(n_c, n_in),
            w_gr: Matrix::zeros(n_c, n_r),
            peephole,
            b_i: Vector::zeros(n_c),
            b_f: Vector::zeros(n_c),
            b_o: Vector::zeros(n_c),
            b_g: Vector::zeros(n_c),
            w_rp: variant.has_projection().then(|| Matrix::zeros(n_y, n_c)),
            w_res: variant
                .residual_shape(dims, n_in)
                .map(|(r, c)| Matrix::zeros(r, c)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn input_size(&self) -> usize {
        self.w_ix.cols()
    }

    /// Named tensors in serialization order. Vectors report shape `(len, 1)`.
    pub fn tensors(&self) -> Vec<(&'static str, (usize, usize), &[f64])> {
        type Named<'a> = (&'static str, (usize, usize), &'a [f64]);
        fn mat<'a>(name: &'static str, m: &'a Matrix) -> Named<'a> {
            (name, m.shape(), m.as_slice())
        }
        fn vec<'a>(name: &'static str, v: &'a Vector) -> Named<'a> {
            (name, (v.len(), 1), v.as_slice())
        }
        let mut out = vec![
            mat("w_ix", &self.w_ix),
            mat("w_ir", &self.w_ir),
            mat("w_fx", &self.w_fx),
            mat("w_fr", &self.w_fr),
            mat("w_ox", &self.w_ox),
            mat("w_or", &self.w_or),
            mat("w_gx", &self.w_gx),
            mat("w_gr", &self.w_gr),
        ];
        if let Some(p) = &self.peephole {
            out.push(vec("w_ic", &p.w_ic));
            out.push(vec("w_fc", &p.w_fc));
            out.push(vec("w_oc", &p.w_oc));
        }
        out.push(vec("b_i", &self.b_i));
        out.push(vec("b_f", &self.b_f));
        out.push(vec("b_o", &self.b_o));
        out.push(vec("b_g", &self.b_g));
        if let Some(w) = &self.w_rp {
            out.push(mat("w_rp", w));
        }
        if let Some(w) = &self.w_res {
            out.push(mat("w_res", w));
        }
        out
    }

    /// Mutable views in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let LayerParams {
            w_ix,
            w_ir,
            w_fx,
            w_fr,
            w_ox,
            w_or,
            w_gx,
            w_gr,
            peephole,
            b_i,
            b_f,
            b_o,
            b_g,
            w_rp,
            w_res,
        } = self;
        let mut out: Vec<&mut [f64]> = vec![
            w_ix.as_mut_slice(),
            w_ir.as_mut_slice(),
            w_fx.as_mut_slice(),
            w_fr.as_mut_slice(),
            w_ox.as_mut_slice(),
            w_or.as_mut_slice(),
            w_gx.as_mut_slice(),
            w_gr.as_mut_slice(),
        ];
        if let Some(p) = peephole {
            out.push(p.w_ic.as_mut_slice());
            out.push(p.w_fc.as_mut_slice());
            out.push(p.w_oc.as_mut_slice());
        }
        out.push(b_i.as_mut_slice());
        out.push(b_f.as_mut_slice());
        out.push(b_o.as_mut_slice());
        out.push(b_g.as_mut_slice());
        if let Some(w) = w_rp {
            out.push(w.as_mut_slice());
        }
        if let Some(w) = w_res {
            out.push(w.as_mut_slice());
        }
        out
    }

    pub fn num_elements(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Verifies every shape against the layer's geometry and cell kind.
    pub fn check_shapes(
        &self,
        dims: &CellDims,
        n_in: usize,
        style: GateStyle,
        variant: ResidualVariant,
    ) -> Result<()> {
        let expected = LayerParams::zeros(dims, n_in, style, variant);
        let want = expected.tensors();
        let got = self.tensors();
        if want.len() != got.len() {
            return Err(Error::dim(
                "LayerParams",
                format!(
                    "expected {} tensors for {style}/{variant}, found {}",
                    want.len(),
                    got.len()
                ),
            ));
        }
        for ((wn, ws, _), (gn, gs, _)) in want.iter().zip(&got) {
            if wn != gn || ws != gs {
                return Err(Error::dim(
                    "LayerParams",
                    format!("{gn} is {}x{}, expected {wn} {}x{}", gs.0, gs.1, ws.0, ws.1),
                ));
            }
        }
        Ok(())
    }

    /// Stacks the four gates into the fused `4n_c × (n_in + n_r)` matrix,
    /// row blocks ordered `[i; f; o; g]`, columns input-then-recurrent.
    pub fn fused_gate_matrix(&self) -> Result<(Matrix, Vector)> {
        let i = self.w_ix.hconcat(&self.w_ir)?;
        let f = self.w_fx.hconcat(&self.w_fr)?;
        let o = self.w_ox.hconcat(&self.w_or)?;
        let g = self.w_gx.hconcat(&self.w_gr)?;
        let w_all = Matrix::vstack(&[&i, &f, &o, &g])?;
        let mut b_all = Vec::with_capacity(4 * self.b_i.len());
        for b in [&self.b_i, &self.b_f, &self.b_o, &self.b_g] {
            b_all.extend_from_slice(b);
        }
        Ok((w_all, Vector::from_vec(b_all)))
    }
}

/// State carried between time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub c: Vector,
    pub r: Vector,
}

impl CellState {
    pub fn zeros(dims: &CellDims) -> Self {
        CellState {
            c: Vector::zeros(dims.n_c),
            r: Vector::zeros(dims.n_r),
        }
    }
}

/// Gate preactivations before their nonlinearities.
#[derive(Debug, Clone, PartialEq)]
pub struct GatePreacts {
    pub a_i: Vector,
    pub a_f: Vector,
    pub a_o: Vector,
    pub a_g: Vector,
}

/// Every intermediate of one step, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub style: GateStyle,
    pub variant: ResidualVariant,
    pub x_in: Vector,
    pub i: Vector,
    pub f: Vector,
    pub o: Vector,
    pub g: Vector,
    pub c: Vector,
    pub tanh_c: Vector,
    pub m: Vector,
    /// The spliced vector; its contents depend on the variant.
    pub h: Option<Vector>,
    /// Res1 only: `W_res·h`, the vector gated by `o`.
    pub res_proj: Option<Vector>,
    /// Res3 only: the pre-splice projection.
    pub z: Option<Vector>,
    pub y: Vector,
    /// Recurrent output fed to the next step.
    pub r: Vector,
    /// Cells whose value was clamped, when clipping is enabled.
    pub clip_mask: Option<Vec<bool>>,
}

/// Per-call knobs for [`CellSpec::step_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StepOptions {
    /// Clamp `c_t` to `±limit`. Off by default.
    pub cell_clip: Option<f64>,
    /// Position labels used in overflow errors.
    pub step: usize,
    pub layer: usize,
}

/// Input-side gradients of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub d_x: Vector,
    pub d_c_prev: Vector,
    pub d_r_prev: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepGrads {
    pub d_x: Vector,
    pub d_c_prev: Vector,
    pub d_r_prev: Vector,
    pub d_params: LayerParams,
}

/// Geometry plus the two cell-kind axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSpec {
    pub dims: CellDims,
    pub style: GateStyle,
    pub variant: ResidualVariant,
}

fn sum3(a: Vector, b: &[f64], c: &[f64]) -> Vector {
    let mut a = a;
    add_into(&mut a, b);
    add_into(&mut a, c);
    a
}

/// Gate preactivations. For `Standard`, `a_o` excludes the `w_oc ⊙ c_t`
/// peephole, which needs the updated cell and is added by the step.
pub fn gate_preactivations(
    params: &LayerParams,
    style: GateStyle,
    x: &[f64],
    r_prev: &[f64],
    c_prev: &[f64],
) -> Result<GatePreacts> {
    let n_c = params.b_i.len();
    if c_prev.len() != n_c {
        return Err(Error::dim(
            "gate_preactivations",
            format!("c_prev has length {}, expected {n_c}", c_prev.len()),
        ));
    }
    let pre = |wx: &Matrix, wr: &Matrix, b: &Vector| -> Result<Vector> {
        Ok(sum3(matvec(wx, x)?, &matvec(wr, r_prev)?, b))
    };
    let mut a_i = pre(&params.w_ix, &params.w_ir, &params.b_i)?;
    let mut a_f = pre(&params.w_fx, &params.w_fr, &params.b_f)?;
    let a_o = pre(&params.w_ox, &params.w_or, &params.b_o)?;
    let a_g = pre(&params.w_gx, &params.w_gr, &params.b_g)?;
    match (style, &params.peephole) {
        (GateStyle::Standard, Some(p)) => {
            for k in 0..n_c {
                a_i[k] += p.w_ic[k] * c_prev[k];
                a_f[k] += p.w_fc[k] * c_prev[k];
            }
        }
        (GateStyle::Fast, None) => {}
        (style, p) => {
            return Err(Error::dim(
                "gate_preactivations",
                format!(
                    "{style} style with peepholes {}",
                    if p.is_some() { "present" } else { "absent" }
                ),
            ))
        }
    }
    Ok(GatePreacts { a_i, a_f, a_o, a_g })
}

/// Fast-style preactivations from one `4n_c`-row product over
/// `concat(x, r_prev)`; row blocks are `[i; f; o; g]`.
pub fn fused_gate_preactivations(
    w_all: &Matrix,
    b_all: &[f64],
    x: &[f64],
    r_prev: &[f64],
) -> Result<GatePreacts> {
    if !w_all.rows().is_multiple_of(4) {
        return Err(Error::dim(
            "fused_gate_preactivations",
            format!("W_all has {} rows, not divisible by 4", w_all.rows()),
        ));
    }
    let xr = concat(x, r_prev);
    let all = linalg::affine(w_all, &xr, b_all)?.into_vec();
    let n_c = w_all.rows() / 4;
    let block = |k: usize| Vector::from(&all[k * n_c..(k + 1) * n_c]);
    Ok(GatePreacts {
        a_i: block(0),
        a_f: block(1),
        a_o: block(2),
        a_g: block(3),
    })
}

fn check_finite(v: &[f64], what: &'static str, opts: &StepOptions) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow {
            step: opts.step,
            layer: opts.layer,
            what,
        })
    }
}

impl CellSpec {
    pub fn new(dims: CellDims, style: GateStyle, variant: ResidualVariant) -> Self {
        CellSpec {
            dims,
            style,
            variant,
        }
    }

    pub fn step(
        &self,
        params: &LayerParams,
        x: &[f64],
        prev: &CellState,
    ) -> Result<(Vector, CellState, StepTrace)> {
        self.step_with(params, x, prev, &StepOptions::default())
    }

    pub fn step_with(
        &self,
        params: &LayerParams,
        x: &[f64],
        prev: &CellState,
        opts: &StepOptions,
    ) -> Result<(Vector, CellState, StepTrace)> {
        let dims = &self.dims;
        let n_c = dims.n_c;
        params.check_shapes(dims, x.len(), self.style, self.variant)?;
        if prev.c.len() != n_c || prev.r.len() != dims.n_r {
            return Err(Error::dim(
                "cell_step",
                format!(
                    "state is (c: {}, r: {}), expected ({n_c}, {})",
                    prev.c.len(),
                    prev.r.len(),
                    dims.n_r
                ),
            ));
        }

        let mut pre = gate_preactivations(params, self.style, x, &prev.r, &prev.c)?;
        let i = sigmoid(&pre.a_i);
        let f = sigmoid(&pre.a_f);
        let g = tanh_v(&pre.a_g);

        let mut c = Vector::zeros(n_c);
        for k in 0..n_c {
            c[k] = i[k] * g[k] + f[k] * prev.c[k];
        }
        let clip_mask = opts.cell_clip.map(|limit| {
            c.iter_mut()
                .map(|v| {
                    let clipped = v.abs() > limit;
                    *v = v.clamp(-limit, limit);
                    clipped
                })
                .collect()
        });
        check_finite(&c, "cell activation", opts)?;

        if let Some(p) = &params.peephole {
            for k in 0..n_c {
                pre.a_o[k] += p.w_oc[k] * c[k];
            }
        }
        let o = sigmoid(&pre.a_o);
        let tanh_c = tanh_v(&c);

        let m: Vector;
        let (mut h, mut res_proj, mut z) = (None, None, None);
        let (y, r) = match self.variant {
            ResidualVariant::None => {
                m = linalg::hadamard(&o, &tanh_c)?;
                let y = matvec(params.w_rp.as_ref().expect("checked"), &m)?;
                let r = linalg::slice_prefix(&y, dims.n_r)?;
                (y, r)
            }
            ResidualVariant::Res1 => {
                let spliced = concat(&tanh_c, x);
                let proj = matvec(params.w_res.as_ref().expect("checked"), &spliced)?;
                m = linalg::hadamard(&o, &proj)?;
                let y = matvec(params.w_rp.as_ref().expect("checked"), &m)?;
                let r = linalg::slice_prefix(&y, dims.n_r)?;
                h = Some(spliced);
                res_proj = Some(proj);
                (y, r)
            }
            ResidualVariant::Res2 => {
                m = linalg::hadamard(&o, &tanh_c)?;
                let spliced = concat(&m, x);
                let y = matvec(params.w_res.as_ref().expect("checked"), &spliced)?;
                let r = linalg::slice_prefix(&y, dims.n_r)?;
                h = Some(spliced);
                (y, r)
            }
            ResidualVariant::Res3 => {
                m = linalg::hadamard(&o, &tanh_c)?;
                let zt = matvec(params.w_rp.as_ref().expect("checked"), &m)?;
                let r = linalg::slice_prefix(&zt, dims.n_r)?;
                let spliced = concat(&zt, x);
                let y = matvec(params.w_res.as_ref().expect("checked"), &spliced)?;
                h = Some(spliced);
                z = Some(zt);
                (y, r)
            }
        };
        check_finite(&m, "cell output", opts)?;
        check_finite(&y, "layer output", opts)?;

        let state = CellState {
            c: c.clone(),
            r: r.clone(),
        };
        let trace = StepTrace {
            style: self.style,
            variant: self.variant,
            x_in: Vector::from(x),
            i,
            f,
            o,
            g,
            c,
            tanh_c,
            m,
            h,
            res_proj,
            z,
            y: y.clone(),
            r,
            clip_mask,
        };
        Ok((y, state, trace))
    }

    /// Reverse-mode derivative of one step. `d_r_next` is the gradient on
    /// the recurrent slice handed to the next step; it joins the `y`
    /// gradient (None/Res1/Res2) or the `z` gradient (Res3).
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &LayerParams,
        trace: &StepTrace,
        c_prev: &[f64],
        r_prev: &[f64],
        d_y: &[f64],
        d_c_next: &[f64],
        d_r_next: &[f64],
    ) -> Result<StepGrads> {
        let mut d_params = params.zeros_like();
        let InputGrads {
            d_x,
            d_c_prev,
            d_r_prev,
        } = self.backward_into(params, trace, c_prev, r_prev, d_y, d_c_next, d_r_next, &mut d_params)?;
        Ok(StepGrads {
            d_x,
            d_c_prev,
            d_r_prev,
            d_params,
        })
    }

    /// As [`backward`](Self::backward), accumulating parameter gradients
    /// into `grads`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_into(
        &self,
        params: &LayerParams,
        trace: &StepTrace,
        c_prev: &[f64],
        r_prev: &[f64],
        d_y: &[f64],
        d_c_next: &[f64],
        d_r_next: &[f64],
        grads: &mut LayerParams,
    ) -> Result<InputGrads> {
        let dims = &self.dims;
        let (n_c, n_r, n_y) = (dims.n_c, dims.n_r, dims.n_y());
        if trace.style != self.style || trace.variant != self.variant {
            return Err(Error::Contract(format!(
                "trace was recorded for {}/{}, backward called for {}/{}",
                trace.style, trace.variant, self.style, self.variant
            )));
        }
        let n_in = trace.x_in.len();
        if c_prev.len() != n_c
            || r_prev.len() != n_r
            || d_y.len() != n_y
            || d_c_next.len() != n_c
            || d_r_next.len() != n_r
            || trace.c.len() != n_c
            || grads.input_size() != n_in
        {
            return Err(Error::Contract(format!(
                "backward shapes: c_prev {}, r_prev {}, d_y {}, d_c_next {}, d_r_next {} \
                 (expected {n_c}, {n_r}, {n_y}, {n_c}, {n_r})",
                c_prev.len(),
                r_prev.len(),
                d_y.len(),
                d_c_next.len(),
                d_r_next.len()
            )));
        }

        let mut d_x = Vector::zeros(n_in);
        let mut d_o = Vector::zeros(n_c);
        let mut d_c = Vector::zeros(n_c);
        let (o, tanh_c) = (&trace.o, &trace.tanh_c);

        let missing = || Error::Contract("trace lacks a variant intermediate".into());

        // Gradient on m (None/Res1/Res2/Res3 all end up here), plus the
        // variant-specific contributions to d_x.
        let d_m: Vector = match self.variant {
            ResidualVariant::None | ResidualVariant::Res1 => {
                let mut d_yt = Vector::from(d_y);
                add_into(&mut d_yt[..n_r], d_r_next);
                let w_rp = params.w_rp.as_ref().ok_or_else(missing)?;
                grads.w_rp.as_mut().ok_or_else(missing)?.add_outer(&d_yt, &trace.m);
                matvec_t(w_rp, &d_yt)?
            }
            ResidualVariant::Res2 => {
                let mut d_yt = Vector::from(d_y);
                add_into(&mut d_yt[..n_r], d_r_next);
                let h = trace.h.as_ref().ok_or_else(missing)?;
                let w_res = params.w_res.as_ref().ok_or_else(missing)?;
                grads.w_res.as_mut().ok_or_else(missing)?.add_outer(&d_yt, h);
                let d_h = matvec_t(w_res, &d_yt)?;
                add_into(&mut d_x, &d_h[n_c..]);
                Vector::from(&d_h[..n_c])
            }
            ResidualVariant::Res3 => {
                let h = trace.h.as_ref().ok_or_else(missing)?;
                let w_res = params.w_res.as_ref().ok_or_else(missing)?;
                grads.w_res.as_mut().ok_or_else(missing)?.add_outer(d_y, h);
                let d_h = matvec_t(w_res, d_y)?;
                add_into(&mut d_x, &d_h[n_y..]);
                let mut d_z = Vector::from(&d_h[..n_y]);
                add_into(&mut d_z[..n_r], d_r_next);
                let w_rp = params.w_rp.as_ref().ok_or_else(missing)?;
                grads.w_rp.as_mut().ok_or_else(missing)?.add_outer(&d_z, &trace.m);
                matvec_t(w_rp, &d_z)?
            }
        };

        match self.variant {
            ResidualVariant::Res1 => {
                // m = o ⊙ p,  p = W_res·[tanh(c); x]
                let p = trace.res_proj.as_ref().ok_or_else(missing)?;
                let h = trace.h.as_ref().ok_or_else(missing)?;
                let d_p = linalg::hadamard(&d_m, o)?;
                for k in 0..n_c {
                    d_o[k] = d_m[k] * p[k];
                }
                let w_res = params.w_res.as_ref().ok_or_else(missing)?;
                grads.w_res.as_mut().ok_or_else(missing)?.add_outer(&d_p, h);
                let d_h = matvec_t(w_res, &d_p)?;
                add_into(&mut d_x, &d_h[n_c..]);
                for k in 0..n_c {
                    d_c[k] = d_h[k] * (1.0 - tanh_c[k] * tanh_c[k]);
                }
            }
            _ => {
                // m = o ⊙ tanh(c)
                for k in 0..n_c {
                    d_o[k] = d_m[k] * tanh_c[k];
                    d_c[k] = d_m[k] * o[k] * (1.0 - tanh_c[k] * tanh_c[k]);
                }
            }
        }

        add_into(&mut d_c, d_c_next);

        let d_a_o: Vector = (0..n_c).map(|k| d_o[k] * o[k] * (1.0 - o[k])).collect::<Vec<_>>().into();
        if let (Some(p), Some(gp)) = (&params.peephole, grads.peephole.as_mut()) {
            for k in 0..n_c {
                d_c[k] += d_a_o[k] * p.w_oc[k];
                gp.w_oc[k] += d_a_o[k] * trace.c[k];
            }
        }

        if let Some(mask) = &trace.clip_mask {
            for (d, &clipped) in d_c.iter_mut().zip(mask) {
                if clipped {
                    *d = 0.0;
                }
            }
        }

        let (i, f, g) = (&trace.i, &trace.f, &trace.g);
        let mut d_c_prev = Vector::zeros(n_c);
        let mut d_a_i = Vector::zeros(n_c);
        let mut d_a_f = Vector::zeros(n_c);
        let mut d_a_g = Vector::zeros(n_c);
        for k in 0..n_c {
            d_c_prev[k] = d_c[k] * f[k];
            d_a_i[k] = d_c[k] * g[k] * i[k] * (1.0 - i[k]);
            d_a_f[k] = d_c[k] * c_prev[k] * f[k] * (1.0 - f[k]);
            d_a_g[k] = d_c[k] * i[k] * (1.0 - g[k] * g[k]);
        }
        if let (Some(p), Some(gp)) = (&params.peephole, grads.peephole.as_mut()) {
            for k in 0..n_c {
                d_c_prev[k] += d_a_i[k] * p.w_ic[k] + d_a_f[k] * p.w_fc[k];
                gp.w_ic[k] += d_a_i[k] * c_prev[k];
                gp.w_fc[k] += d_a_f[k] * c_prev[k];
            }
        }

        let x = &trace.x_in;
        let mut d_r_prev = Vector::zeros(n_r);
        let gates = [
            (&d_a_i, &params.w_ix, &params.w_ir),
            (&d_a_f, &params.w_fx, &params.w_fr),
            (&d_a_o, &params.w_ox, &params.w_or),
            (&d_a_g, &params.w_gx, &params.w_gr),
        ];
        for (d_a, wx, wr) in gates {
            add_into(&mut d_x, &matvec_t(wx, d_a)?);
            add_into(&mut d_r_prev, &matvec_t(wr, d_a)?);
        }
        grads.w_ix.add_outer(&d_a_i, x);
        grads.w_ir.add_outer(&d_a_i, r_prev);
        grads.w_fx.add_outer(&d_a_f, x);
        grads.w_fr.add_outer(&d_a_f, r_prev);
        grads.w_ox.add_outer(&d_a_o, x);
        grads.w_or.add_outer(&d_a_o, r_prev);
        grads.w_gx.add_outer(&d_a_g, x);
        grads.w_gr.add_outer(&d_a_g, r_prev);
        add_into(&mut grads.b_i, &d_a_i);
        add_into(&mut grads.b_f, &d_a_f);
        add_into(&mut grads.b_o, &d_a_o);
        add_into(&mut grads.b_g, &d_a_g);

        Ok(InputGrads {
            d_x,
            d_c_prev,
            d_r_prev,
        })
    }
}

/// One forward step; see [`CellSpec::step`].
pub fn cell_step(
    dims: &CellDims,
    style: GateStyle,
    variant: ResidualVariant,
    params: &LayerParams,
    x: &[f64],
    state_prev: &CellState,
) -> Result<(Vector, CellState, StepTrace)> {
    CellSpec::new(*dims, style, variant).step(params, x, state_prev)
}

/// One backward step; see [`CellSpec::backward`].
#[allow(clippy::too_many_arguments)]
pub fn cell_step_backward(
    dims: &CellDims,
    style: GateStyle,
    variant: ResidualVariant,
    params: &LayerParams,
    trace: &StepTrace,
    c_prev: &[f64],
    r_prev: &[f64],
    d_y: &[f64],
    d_c_next: &[f64],
    d_r_next: &[f64],
) -> Result<StepGrads> {
    CellSpec::new(*dims, style, variant).backward(params, trace, c_prev, r_prev, d_y, d_c_next, d_r_next)
}

#[cfg(test)]
mod tests;
