use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(spec: &CellSpec, n_in: usize, rng: &mut ChaCha8Rng) -> LayerParams {
    let mut p = LayerParams::zeros(&spec.dims, n_in, spec.style, spec.variant);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
    p
}

fn random_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn all_specs(dims: CellDims) -> Vec<CellSpec> {
    GateStyle::ALL
        .iter()
        .flat_map(|&s| ResidualVariant::ALL.iter().map(move |&v| CellSpec::new(dims, s, v)))
        .collect()
}

#[test]
fn zero_weights_give_zero_preactivations() {
    let dims = CellDims::new(3, 2, 1, 1).unwrap();
    for style in GateStyle::ALL {
        let p = LayerParams::zeros(&dims, 3, style, ResidualVariant::None);
        let a = gate_preactivations(&p, style, &[1.0, -2.0, 3.0], &[0.7], &[0.2, -0.4]).unwrap();
        for v in [&a.a_i, &a.a_f, &a.a_o, &a.a_g] {
            assert_eq!(v.as_slice(), &[0.0, 0.0]);
        }
    }
}

#[test]
fn fast_bias_passthrough() {
    let dims = CellDims::new(1, 1, 1, 0).unwrap();
    let mut p = LayerParams::zeros(&dims, 1, GateStyle::Fast, ResidualVariant::None);
    p.b_i[0] = 1.0;
    p.b_f[0] = 2.0;
    p.b_o[0] = 3.0;
    p.b_g[0] = 4.0;
    let a = gate_preactivations(&p, GateStyle::Fast, &[5.0], &[6.0], &[7.0]).unwrap();
    assert_eq!((a.a_i[0], a.a_f[0], a.a_o[0], a.a_g[0]), (1.0, 2.0, 3.0, 4.0));
}

#[test]
fn standard_input_gate_peephole() {
    let dims = CellDims::new(1, 1, 1, 0).unwrap();
    let mut p = LayerParams::zeros(&dims, 1, GateStyle::Standard, ResidualVariant::None);
    p.peephole.as_mut().unwrap().w_ic[0] = 1.0;
    let a = gate_preactivations(&p, GateStyle::Standard, &[3.0], &[2.0], &[0.5]).unwrap();
    assert_eq!(a.a_i[0], 0.5);
    assert_eq!(a.a_f[0], 0.0);
    assert_eq!(a.a_o[0], 0.0);
}

#[test]
fn style_and_peephole_presence_must_agree() {
    let dims = CellDims::new(1, 1, 1, 0).unwrap();
    let p = LayerParams::zeros(&dims, 1, GateStyle::Fast, ResidualVariant::None);
    assert!(gate_preactivations(&p, GateStyle::Standard, &[0.0], &[0.0], &[0.0]).is_err());
}

#[test]
fn fused_bias_passthrough() {
    let w = Matrix::zeros(8, 3);
    let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let a = fused_gate_preactivations(&w, &b, &[1.0, 1.0], &[1.0]).unwrap();
    assert_eq!(a.a_i.as_slice(), &[1.0, 2.0]);
    assert_eq!(a.a_f.as_slice(), &[3.0, 4.0]);
    assert_eq!(a.a_o.as_slice(), &[5.0, 6.0]);
    assert_eq!(a.a_g.as_slice(), &[7.0, 8.0]);
}

#[test]
fn fused_hand_arithmetic() {
    let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap();
    let a = fused_gate_preactivations(&w, &[0.0; 4], &[1.0], &[1.0]).unwrap();
    assert_eq!((a.a_i[0], a.a_f[0], a.a_o[0], a.a_g[0]), (1.0, 1.0, 2.0, 2.0));
}

#[test]
fn fused_rejects_bad_row_count() {
    let err = fused_gate_preactivations(&Matrix::zeros(6, 2), &[0.0; 6], &[0.0], &[0.0]).unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }));
}

#[test]
fn fused_matches_four_block_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = CellDims::new(5, 7, 3, 2).unwrap();
    let spec = CellSpec::new(dims, GateStyle::Fast, ResidualVariant::None);
    for _ in 0..50 {
        let mut p = random_params(&spec, 5, &mut rng);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v *= 12.5;
            }
        }
        let x = random_vec(5, 10.0, &mut rng);
        let r = random_vec(3, 10.0, &mut rng);
        let unfused = gate_preactivations(&p, GateStyle::Fast, &x, &r, &[0.0; 7]).unwrap();
        let (w_all, b_all) = p.fused_gate_matrix().unwrap();
        let fused = fused_gate_preactivations(&w_all, &b_all, &x, &r).unwrap();
        for (u, f) in [
            (&unfused.a_i, &fused.a_i),
            (&unfused.a_f, &fused.a_f),
            (&unfused.a_o, &fused.a_o),
            (&unfused.a_g, &fused.a_g),
        ] {
            for (a, b) in u.iter().zip(f.iter()) {
                assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn zero_params_give_half_open_gates_and_zero_output() {
    let dims = CellDims::new(3, 2, 1, 1).unwrap();
    for spec in all_specs(dims) {
        let p = LayerParams::zeros(&dims, 3, spec.style, spec.variant);
        let (y, next, tr) = spec.step(&p, &[0.3, -1.2, 2.0], &CellState::zeros(&dims)).unwrap();
        for gate in [&tr.i, &tr.f, &tr.o] {
            assert!(gate.iter().all(|&v| v == 0.5));
        }
        assert!(tr.g.iter().all(|&v| v == 0.0));
        assert!(tr.c.iter().all(|&v| v == 0.0));
        assert!(tr.m.iter().all(|&v| v == 0.0));
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(next.r.iter().all(|&v| v == 0.0));
    }
}

// Scalar chain, all weights zero except W_gx = W_rp = 1 and gate biases 10.
fn scalar_cell() -> (CellSpec, LayerParams) {
    let dims = CellDims::new(1, 1, 1, 0).unwrap();
    let spec = CellSpec::new(dims, GateStyle::Fast, ResidualVariant::None);
    let mut p = LayerParams::zeros(&dims, 1, spec.style, spec.variant);
    p.w_gx.set(0, 0, 1.0);
    p.w_rp.as_mut().unwrap().set(0, 0, 1.0);
    p.b_i[0] = 10.0;
    p.b_f[0] = 10.0;
    p.b_o[0] = 10.0;
    (spec, p)
}

#[test]
fn scalar_desk_evaluation() {
    let (spec, p) = scalar_cell();
    let (y, next, _) = spec.step(&p, &[0.5], &CellState::zeros(&spec.dims)).unwrap();
    // closed form: c = σ(10)·tanh(0.5), y = σ(10)·tanh(c)
    let s10 = 1.0 / (1.0 + (-10.0f64).exp());
    let c1 = s10 * 0.5f64.tanh();
    let y1 = s10 * c1.tanh();
    assert!((next.c[0] - c1).abs() < 1e-15);
    assert!((y[0] - y1).abs() < 1e-15);
    // frozen desk values
    assert!((c1 - 0.462096).abs() < 1e-6);
    assert!((y1 - 0.431772).abs() < 1e-6);
    assert_eq!(next.r[0], y[0]);
}

#[test]
fn scalar_desk_derivative() {
    let (spec, p) = scalar_cell();
    let prev = CellState::zeros(&spec.dims);
    let (_, _, tr) = spec.step(&p, &[0.5], &prev).unwrap();
    let g = spec.backward(&p, &tr, &prev.c, &prev.r, &[0.0], &[1.0], &[0.0]).unwrap();
    let s10 = 1.0 / (1.0 + (-10.0f64).exp());
    let expected = s10 * (1.0 - 0.5f64.tanh().powi(2));
    assert!((g.d_x[0] - expected).abs() < 1e-15);
    assert!((expected - 0.786412).abs() < 1e-6);
}

#[test]
fn zero_cotangent_gives_zero_gradients() {
    let dims = CellDims::new(3, 2, 1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for spec in all_specs(dims) {
        let p = random_params(&spec, 3, &mut rng);
        let prev = CellState {
            c: random_vec(2, 1.0, &mut rng).into(),
            r: random_vec(1, 1.0, &mut rng).into(),
        };
        let (_, _, tr) = spec.step(&p, &random_vec(3, 1.0, &mut rng), &prev).unwrap();
        let g = spec.backward(&p, &tr, &prev.c, &prev.r, &[0.0; 2], &[0.0; 2], &[0.0]).unwrap();
        assert!(g.d_x.iter().chain(g.d_c_prev.iter()).chain(g.d_r_prev.iter()).all(|&v| v == 0.0));
        assert!(g.d_params.tensors().iter().all(|(_, _, t)| t.iter().all(|&v| v == 0.0)));
    }
}

#[test]
fn trace_variant_mismatch_is_a_contract_error() {
    let dims = CellDims::new(2, 2, 1, 0).unwrap();
    let a = CellSpec::new(dims, GateStyle::Fast, ResidualVariant::None);
    let b = CellSpec::new(dims, GateStyle::Fast, ResidualVariant::Res2);
    let pa = LayerParams::zeros(&dims, 2, a.style, a.variant);
    let pb = LayerParams::zeros(&dims, 2, b.style, b.variant);
    let prev = CellState::zeros(&dims);
    let (_, _, tr) = a.step(&pa, &[1.0, 1.0], &prev).unwrap();
    let err = b.backward(&pb, &tr, &prev.c, &prev.r, &[0.0], &[0.0; 2], &[0.0]).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn step_rejects_misshapen_input() {
    let dims = CellDims::new(2, 2, 1, 0).unwrap();
    let spec = CellSpec::new(dims, GateStyle::Standard, ResidualVariant::Res1);
    let p = LayerParams::zeros(&dims, 2, spec.style, spec.variant);
    assert!(matches!(
        spec.step(&p, &[1.0, 2.0, 3.0], &CellState::zeros(&dims)),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn overflow_is_reported_with_position() {
    let (spec, p) = scalar_cell();
    let opts = StepOptions {
        step: 7,
        layer: 1,
        ..Default::default()
    };
    let err = spec.step_with(&p, &[f64::NAN], &CellState::zeros(&spec.dims), &opts).unwrap_err();
    assert!(matches!(err, Error::NumericOverflow { step: 7, layer: 1, .. }), "{err}");
}

#[test]
fn clipping_bounds_cell_and_blocks_gradient() {
    let (spec, mut p) = scalar_cell();
    p.w_gx.set(0, 0, 100.0);
    let prev = CellState {
        c: vec![60.0].into(),
        r: vec![0.0].into(),
    };
    let opts = StepOptions {
        cell_clip: Some(50.0),
        ..Default::default()
    };
    let (_, next, tr) = spec.step_with(&p, &[1.0], &prev, &opts).unwrap();
    assert_eq!(next.c[0], 50.0);
    assert_eq!(tr.clip_mask.as_deref(), Some(&[true][..]));
    let g = spec.backward(&p, &tr, &prev.c, &prev.r, &[0.0], &[1.0], &[0.0]).unwrap();
    assert_eq!(g.d_c_prev[0], 0.0);
    assert_eq!(g.d_x[0], 0.0);
}

fn identity_padded(rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// Builds a residual layer that should collapse onto `base` (variant None).
fn reduced(base: &LayerParams, dims: &CellDims, n_in: usize, variant: ResidualVariant) -> LayerParams {
    let mut p = base.clone();
    let w_rp = base.w_rp.clone().unwrap();
    match variant {
        ResidualVariant::None => {}
        ResidualVariant::Res1 => p.w_res = Some(identity_padded(dims.n_c, dims.n_c + n_in)),
        ResidualVariant::Res2 => {
            p.w_res = Some(w_rp.hconcat(&Matrix::zeros(dims.n_y(), n_in)).unwrap());
            p.w_rp = None;
        }
        ResidualVariant::Res3 => p.w_res = Some(identity_padded(dims.n_y(), dims.n_y() + n_in)),
    }
    p
}

#[test]
fn residual_variants_reduce_to_plain_cell() {
    let dims = CellDims::new(4, 5, 2, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for style in GateStyle::ALL {
        let base_spec = CellSpec::new(dims, style, ResidualVariant::None);
        for _ in 0..20 {
            let base = random_params(&base_spec, 4, &mut rng);
            let x = random_vec(4, 2.0, &mut rng);
            let prev = CellState {
                c: random_vec(5, 2.0, &mut rng).into(),
                r: random_vec(2, 1.0, &mut rng).into(),
            };
            let (y0, s0, _) = base_spec.step(&base, &x, &prev).unwrap();
            for v in [ResidualVariant::Res1, ResidualVariant::Res2, ResidualVariant::Res3] {
                let spec = CellSpec::new(dims, style, v);
                let p = reduced(&base, &dims, 4, v);
                let (y, s, _) = spec.step(&p, &x, &prev).unwrap();
                for (a, b) in y.iter().chain(s.r.iter()).chain(s.c.iter()).zip(y0.iter().chain(s0.r.iter()).chain(s0.c.iter())) {
                    assert!((a - b).abs() <= 1e-12, "{style}/{v}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn res3_recurrence_comes_from_z() {
    let dims = CellDims::new(3, 4, 2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for style in GateStyle::ALL {
        let spec = CellSpec::new(dims, style, ResidualVariant::Res3);
        let p = random_params(&spec, 3, &mut rng);
        let (y, next, tr) = spec.step(&p, &[0.1, 0.2, -0.3], &CellState::zeros(&dims)).unwrap();
        let z = tr.z.as_ref().unwrap();
        assert!(next.r.iter().zip(&z[..2]).all(|(a, b)| a.to_bits() == b.to_bits()));
        // and generally not y's prefix
        assert_ne!(next.r.as_slice(), &y[..2]);
    }
}

/// Scalar objective `⟨wy, y⟩ + ⟨wc, c_next⟩ + ⟨wr, r_next⟩` evaluated by the
/// forward pass alone.
struct Probe {
    wy: Vec<f64>,
    wc: Vec<f64>,
    wr: Vec<f64>,
}

impl Probe {
    fn eval(&self, spec: &CellSpec, p: &LayerParams, x: &[f64], prev: &CellState) -> f64 {
        let (y, next, _) = spec.step(p, x, prev).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        dot(&self.wy, &y) + dot(&self.wc, &next.c) + dot(&self.wr, &next.r)
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn central_diff(f: impl Fn(f64) -> f64, x0: f64, eps: f64) -> f64 {
    (f(x0 + eps) - f(x0 - eps)) / (2.0 * eps)
}

fn check_step_gradients(spec: CellSpec, seed: u64) -> f64 {
    let eps = 1e-5;
    let dims = spec.dims;
    let n_in = dims.n_x;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_params(&spec, n_in, &mut rng);
    let x = random_vec(n_in, 1.0, &mut rng);
    let prev = CellState {
        c: random_vec(dims.n_c, 1.0, &mut rng).into(),
        r: random_vec(dims.n_r, 1.0, &mut rng).into(),
    };
    let probe = Probe {
        wy: random_vec(dims.n_y(), 1.0, &mut rng),
        wc: random_vec(dims.n_c, 1.0, &mut rng),
        wr: random_vec(dims.n_r, 1.0, &mut rng),
    };
    let (_, _, tr) = spec.step(&p, &x, &prev).unwrap();
    let g = spec.backward(&p, &tr, &prev.c, &prev.r, &probe.wy, &probe.wc, &probe.wr).unwrap();

    let mut worst: f64 = 0.0;
    let analytic: Vec<f64> = g.d_params.tensors().iter().flat_map(|(_, _, t)| t.to_vec()).collect();
    let mut k = 0;
    let n_tensors = p.tensors().len();
    for ti in 0..n_tensors {
        let len = p.tensors()[ti].2.len();
        for e in 0..len {
            let num = central_diff(
                |v| {
                    let mut q = p.clone();
                    q.tensors_mut()[ti][e] = v;
                    probe.eval(&spec, &q, &x, &prev)
                },
                p.tensors()[ti].2[e],
                eps,
            );
            worst = worst.max(rel_err(analytic[k], num));
            k += 1;
        }
    }
    for e in 0..n_in {
        let num = central_diff(
            |v| {
                let mut xx = x.clone();
                xx[e] = v;
                probe.eval(&spec, &p, &xx, &prev)
            },
            x[e],
            eps,
        );
        worst = worst.max(rel_err(g.d_x[e], num));
    }
    for e in 0..dims.n_c {
        let num = central_diff(
            |v| {
                let mut s = prev.clone();
                s.c[e] = v;
                probe.eval(&spec, &p, &x, &s)
            },
            prev.c[e],
            eps,
        );
        worst = worst.max(rel_err(g.d_c_prev[e], num));
    }
    for e in 0..dims.n_r {
        let num = central_diff(
            |v| {
                let mut s = prev.clone();
                s.r[e] = v;
                probe.eval(&spec, &p, &x, &s)
            },
            prev.r[e],
            eps,
        );
        worst = worst.max(rel_err(g.d_r_prev[e], num));
    }
    worst
}

#[test]
fn step_gradients_match_finite_differences_tiny() {
    let dims = CellDims::new(3, 2, 1, 1).unwrap();
    for spec in all_specs(dims) {
        let err = check_step_gradients(spec, 42);
        assert!(err < 1e-6, "{}/{}: max rel err {err:e}", spec.style, spec.variant);
    }
}

#[test]
fn step_gradients_match_finite_differences_wider() {
    let dims = CellDims::new(8, 6, 3, 2).unwrap();
    for spec in all_specs(dims) {
        for seed in [1, 2] {
            let err = check_step_gradients(spec, seed);
            assert!(err < 1e-4, "{}/{} seed {seed}: max rel err {err:e}", spec.style, spec.variant);
        }
    }
}

fn dims_strategy() -> impl Strategy<Value = CellDims> {
    (1usize..6, 1usize..6, 1usize..4, 0usize..3).prop_map(|(n_x, n_c, n_r, n_nr)| CellDims { n_x, n_c, n_r, n_nr })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shape_gate_and_bound_laws(dims in dims_strategy(), seed in any::<u64>(), s in 0usize..2, v in 0usize..4) {
        let spec = CellSpec::new(dims, GateStyle::ALL[s], ResidualVariant::ALL[v]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&spec, dims.n_x, &mut rng);
        let prev = CellState {
            c: random_vec(dims.n_c, 3.0, &mut rng).into(),
            r: random_vec(dims.n_r, 1.0, &mut rng).into(),
        };
        let x = random_vec(dims.n_x, 3.0, &mut rng);
        let (y, next, tr) = spec.step(&p, &x, &prev).unwrap();
        prop_assert_eq!(y.len(), dims.n_y());
        prop_assert_eq!(next.r.len(), dims.n_r);
        prop_assert_eq!(next.c.len(), dims.n_c);
        for gate in [&tr.i, &tr.f, &tr.o] {
            prop_assert!(gate.iter().all(|&u| u > 0.0 && u < 1.0));
        }
        prop_assert!(tr.g.iter().all(|&u| u > -1.0 && u < 1.0));
        if spec.variant == ResidualVariant::None {
            prop_assert!(tr.m.iter().all(|&u| u.abs() < 1.0));
        }
        if let Some(h) = &tr.h {
            let lead = match spec.variant {
                ResidualVariant::Res3 => dims.n_y(),
                _ => dims.n_c,
            };
            prop_assert_eq!(h.len(), lead + dims.n_x);
        }
    }

    #[test]
    fn fused_equivalence_random(seed in any::<u64>(), n_c in 1usize..9, n_in in 1usize..9, n_r in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = CellDims { n_x: n_in, n_c, n_r, n_nr: 0 };
        let spec = CellSpec::new(dims, GateStyle::Fast, ResidualVariant::None);
        let mut p = random_params(&spec, n_in, &mut rng);
        for t in p.tensors_mut() {
            for u in t.iter_mut() {
                *u *= 12.5;
            }
        }
        let x = random_vec(n_in, 10.0, &mut rng);
        let r = random_vec(n_r, 10.0, &mut rng);
        let a = gate_preactivations(&p, GateStyle::Fast, &x, &r, &vec![0.0; n_c]).unwrap();
        let (w, b) = p.fused_gate_matrix().unwrap();
        let f = fused_gate_preactivations(&w, &b, &x, &r).unwrap();
        for (u, q) in a.a_i.iter().chain(a.a_f.iter()).chain(a.a_o.iter()).chain(a.a_g.iter())
            .zip(f.a_i.iter().chain(f.a_f.iter()).chain(f.a_o.iter()).chain(f.a_g.iter())) {
            prop_assert!((u - q).abs() <= 1e-10);
        }
    }
}
