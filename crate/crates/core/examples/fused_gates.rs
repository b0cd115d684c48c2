//! Fused versus four-block gate preactivations: numerical agreement and
//! wall-clock time at realistic layer widths. Timings are informational.
//!
//! ```text
//! cargo run --release -p reslstm --example fused_gates
//! ```

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reslstm::cells::{fused_gate_preactivations, gate_preactivations};
use reslstm::{CellDims, GateStyle, LayerParams, ResidualVariant};

fn main() -> reslstm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n_c in [256, 1024] {
        let dims = CellDims::new(300, n_c, n_c / 2, 0)?;
        let mut p = LayerParams::zeros(&dims, dims.n_x, GateStyle::Fast, ResidualVariant::None);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
        let x: Vec<f64> = (0..dims.n_x).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..dims.n_r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c0 = vec![0.0; n_c];
        let (w_all, b_all) = p.fused_gate_matrix()?;
        let reps = if n_c == 256 { 200 } else { 20 };

        let t0 = Instant::now();
        for _ in 0..reps {
            black_box(gate_preactivations(&p, GateStyle::Fast, black_box(&x), &r, &c0)?);
        }
        let unfused = t0.elapsed().as_secs_f64() / reps as f64;
        let t0 = Instant::now();
        for _ in 0..reps {
            black_box(fused_gate_preactivations(&w_all, &b_all, black_box(&x), &r)?);
        }
        let fused = t0.elapsed().as_secs_f64() / reps as f64;

        let a = gate_preactivations(&p, GateStyle::Fast, &x, &r, &c0)?;
        let b = fused_gate_preactivations(&w_all, &b_all, &x, &r)?;
        let diff = [(&a.a_i, &b.a_i), (&a.a_f, &b.a_f), (&a.a_o, &b.a_o), (&a.a_g, &b.a_g)]
            .iter()
            .flat_map(|(u, v)| u.iter().zip(v.iter()).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max);
        println!(
            "n_c={n_c:>5}: four-block {:.1} us, fused {:.1} us, ratio {:.2}, max |diff| {diff:.1e}",
            unfused * 1e6,
            fused * 1e6,
            fused / unfused
        );
    }
    Ok(())
}
