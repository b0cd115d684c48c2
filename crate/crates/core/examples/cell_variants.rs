//! One step of every gate style and residual variant on the same input,
//! showing output widths, the recurrent state and which intermediate
//! vectors each variant produces.
//!
//! ```text
//! cargo run --release -p reslstm --example cell_variants
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reslstm::cells::CellSpec;
use reslstm::{CellDims, CellState, GateStyle, LayerParams, ResidualVariant};

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:+.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn main() -> reslstm::Result<()> {
    let dims = CellDims::new(3, 4, 2, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..dims.n_x).map(|_| rng.random_range(-1.0..1.0)).collect();
    println!("x = {}", fmt(&x));
    for style in GateStyle::ALL {
        for variant in ResidualVariant::ALL {
            let spec = CellSpec::new(dims, style, variant);
            let mut p = LayerParams::zeros(&dims, dims.n_x, style, variant);
            let mut prng = ChaCha8Rng::seed_from_u64(7);
            for t in p.tensors_mut() {
                for v in t.iter_mut() {
                    *v = prng.random_range(-0.5..0.5);
                }
            }
            let (y, next, trace) = spec.step(&p, &x, &CellState::zeros(&dims))?;
            println!(
                "{style:>8}/{variant:<4} params={:>3} y={} r={} h={} z={}",
                p.num_elements(),
                fmt(&y),
                fmt(&next.r),
                trace.h.as_ref().map_or("-".into(), |h| format!("{} wide", h.len())),
                trace.z.as_ref().map_or("-".into(), |z| fmt(z)),
            );
        }
    }
    Ok(())
}
