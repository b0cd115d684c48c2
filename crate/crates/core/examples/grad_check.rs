//! Finite-difference check of the BPTT gradient for every gate style and
//! residual variant, with the worst component of each.
//!
//! ```text
//! cargo run --release -p reslstm --example grad_check -- [seed]
//! ```

use reslstm::training::grad_check_detailed;
use reslstm::{CellDims, GateStyle, NetworkConfig, ResidualVariant};

fn main() -> reslstm::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let dims = CellDims::new(7, 6, 3, 2)?;
    for style in GateStyle::ALL {
        for variant in ResidualVariant::ALL {
            let config = NetworkConfig {
                depth: 2,
                dims,
                style,
                variant,
                n_out: 4,
            };
            let r = grad_check_detailed(&config, seed, 5, 1e-5)?;
            let k = (0..r.analytic.len())
                .max_by(|&a, &b| r.rel_err(a).total_cmp(&r.rel_err(b)))
                .unwrap_or(0);
            println!(
                "{style:>8}/{variant:<4} params={:>4} max_rel_err={:.2e} at {} (analytic {:+.4e}, numeric {:+.4e})",
                r.analytic.len(),
                r.rel_err(k),
                r.names[k],
                r.analytic[k],
                r.numeric[k]
            );
        }
    }
    Ok(())
}
