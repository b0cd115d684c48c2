//! Closed-form parameter counts for the TIMIT layer geometry, compared with
//! the reported counts, plus the range of output sizes consistent
//! with every modelled row.
//!
//! ```text
//! cargo run --release -p reslstm --example count_params_table1 -- [n_out]
//! ```

use reslstm::network::{feasible_n_out, format_millions, table1_rows};

fn main() {
    let n_out: usize = std::env::args().nth(1).map_or(1936, |s| s.parse().expect("n_out"));
    println!("{:<18} {:>5} {:>12} {:>8} {:>8}", "model", "depth", "count", "rounded", "reported");
    for row in table1_rows() {
        match row.computed(n_out) {
            Some(n) => println!(
                "{:<18} {:>5} {:>12} {:>8} {:>8}{}",
                row.model,
                row.depth,
                n,
                format_millions(n),
                row.reported(),
                if row.matches(n_out) == Some(true) { "" } else { "  <- mismatch" }
            ),
            None => println!(
                "{:<18} {:>5} {:>12} {:>8} {:>8}",
                row.model,
                row.depth,
                "-",
                "-",
                row.reported()
            ),
        }
    }
    let feasible = feasible_n_out(1..=4000);
    match (feasible.first(), feasible.last()) {
        (Some(lo), Some(hi)) => println!("n_out consistent with all modelled rows: [{lo}, {hi}]"),
        _ => println!("no n_out in 1..=4000 matches every modelled row"),
    }
}
