//! Closed-form parameter counts and the TIMIT parameter table.

use std::ops::RangeInclusive;

use super::NetworkConfig;
use crate::cells::{CellDims, GateStyle, ResidualVariant};

/// Exact parameter count without allocating anything.
pub fn count_params(config: &NetworkConfig) -> u64 {
    let d = &config.dims;
    let (n_c, n_r, n_y) = (d.n_c as u64, d.n_r as u64, d.n_y() as u64);
    let mut total = 0u64;
    for l in 0..config.depth {
        let x_in = config.layer_input_size(l) as u64;
        let mut layer = 4 * n_c * (x_in + n_r) + 4 * n_c;
        if config.style.has_peepholes() {
            layer += 3 * n_c;
        }
        layer += match config.variant {
            ResidualVariant::None => n_y * n_c,
            ResidualVariant::Res1 => n_y * n_c + n_c * (n_c + x_in),
            ResidualVariant::Res2 => n_y * (n_c + x_in),
            ResidualVariant::Res3 => n_y * n_c + n_y * (n_y + x_in),
        };
        total += layer;
    }
    let n_out = config.n_out as u64;
    total + n_out * n_y + n_out
}

/// Count in units of 0.1M, rounded half up.
pub fn round_to_tenths(n: u64) -> u64 {
    (n + 50_000) / 100_000
}

/// `12504976` → `"12.5M"`.
pub fn format_millions(n: u64) -> String {
    let t = round_to_tenths(n);
    format!("{}.{}M", t / 10, t % 10)
}

/// Layer geometry of the TIMIT experiments: 300-dim input, 1024 cells,
/// 512 recurrent and 0 non-recurrent projection units.
pub const TABLE1_DIMS: CellDims = CellDims {
    n_x: 300,
    n_c: 1024,
    n_r: 512,
    n_nr: 0,
};

/// One `#P` entry of the TIMIT results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Table1Row {
    pub model: &'static str,
    /// `None` for the addition-shortcut Residual LSTM baseline, which this
    /// crate does not model.
    pub kind: Option<(GateStyle, ResidualVariant)>,
    pub depth: usize,
    /// Reported count in units of 0.1M.
    pub reported_tenths: u64,
}

impl Table1Row {
    pub fn config(&self, n_out: usize) -> Option<NetworkConfig> {
        self.kind.map(|(style, variant)| NetworkConfig {
            depth: self.depth,
            dims: TABLE1_DIMS,
            style,
            variant,
            n_out,
        })
    }

    pub fn computed(&self, n_out: usize) -> Option<u64> {
        self.config(n_out).map(|c| count_params(&c))
    }

    /// `Some(true)` if the rounded closed form equals the reported value.
    pub fn matches(&self, n_out: usize) -> Option<bool> {
        self.computed(n_out).map(|n| round_to_tenths(n) == self.reported_tenths)
    }

    pub fn reported(&self) -> String {
        format!("{}.{}M", self.reported_tenths / 10, self.reported_tenths % 10)
    }
}

/// Model name, modelled cell (None when not expressible) and reported tenths of a million per depth.
type TableEntry = (&'static str, Option<(GateStyle, ResidualVariant)>, [u64; 3]);

const TABLE1: [TableEntry; 9] = {
    use GateStyle::{Fast, Standard};
    use ResidualVariant as V;
    [
        ("LSTM", Some((Standard, V::None)), [96, 143, 190]),
        ("Residual LSTM", None, [98, 146, 193]),
        ("LSTM Res-1", Some((Standard, V::Res1)), [125, 188, 251]),
        ("LSTM Res-2", Some((Standard, V::Res2)), [100, 150, 200]),
        ("LSTM Res-3", Some((Standard, V::Res3)), [105, 158, 210]),
        ("Fast LSTM", Some((Fast, V::None)), [96, 143, 190]),
        ("Fast LSTM Res-1", Some((Fast, V::Res1)), [125, 188, 251]),
        ("Fast LSTM Res-2", Some((Fast, V::Res2)), [100, 150, 200]),
        ("Fast LSTM Res-3", Some((Fast, V::Res3)), [105, 158, 210]),
    ]
};

/// All 27 rows, in table order (depths 2, 3, 4 per model).
pub fn table1_rows() -> Vec<Table1Row> {
    TABLE1
        .iter()
        .flat_map(|&(model, kind, tenths)| {
            (2..=4).zip(tenths).map(move |(depth, reported_tenths)| Table1Row {
                model,
                kind,
                depth,
                reported_tenths,
            })
        })
        .collect()
}

/// Every `n_out` in `range` for which all modelled rows round to the
/// reported values.
pub fn feasible_n_out(range: RangeInclusive<usize>) -> Vec<usize> {
    let rows: Vec<_> = table1_rows().into_iter().filter(|r| r.kind.is_some()).collect();
    range
        .filter(|&n| rows.iter().all(|r| r.matches(n) == Some(true)))
        .collect()
}
