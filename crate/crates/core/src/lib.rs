//! Projected, fast and residual-spliced LSTM acoustic-model cells.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense f64 vectors/matrices with fixed summation order
//! - [`cells`]: one time step forward/backward for every gate style and
//!   residual variant, plus the fused four-gate product
//! - [`network`]: stacked layers with an affine output head, BPTT,
//!   closed-form parameter counting and the `RLM1` model file
//! - [`training`]: frame-level softmax cross-entropy, momentum SGD, the
//!   epoch loop, evaluation and the finite-difference gradient checker
//! - [`data`]: frame splicing, speaker-vector append, the synthetic teacher
//!   corpus and the `RLF1`/`RLL1` feature and label files
//! - [`cli`]: the `reslstm` command line (`gen-data`, `train`, `eval`,
//!   `grad-check`, `count-params`)
//!
//! Runnable walkthroughs for each capability live in `examples/`; run them
//! with `cargo run --release -p reslstm --example <name>`.

mod binio;
pub mod cells;
pub mod cli;
pub mod data;
pub mod error;
pub mod linalg;
pub mod network;
pub mod training;

pub use cells::{CellDims, CellState, GateStyle, LayerParams, ResidualVariant, StepTrace};
pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use network::{NetworkConfig, NetworkParams};
pub use training::Hyperparams;
