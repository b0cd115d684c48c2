//! Save a model, inspect the file header, load it back and confirm the
//! forward pass is bit-identical.
//!
//! ```text
//! cargo run --release -p reslstm --example model_roundtrip -- [path]
//! ```

use std::path::PathBuf;

use reslstm::network::{forward, init_params, load_model, save_model};
use reslstm::{CellDims, GateStyle, Matrix, NetworkConfig, ResidualVariant};

fn main() -> reslstm::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("reslstm-demo.rlm"));
    let config = NetworkConfig {
        depth: 3,
        dims: CellDims::new(12, 16, 8, 4)?,
        style: GateStyle::Standard,
        variant: ResidualVariant::Res3,
        n_out: 5,
    };
    let params = init_params(&config, 42);
    save_model(&params, &config, &path)?;

    let bytes = std::fs::read(&path)?;
    let words: Vec<u32> = bytes[4..40]
        .chunks(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    println!(
        "{}: {} bytes, magic {:?}, header {words:?}",
        path.display(),
        bytes.len(),
        String::from_utf8_lossy(&bytes[..4])
    );

    let (loaded, loaded_config) = load_model(&path)?;
    let frames = Matrix::from_fn(10, 12, |t, j| ((t * 12 + j) as f64 * 0.37).sin());
    let (a, _) = forward(&params, &config, &frames)?;
    let (b, _) = forward(&loaded, &loaded_config, &frames)?;
    let identical = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    println!("config preserved: {}, logits bit-identical: {identical}", loaded_config == config);
    Ok(())
}
