//! `RLM1` model files.
//!
//! ```text
//! "RLM1"  u32 version
//! u32 depth, n_x, n_c, n_r, n_nr, style, variant, n_out
//! per tensor (layer order, then W_out, b_out):
//!     u32 rows, u32 cols, rows·cols × f64, row-major
//! ```
//!
//! All integers and floats are little-endian. Vectors are written as
//! `len × 1` matrices.

use std::fs;
use std::path::Path;

use super::{NetworkConfig, NetworkParams};
use crate::binio::{put_f64s, put_u32, to_u32, write_atomic, Reader};
use crate::cells::{CellDims, GateStyle, ResidualVariant};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RLM1";
pub const MODEL_VERSION: u32 = 1;
pub const SUPPORTED_VERSIONS: &[u32] = &[MODEL_VERSION];

pub fn model_to_bytes(params: &NetworkParams, config: &NetworkConfig) -> Result<Vec<u8>> {
    config.validate()?;
    params.check_shapes(config)?;
    let mut out = Vec::with_capacity(48 + 8 * params.num_elements() + 8 * params.tensors().len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, MODEL_VERSION);
    let d = &config.dims;
    for (v, what) in [
        (config.depth, "depth"),
        (d.n_x, "n_x"),
        (d.n_c, "n_c"),
        (d.n_r, "n_r"),
        (d.n_nr, "n_nr"),
    ] {
        put_u32(&mut out, to_u32(v, what)?);
    }
    put_u32(&mut out, config.style.code());
    put_u32(&mut out, config.variant.code());
    put_u32(&mut out, to_u32(config.n_out, "n_out")?);
    for (name, (rows, cols), data) in params.tensors() {
        put_u32(&mut out, to_u32(rows, name)?);
        put_u32(&mut out, to_u32(cols, name)?);
        put_f64s(&mut out, data);
    }
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<(NetworkParams, NetworkConfig)> {
    let mut rd = Reader::new(bytes);
    rd.magic(MAGIC)?;
    let version = rd.u32("version")?;
    if !SUPPORTED_VERSIONS.contains(&version) {
        return Err(Error::Version {
            found: version,
            supported: SUPPORTED_VERSIONS,
        });
    }
    let header_at = rd.offset();
    let mut field = |what| rd.u32(what).map(|v| v as usize);
    let depth = field("depth")?;
    let (n_x, n_c, n_r, n_nr) = (field("n_x")?, field("n_c")?, field("n_r")?, field("n_nr")?);
    let style_at = rd.offset();
    let style = GateStyle::from_code(rd.u32("style")?)
        .ok_or_else(|| Error::format(style_at, "unknown gate style code"))?;
    let variant_at = rd.offset();
    let variant = ResidualVariant::from_code(rd.u32("variant")?)
        .ok_or_else(|| Error::format(variant_at, "unknown residual variant code"))?;
    let n_out = rd.u32("n_out")? as usize;
    let config = NetworkConfig {
        depth,
        dims: CellDims { n_x, n_c, n_r, n_nr },
        style,
        variant,
        n_out,
    };
    config
        .validate()
        .map_err(|e| Error::format(header_at, format!("invalid config: {e}")))?;

    let mut params = NetworkParams::zeros(&config);
    let expected: Vec<_> = params
        .tensors()
        .iter()
        .map(|(name, shape, _)| (*name, *shape))
        .collect();
    for ((name, (rows, cols)), slot) in expected.into_iter().zip(params.tensors_mut()) {
        let at = rd.offset();
        let r = rd.u32(name)? as usize;
        let c = rd.u32(name)? as usize;
        if (r, c) != (rows, cols) {
            return Err(Error::format(at, format!("{name} is {r}x{c}, expected {rows}x{cols}")));
        }
        slot.copy_from_slice(&rd.f64s(rows * cols, name)?);
    }
    rd.finish()?;
    Ok((params, config))
}

/// Writes the model atomically (temp file + rename).
pub fn save_model(params: &NetworkParams, config: &NetworkConfig, path: impl AsRef<Path>) -> Result<()> {
    let bytes = model_to_bytes(params, config)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(NetworkParams, NetworkConfig)> {
    let bytes = fs::read(path)?;
    model_from_bytes(&bytes)
}
