//! The `MMSL` selector file.
//!
//! ```text
//! magic "MMSL" | version u32 = 1 | dim u32 | hidden u32
//! then f32 LE: hidden_w (dim x hidden, row-major) | hidden_b (hidden) | out_w (hidden) | out_b
//! ```

use std::fs;
use std::path::Path;

use mmndb_core::retriever::SelectorModel;

use crate::store_io::{check_magic, Cursor, FormatError};

pub const SELECTOR_MAGIC: [u8; 4] = *b"MMSL";
pub const SELECTOR_VERSION: u32 = 1;
pub const SELECTOR_HEADER_LEN: usize = 16;

pub fn encode_selector(model: &SelectorModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(SELECTOR_HEADER_LEN + 4 * model.param_count());
    out.extend_from_slice(&SELECTOR_MAGIC);
    out.extend_from_slice(&SELECTOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(model.hidden() as u32).to_le_bytes());
    let out_b = model.out_b();
    let weights = model
        .hidden_w()
        .iter()
        .chain(model.hidden_b())
        .chain(model.out_w())
        .chain(std::iter::once(&out_b));
    for w in weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode_selector(bytes: &[u8]) -> Result<SelectorModel, FormatError> {
    let mut c = Cursor::new(bytes);
    check_magic(&mut c, SELECTOR_MAGIC)?;
    let version = c.u32()?;
    if version != SELECTOR_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dim = c.u32()? as usize;
    let hidden = c.u32()? as usize;
    let weights = dim
        .checked_mul(hidden)
        .and_then(|n| n.checked_add(2 * hidden + 1))
        .ok_or_else(|| FormatError::Invalid("selector shape overflows".into()))?;
    if weights.saturating_mul(4) > c.remaining() {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            needed: weights.saturating_mul(4) - c.remaining(),
        });
    }
    let hidden_w = c.f32s(dim * hidden)?;
    let hidden_b = c.f32s(hidden)?;
    let out_w = c.f32s(hidden)?;
    let out_b = c.f32s(1)?[0];
    c.finish()?;
    SelectorModel::from_parts(dim, hidden, hidden_w, hidden_b, out_w, out_b)
        .map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn write_selector(path: impl AsRef<Path>, model: &SelectorModel) -> Result<(), FormatError> {
    let path = path.as_ref();
    fs::write(path, encode_selector(model)).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_selector(path: impl AsRef<Path>) -> Result<SelectorModel, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_selector(&bytes)
}
