//! Little-endian binary containers for tensors, token streams and label streams.
//!
//! All three formats start with a 4-byte magic and a `u32` format version so
//! that a reader written in any language can reject foreign files early.
//!
//! | file   | magic  | header after version              | payload                    |
//! |--------|--------|-----------------------------------|----------------------------|
//! | tensor | `UNRN` | `u32` dtype, `u32` ndim, ndim×u64 | row-major f32              |
//! | tokens | `UNRT` | `u32` context length              | repeated `u32` len + ids   |
//! | labels | `UNRL` | `u64` label count                 | one `u8` (0 or 1) per token|

mod exclusions;
mod labels;
mod tensor;
mod tokens;

pub use exclusions::{ExclusionConfig, ExclusionSet};
pub use labels::{read_labels, write_labels, LabelStream, LABEL_MAGIC};
pub use tensor::{read_tensor, write_tensor, DType, TensorFile, TENSOR_MAGIC};
pub use tokens::{
    read_token_stream, write_token_stream, MaskedTokens, TokenStream, Window, TOKEN_MAGIC,
};

/// Version written into every header; readers reject anything else.
pub const FORMAT_VERSION: u32 = 1;

use std::io::Read;

use crate::error::{Error, Result};

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(what, "truncated"),
        _ => Error::Io(e),
    })
}

pub(crate) fn check_header<R: Read>(
    r: &mut R,
    magic: &[u8; 4],
    what: &'static str,
) -> Result<()> {
    let mut m = [0u8; 4];
    read_exact_or(r, &mut m, what)?;
    if &m != magic {
        return Err(Error::format(what, format!("bad magic {m:?}")));
    }
    let version = read_u32(r, what)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(what, format!("unsupported version {version}")));
    }
    Ok(())
}
