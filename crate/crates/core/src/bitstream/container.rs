//! `.ntc` container layout, all integers little-endian:
//!
//! ```text
//! offset size  field
//!      0    4  magic "NTC1"
//!      4    1  version (1)
//!      5    4  width  (u32, original image width)
//!      9    4  height (u32, original image height)
//!     13    2  block_rows (u16)
//!     15    2  block_cols (u16)
//!     17    4  target_psnr (f32, informational)
//!     21    4  indicator payload length in bytes (u32)
//!     25    n  indicator payload
//!   25+n    4  image-code length in bits (u32)
//!   29+n    4  image-code payload length in bytes (u32)
//!   33+n    m  image-code payload
//! ```

use crate::bitstream::BitstreamError;

pub const CONTAINER_MAGIC: &[u8; 4] = b"NTC1";
pub const CONTAINER_VERSION: u8 = 1;
/// Bytes of fixed fields (everything except the two payloads).
pub const HEADER_BYTES: usize = 33;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub width: u32,
    pub height: u32,
    pub block_rows: u16,
    pub block_cols: u16,
    pub target_psnr: f32,
    pub indicator: Vec<u8>,
    pub code_bits: u32,
    pub code: Vec<u8>,
}

impl Container {
    pub fn block_count(&self) -> usize {
        self.block_rows as usize * self.block_cols as usize
    }

    pub fn serialized_len(&self) -> usize {
        HEADER_BYTES + self.indicator.len() + self.code.len()
    }
}

pub fn serialize_container(c: &Container) -> Vec<u8> {
    let mut out = Vec::with_capacity(c.serialized_len());
    out.extend_from_slice(CONTAINER_MAGIC);
    out.push(CONTAINER_VERSION);
    out.extend_from_slice(&c.width.to_le_bytes());
    out.extend_from_slice(&c.height.to_le_bytes());
    out.extend_from_slice(&c.block_rows.to_le_bytes());
    out.extend_from_slice(&c.block_cols.to_le_bytes());
    out.extend_from_slice(&c.target_psnr.to_le_bytes());
    out.extend_from_slice(&(c.indicator.len() as u32).to_le_bytes());
    out.extend_from_slice(&c.indicator);
    out.extend_from_slice(&c.code_bits.to_le_bytes());
    out.extend_from_slice(&(c.code.len() as u32).to_le_bytes());
    out.extend_from_slice(&c.code);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], BitstreamError> {
        if self.bytes.len() < n {
            return Err(BitstreamError::Truncated(what));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], BitstreamError> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }
}

pub fn parse_container(bytes: &[u8]) -> Result<Container, BitstreamError> {
    let mut r = Reader { bytes };
    let magic = r.array::<4>("magic")?;
    if &magic != CONTAINER_MAGIC {
        return Err(BitstreamError::BadMagic(magic));
    }
    let version = r.array::<1>("version")?[0];
    if version != CONTAINER_VERSION {
        return Err(BitstreamError::UnsupportedVersion(version));
    }
    let width = u32::from_le_bytes(r.array("width")?);
    let height = u32::from_le_bytes(r.array("height")?);
    let block_rows = u16::from_le_bytes(r.array("block_rows")?);
    let block_cols = u16::from_le_bytes(r.array("block_cols")?);
    let target_psnr = f32::from_le_bytes(r.array("target_psnr")?);
    let ind_len = u32::from_le_bytes(r.array("indicator length")?) as usize;
    let indicator = r.take(ind_len, "indicator payload")?.to_vec();
    let code_bits = u32::from_le_bytes(r.array("image-code bit length")?);
    let code_len = u32::from_le_bytes(r.array("image-code byte length")?) as usize;
    let code = r.take(code_len, "image-code payload")?.to_vec();
    if !r.bytes.is_empty() {
        return Err(BitstreamError::TrailingBytes(r.bytes.len()));
    }
    Ok(Container {
        width,
        height,
        block_rows,
        block_cols,
        target_psnr,
        indicator,
        code_bits,
        code,
    })
}
