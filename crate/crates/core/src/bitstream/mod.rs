//! Lossless back end: XOR difference coding, an adaptive binary range coder,
//! indicator coding, and the `.ntc` container.

mod arith;
mod container;
mod diff;
mod indicator;

use thiserror::Error;

pub use arith::{arithmetic_decode, arithmetic_encode, AdaptiveBitModel, ArithDecoder, ArithEncoder};
pub use container::{
    parse_container, serialize_container, Container, CONTAINER_MAGIC, CONTAINER_VERSION, HEADER_BYTES,
};
pub use diff::{difference_decode, difference_encode};
pub use indicator::{decode_indicator, encode_indicator, IndicatorVector};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BitstreamError {
    #[error("bad container magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid indicator symbol {0}")]
    InvalidSymbol(u8),
    #[error("corrupt stream: {0}")]
    Corrupt(String),
}

/// Ordered bits with an exact length.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitVector {
    bits: Vec<bool>,
}

impl BitVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn push(&mut self, bit: bool) {
        self.bits.push(bit);
    }

    pub fn extend_from_slice(&mut self, bits: &[bool]) {
        self.bits.extend_from_slice(bits);
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().copied()
    }

    /// Number of positions where a bit differs from its predecessor.
    pub fn transitions(&self) -> usize {
        self.bits.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

impl From<Vec<bool>> for BitVector {
    fn from(bits: Vec<bool>) -> Self {
        BitVector { bits }
    }
}

impl FromIterator<bool> for BitVector {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        BitVector {
            bits: iter.into_iter().collect(),
        }
    }
}

/// Parses "10110" style strings; handy in tests and docs.
impl std::str::FromStr for BitVector {
    type Err = BitstreamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(BitstreamError::Corrupt(format!("not a bit: {other:?}"))),
            })
            .collect()
    }
}
