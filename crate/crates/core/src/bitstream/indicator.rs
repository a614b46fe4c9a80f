use crate::bitstream::{arithmetic_decode, arithmetic_encode, BitVector, BitstreamError};

/// Per-block network symbols in raster order; each symbol is 0, 1 or 2.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndicatorVector {
    symbols: Vec<u8>,
}

impl IndicatorVector {
    pub fn new(symbols: Vec<u8>) -> Result<Self, BitstreamError> {
        if let Some(&s) = symbols.iter().find(|&&s| s > 2) {
            return Err(BitstreamError::InvalidSymbol(s));
        }
        Ok(IndicatorVector { symbols })
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Two bits per symbol, high bit first: 0 -> 00, 1 -> 01, 2 -> 10.
    pub fn to_bits(&self) -> BitVector {
        self.symbols.iter().flat_map(|&s| [s & 2 != 0, s & 1 != 0]).collect()
    }

    pub fn from_bits(bits: &BitVector) -> Result<Self, BitstreamError> {
        if !bits.len().is_multiple_of(2) {
            return Err(BitstreamError::Corrupt("odd indicator bit count".into()));
        }
        let symbols = bits
            .as_slice()
            .chunks(2)
            .map(|p| ((p[0] as u8) << 1) | p[1] as u8)
            .collect();
        Self::new(symbols)
    }

    /// Number of blocks coded with each network.
    pub fn histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        self.symbols.iter().for_each(|&s| h[s as usize] += 1);
        h
    }
}

/// Two-bit mapping followed by arithmetic coding with its own fresh model.
pub fn encode_indicator(ind: &IndicatorVector) -> Vec<u8> {
    arithmetic_encode(&ind.to_bits())
}

pub fn decode_indicator(bytes: &[u8], count: usize) -> Result<IndicatorVector, BitstreamError> {
    IndicatorVector::from_bits(&arithmetic_decode(bytes, 2 * count)?)
}
