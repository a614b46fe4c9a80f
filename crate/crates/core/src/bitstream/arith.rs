//! Adaptive binary range coder (carry-propagating, 32-bit range, byte-wise
//! renormalization) driven by Laplace-smoothed bit counts.

use crate::bitstream::{BitVector, BitstreamError};

const TOP: u32 = 1 << 24;
/// Counts are halved once their sum exceeds this, keeping `range / total` large.
const MAX_TOTAL: u32 = 1 << 16;

/// Order-0 adaptive estimate `p(1) = c1 / (c0 + c1)`, counts starting at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaptiveBitModel {
    c0: u32,
    c1: u32,
}

impl Default for AdaptiveBitModel {
    fn default() -> Self {
        Self::new()
    }
}

impl AdaptiveBitModel {
    pub fn new() -> Self {
        AdaptiveBitModel { c0: 1, c1: 1 }
    }

    pub fn counts(&self) -> (u32, u32) {
        (self.c0, self.c1)
    }

    pub fn p1(&self) -> f64 {
        self.c1 as f64 / (self.c0 + self.c1) as f64
    }

    pub fn update(&mut self, bit: bool) {
        if bit {
            self.c1 += 1;
        } else {
            self.c0 += 1;
        }
        if self.c0 + self.c1 > MAX_TOTAL {
            self.c0 = (self.c0 / 2).max(1);
            self.c1 = (self.c1 / 2).max(1);
        }
    }

    /// Width of the zero sub-interval for the current `range`.
    fn split(&self, range: u32) -> u32 {
        (range / (self.c0 + self.c1)) * self.c0
    }
}

pub struct ArithEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    // The first byte shifted out is always zero and is not stored.
    skip_first: bool,
    out: Vec<u8>,
}

impl Default for ArithEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl ArithEncoder {
    pub fn new() -> Self {
        ArithEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            skip_first: true,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, bit: bool, model: &mut AdaptiveBitModel) {
        let bound = model.split(self.range);
        if bit {
            self.low += bound as u64;
            self.range -= bound;
        } else {
            self.range = bound;
        }
        model.update(bit);
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn emit(&mut self, byte: u8) {
        if self.skip_first {
            self.skip_first = false;
        } else {
            self.out.push(byte);
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.emit(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct ArithDecoder<'a> {
    range: u32,
    code: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ArithDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self, BitstreamError> {
        let mut dec = ArithDecoder {
            range: u32::MAX,
            code: 0,
            bytes,
            pos: 0,
        };
        for _ in 0..4 {
            dec.code = (dec.code << 8) | dec.next_byte()? as u32;
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8, BitstreamError> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or(BitstreamError::Truncated("arithmetic-coded payload"))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, model: &mut AdaptiveBitModel) -> Result<bool, BitstreamError> {
        let bound = model.split(self.range);
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        model.update(bit);
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(bit)
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Codes `bits` with a fresh model. An empty input yields an empty payload.
pub fn arithmetic_encode(bits: &BitVector) -> Vec<u8> {
    if bits.is_empty() {
        return Vec::new();
    }
    let mut model = AdaptiveBitModel::new();
    let mut enc = ArithEncoder::new();
    for b in bits.iter() {
        enc.encode(b, &mut model);
    }
    enc.finish()
}

/// Decodes exactly `n_bits` bits. The encoder and decoder consume bytes in
/// lockstep, so a payload that is too short or too long is reported.
pub fn arithmetic_decode(bytes: &[u8], n_bits: usize) -> Result<BitVector, BitstreamError> {
    if n_bits == 0 {
        return if bytes.is_empty() {
            Ok(BitVector::new())
        } else {
            Err(BitstreamError::TrailingBytes(bytes.len()))
        };
    }
    let mut model = AdaptiveBitModel::new();
    let mut dec = ArithDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(n_bits);
    for _ in 0..n_bits {
        out.push(dec.decode(&mut model)?);
    }
    match dec.remaining() {
        0 => Ok(BitVector::from(out)),
        n => Err(BitstreamError::TrailingBytes(n)),
    }
}
