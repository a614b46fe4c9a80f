use crate::bitstream::BitVector;

/// `out[0] = in[0]`, `out[i] = in[i] ^ in[i - 1]`.
pub fn difference_encode(bits: &BitVector) -> BitVector {
    let mut prev = false;
    bits.iter()
        .map(|b| {
            let d = b ^ prev;
            prev = b;
            d
        })
        .collect()
}

/// Prefix XOR, the inverse of [`difference_encode`].
pub fn difference_decode(bits: &BitVector) -> BitVector {
    let mut acc = false;
    bits.iter()
        .map(|d| {
            acc ^= d;
            acc
        })
        .collect()
}
