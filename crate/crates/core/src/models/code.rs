use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeMode {
    /// Encoder output, entries in [0, 1].
    Continuous,
    /// Hard bits, entries in {0, 1}.
    Binary,
}

/// Latent vector of one 32x32 block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCode {
    values: Vec<f32>,
    mode: CodeMode,
}

impl BlockCode {
    pub fn continuous(values: Vec<f32>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "continuous code entry {v} outside [0, 1]"
            )));
        }
        Ok(BlockCode {
            values,
            mode: CodeMode::Continuous,
        })
    }

    /// Continuous code without the range check; only the decoder's scale
    /// invariance tests feed such codes.
    pub fn unchecked(values: Vec<f32>) -> Self {
        BlockCode {
            values,
            mode: CodeMode::Continuous,
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        BlockCode {
            values: bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            mode: CodeMode::Binary,
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mode(&self) -> CodeMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bits(&self) -> Option<Vec<bool>> {
        (self.mode == CodeMode::Binary).then(|| self.values.iter().map(|&v| v >= 0.5).collect())
    }

    /// `[1, len, 1, 1]` tensor as consumed by the decoder.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, self.values.len(), 1, 1], self.values.clone()).expect("shape")
    }
}

/// Rounds to the nearest integer with ties at 0.5 going up.
pub fn binarize_value(x: f32) -> f32 {
    if x >= 0.5 {
        1.0
    } else {
        0.0
    }
}

pub fn binarize(code: &BlockCode) -> BlockCode {
    BlockCode {
        values: code.values.iter().map(|&v| binarize_value(v)).collect(),
        mode: CodeMode::Binary,
    }
}

/// Additive noise simulating binarization: for each entry, `u ~ U(-d, d)`
/// with `d = |nint(x) - x|`. Entries in [0, 1] stay in [0, 1].
pub fn binarization_noise_offsets<R: Rng + ?Sized>(values: &[f32], rng: &mut R) -> Vec<f32> {
    values
        .iter()
        .map(|&x| {
            let d = (x.round() - x).abs();
            let r: f32 = rng.random();
            d * (2.0 * r - 1.0)
        })
        .collect()
}

pub fn binarization_noise<R: Rng + ?Sized>(code: &BlockCode, rng: &mut R) -> BlockCode {
    let offsets = binarization_noise_offsets(&code.values, rng);
    BlockCode {
        values: code.values.iter().zip(&offsets).map(|(x, u)| x + u).collect(),
        mode: CodeMode::Continuous,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn binarize_tie_rule() {
        assert_eq!(binarize_value(0.49), 0.0);
        assert_eq!(binarize_value(0.51), 1.0);
        assert_eq!(binarize_value(0.5), 1.0);
        let c = binarize(&BlockCode::continuous(vec![0.1, 0.5, 0.9]).unwrap());
        assert_eq!(c.bits().unwrap(), vec![false, true, true]);
    }

    #[test]
    fn noise_vanishes_at_integers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = BlockCode::continuous(vec![0.0, 1.0, 1.0]).unwrap();
        for _ in 0..100 {
            assert_eq!(binarization_noise(&c, &mut rng).values(), &[0.0, 1.0, 1.0]);
        }
    }

    #[test]
    fn noise_interval_at_point_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = BlockCode::continuous(vec![0.2]).unwrap();
        for _ in 0..10_000 {
            let v = binarization_noise(&c, &mut rng).values()[0];
            assert!((0.0..=0.4).contains(&v), "{v}");
        }
    }

    /// The noise interval around x = 0.4 is [0, 0.8], so a noised value
    /// rounds differently from x with probability (0.8 - 0.5) / 0.8.
    #[test]
    fn noise_crosses_rounding_boundary_at_expected_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let flips = (0..n)
            .filter(|_| {
                let u = binarization_noise_offsets(&[0.4], &mut rng)[0];
                binarize_value(0.4 + u) != binarize_value(0.4)
            })
            .count();
        let rate = flips as f64 / n as f64;
        assert!((rate - 0.375).abs() < 0.005, "{rate}");
    }

    #[test]
    fn continuous_code_range_is_checked() {
        assert!(BlockCode::continuous(vec![1.5]).is_err());
        assert!(BlockCode::continuous(vec![-0.1]).is_err());
    }

    proptest! {
        #[test]
        fn noise_containment(x in 0.0f32..=1.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = (x.round() - x).abs();
            let out = x + binarization_noise_offsets(&[x], &mut rng)[0];
            prop_assert!((0.0..=1.0).contains(&out));
            prop_assert!((out - x).abs() <= d);
        }
    }
}
