//! Deterministic synthetic RGB images used as training and test fixtures:
//! smooth gradients, flat rectangles, discs, stripes and noise patches, so a
//! fixture mixes easy and hard blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imageio::RgbImage;

fn clamp_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn synthetic_image(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = vec![[0f32; 3]; width * height];

    // Background: linear gradient between two random colors.
    let c0: [f32; 3] = std::array::from_fn(|_| rng.random_range(20.0..235.0));
    let c1: [f32; 3] = std::array::from_fn(|_| rng.random_range(20.0..235.0));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let span = (width as f32).hypot(height as f32).max(1.0);
    for y in 0..height {
        for x in 0..width {
            let t = ((x as f32 * dx + y as f32 * dy) / span + 0.5).clamp(0.0, 1.0);
            px[y * width + x] = std::array::from_fn(|c| c0[c] * (1.0 - t) + c1[c] * t);
        }
    }

    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let color: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
        let cx = rng.random_range(0..width) as f32;
        let cy = rng.random_range(0..height) as f32;
        let size = rng.random_range(6.0..(width.min(height) as f32 / 2.0).max(7.0));
        match rng.random_range(0..4) {
            0 => {
                for y in 0..height {
                    for x in 0..width {
                        if (x as f32 - cx).abs() < size && (y as f32 - cy).abs() < size * 0.6 {
                            px[y * width + x] = color;
                        }
                    }
                }
            }
            1 => {
                for y in 0..height {
                    for x in 0..width {
                        if (x as f32 - cx).hypot(y as f32 - cy) < size {
                            px[y * width + x] = color;
                        }
                    }
                }
            }
            2 => {
                let period = rng.random_range(4.0..12.0f32);
                for y in 0..height {
                    for x in 0..width {
                        if (x as f32 - cx).abs() < size && (y as f32 - cy).abs() < size {
                            let s = ((x as f32 + y as f32) / period * std::f32::consts::TAU).sin();
                            let p = &mut px[y * width + x];
                            for c in 0..3 {
                                p[c] = p[c] * 0.5 + color[c] * 0.5 * (1.0 + s) * 0.5 + 30.0 * s;
                            }
                        }
                    }
                }
            }
            _ => {
                let amp = rng.random_range(20.0..80.0f32);
                for y in 0..height {
                    for x in 0..width {
                        if (x as f32 - cx).abs() < size && (y as f32 - cy).abs() < size {
                            let p = &mut px[y * width + x];
                            for v in p.iter_mut() {
                                *v += rng.random_range(-amp..amp);
                            }
                        }
                    }
                }
            }
        }
    }

    let data = px.iter().flat_map(|p| p.map(clamp_u8)).collect();
    RgbImage::new(width, height, data).expect("sized buffer")
}

/// `count` images of the given size with seeds `seed, seed + 1, ...`.
pub fn synthetic_set(count: usize, width: usize, height: usize, seed: u64) -> Vec<RgbImage> {
    (0..count)
        .map(|i| synthetic_image(width, height, seed.wrapping_add(i as u64)))
        .collect()
}

/// Uniform-noise image: every block is hard to compress.
pub fn noise_image(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * 3).map(|_| rng.random()).collect();
    RgbImage::new(width, height, data).expect("sized buffer")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let a = synthetic_image(70, 45, 9);
        assert_eq!((a.width, a.height), (70, 45));
        assert_eq!(a, synthetic_image(70, 45, 9));
        assert_ne!(a, synthetic_image(70, 45, 10));
    }
}
