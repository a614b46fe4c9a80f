//! Central finite-difference oracle and the per-layer gradient suite.
//!
//! The suite runs every op in double precision: each case feeds random
//! inputs through one op, projects the output onto a fixed random tensor to
//! get a scalar, and compares the tape's gradients against central
//! differences of the same scalar.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::tape::{Tape, Var};
use crate::nn::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Central differences `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, params: &[f64], h: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let plus = f(&p);
            p[i] = orig - h;
            let minus = f(&p);
            p[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` over whole gradient vectors; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

type Builder = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One gradient-check case: input tensors and the graph applied to them.
pub struct GradCase {
    pub inputs: Vec<Tensor<f64>>,
    build: Builder,
}

impl GradCase {
    pub fn new(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Self {
        GradCase {
            inputs,
            build: Box::new(build),
        }
    }

    fn projection(&self) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = (self.build)(&mut tape, &vars)?;
        let n = tape.value(out).len();
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64 ^ 0x9e37_79b9);
        Ok((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn loss(&self, inputs: &[Tensor<f64>], proj: &[f64], requires_grad: bool) -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect();
        let out = (self.build)(&mut tape, &vars)?;
        let shape = tape.value(out).shape().to_vec();
        let r = tape.input(Tensor::new(shape, proj.to_vec())?);
        let prod = tape.mul(out, r)?;
        let loss = tape.sum(prod);
        Ok((tape, vars, loss))
    }

    /// Relative error between the tape's gradients and central differences,
    /// taken over all inputs jointly.
    pub fn check(&self, h: f64) -> Result<f64> {
        let proj = self.projection()?;
        let (tape, vars, loss) = self.loss(&self.inputs, &proj, true)?;
        let grads = tape.backward(loss)?;
        let mut analytic = Vec::new();
        for (v, t) in vars.iter().zip(&self.inputs) {
            match grads.get(*v) {
                Some(g) => analytic.extend_from_slice(g),
                None => analytic.extend(std::iter::repeat_n(0.0, t.len())),
            }
        }

        let flat: Vec<f64> = self.inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
        let shapes: Vec<Vec<usize>> = self.inputs.iter().map(|t| t.shape().to_vec()).collect();
        let eval = |p: &[f64]| -> f64 {
            let mut offset = 0;
            let inputs: Vec<Tensor<f64>> = shapes
                .iter()
                .map(|s| {
                    let n: usize = s.iter().product();
                    let t = Tensor::new(s.clone(), p[offset..offset + n].to_vec()).expect("shape");
                    offset += n;
                    t
                })
                .collect();
            let (tape, _, loss) = self.loss(&inputs, &proj, false).expect("forward succeeded once");
            tape.value(loss).data()[0]
        };
        let numeric = finite_diff_gradient(eval, &flat, h);
        Ok(relative_error(&analytic, &numeric))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub layer: &'static str,
    pub cases: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl LayerReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Values bounded away from zero so a finite-difference step never crosses a kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

type CaseFactory = fn(&mut ChaCha8Rng) -> GradCase;

fn conv_case(rng: &mut ChaCha8Rng) -> GradCase {
    let n = rng.random_range(1..=2);
    let cin = rng.random_range(1..=3);
    let cout = rng.random_range(1..=3);
    let h = rng.random_range(3..=6);
    let w = rng.random_range(3..=6);
    let (k, stride) = if rng.random_bool(0.25) {
        (1, 1)
    } else {
        (3, rng.random_range(1..=2))
    };
    let pad = k / 2;
    GradCase::new(
        vec![
            random_tensor(rng, vec![n, cin, h, w], -1.0, 1.0),
            random_tensor(rng, vec![cout, cin, k, k], -1.0, 1.0),
            random_tensor(rng, vec![cout], -0.5, 0.5),
        ],
        move |t, v| t.conv2d(v[0], v[1], v[2], stride, pad),
    )
}

fn deconv_case(rng: &mut ChaCha8Rng) -> GradCase {
    let n = rng.random_range(1..=2);
    let cin = rng.random_range(1..=3);
    let cout = rng.random_range(1..=3);
    let h = rng.random_range(1..=4);
    let w = rng.random_range(1..=4);
    GradCase::new(
        vec![
            random_tensor(rng, vec![n, cin, h, w], -1.0, 1.0),
            random_tensor(rng, vec![cin, cout, 3, 3], -1.0, 1.0),
            random_tensor(rng, vec![cout], -0.5, 0.5),
        ],
        |t, v| t.deconv2d(v[0], v[1], v[2], 2, 1, 1),
    )
}

fn prelu_case(rng: &mut ChaCha8Rng) -> GradCase {
    let n = rng.random_range(1..=3);
    let c = rng.random_range(1..=4);
    let hw = rng.random_range(1..=5);
    GradCase::new(
        vec![
            away_from_zero(rng, vec![n, c, hw, 1]),
            random_tensor(rng, vec![c], 0.0, 0.5),
        ],
        |t, v| t.prelu(v[0], v[1]),
    )
}

fn sigmoid_case(rng: &mut ChaCha8Rng) -> GradCase {
    let n = rng.random_range(1..=4);
    let len = rng.random_range(1..=12);
    GradCase::new(vec![random_tensor(rng, vec![n, len], -4.0, 4.0)], |t, v| {
        Ok(t.sigmoid(v[0]))
    })
}

fn l2_case(rng: &mut ChaCha8Rng) -> GradCase {
    let n = rng.random_range(1..=3);
    let c = rng.random_range(2..=16);
    GradCase::new(vec![random_tensor(rng, vec![n, c, 1, 1], -1.0, 1.0)], |t, v| {
        t.l2_normalize(v[0], 1e-12)
    })
}

fn mse_case(rng: &mut ChaCha8Rng) -> GradCase {
    let shape = vec![rng.random_range(1..=3), 3, rng.random_range(1..=4), 2];
    GradCase::new(
        vec![
            random_tensor(rng, shape.clone(), 0.0, 1.0),
            random_tensor(rng, shape, 0.0, 1.0),
        ],
        |t, v| t.mse(v[0], v[1]),
    )
}

fn entropy_case(rng: &mut ChaCha8Rng) -> GradCase {
    let n = rng.random_range(1..=3);
    let len = rng.random_range(1..=20);
    GradCase::new(vec![random_tensor(rng, vec![n, len, 1, 1], 0.0, 1.0)], |t, v| {
        t.entropy_friendly(v[0])
    })
}

fn concat_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (n, h, w) = (
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(1..=3),
    );
    let (ca, cb) = (rng.random_range(1..=3), rng.random_range(1..=3));
    GradCase::new(
        vec![
            random_tensor(rng, vec![n, ca, h, w], -1.0, 1.0),
            random_tensor(rng, vec![n, cb, h, w], -1.0, 1.0),
        ],
        |t, v| t.concat_channels(v[0], v[1]),
    )
}

fn elementwise_case(rng: &mut ChaCha8Rng) -> GradCase {
    let shape = vec![rng.random_range(1..=3), rng.random_range(1..=5)];
    let k = rng.random_range(-2.0..2.0);
    let off = random_tensor(rng, shape.clone(), -1.0, 1.0).into_data();
    GradCase::new(
        vec![
            random_tensor(rng, shape.clone(), -1.0, 1.0),
            random_tensor(rng, shape, -1.0, 1.0),
        ],
        move |t, v| {
            let p = t.mul(v[0], v[1])?;
            let s = t.scale(p, k);
            let a = t.add(s, v[0])?;
            t.offset(a, &off)
        },
    )
}

/// conv -> PReLU -> conv -> sigmoid, gradients through every parameter.
fn two_layer_net_case(rng: &mut ChaCha8Rng) -> GradCase {
    let n = rng.random_range(1..=2);
    let cin = rng.random_range(1..=2);
    let hidden = rng.random_range(1..=3);
    let h = rng.random_range(4..=6);
    GradCase::new(
        vec![
            random_tensor(rng, vec![n, cin, h, h], -1.0, 1.0),
            random_tensor(rng, vec![hidden, cin, 3, 3], -1.0, 1.0),
            random_tensor(rng, vec![hidden], -0.3, 0.3),
            random_tensor(rng, vec![hidden], 0.05, 0.4),
            random_tensor(rng, vec![2, hidden, 1, 1], -1.0, 1.0),
            random_tensor(rng, vec![2], -0.3, 0.3),
        ],
        |t, v| {
            let a = t.conv2d(v[0], v[1], v[2], 2, 1)?;
            let a = t.prelu(a, v[3])?;
            let b = t.conv2d(a, v[4], v[5], 1, 0)?;
            Ok(t.sigmoid(b))
        },
    )
}

pub const LAYERS: &[(&str, CaseFactory)] = &[
    ("conv2d", conv_case),
    ("deconv2d", deconv_case),
    ("prelu", prelu_case),
    ("sigmoid", sigmoid_case),
    ("l2_normalize", l2_case),
    ("mse", mse_case),
    ("entropy_friendly", entropy_case),
    ("concat_channels", concat_case),
    ("elementwise", elementwise_case),
    ("two_layer_net", two_layer_net_case),
];

/// Runs `cases` random checks per layer and reports the worst relative error of each.
pub fn run_suite(cases: usize, seed: u64, h: f64, tolerance: f64) -> Result<Vec<LayerReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LAYERS
        .iter()
        .map(|&(layer, factory)| {
            let mut worst: f64 = 0.0;
            for _ in 0..cases {
                worst = worst.max(factory(&mut rng).check(h)?);
            }
            Ok(LayerReport {
                layer,
                cases,
                max_relative_error: worst,
                tolerance,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_differences_of_simple_functions() {
        let g = finite_diff_gradient(|p| p[0] * p[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_gradient(|_| 4.2, &[1.0, -2.0], 1e-5);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn every_layer_passes_a_few_cases() {
        for report in run_suite(3, 11, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap() {
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn a_wrong_gradient_is_detected() {
        // Numeric gradient of x^3 compared against a deliberately wrong 2x.
        let numeric = finite_diff_gradient(|p| p[0].powi(3), &[2.0], 1e-5);
        assert!(relative_error(&[4.0], &numeric) > 0.5);
    }
}
