use crate::error::{Error, Result};
use crate::models::BlockCode;
use crate::nn::{Scalar, Tensor};

pub const DEFAULT_LAMBDA: f64 = 0.001;

/// Sum of squared adjacent differences of `[0, x..., 0]`, divided by the
/// number of differences (`len + 1`).
pub fn padded_adjacent_penalty<T: Scalar>(code: &[T]) -> T {
    let mut prev = T::zero();
    let mut acc = T::zero();
    for &v in code.iter().chain(std::iter::once(&T::zero())) {
        acc += (v - prev) * (v - prev);
        prev = v;
    }
    acc / T::from_f64((code.len() + 1) as f64)
}

/// Entropy-friendly penalty of one block-code.
pub fn entropy_friendly_loss(code: &BlockCode) -> Result<f64> {
    if code.is_empty() {
        return Err(Error::InvalidArgument("entropy-friendly loss of an empty code".into()));
    }
    let wide: Vec<f64> = code.values().iter().map(|&v| v as f64).collect();
    Ok(padded_adjacent_penalty(&wide))
}

pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::shape("mse_loss", "empty tensors"));
    }
    let ss: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a.to_f64() - b.to_f64()).powi(2))
        .sum();
    Ok(ss / pred.len() as f64)
}

/// Reconstruction MSE plus `lambda` times the entropy-friendly penalty.
pub fn total_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, code: &BlockCode, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    Ok(mse_loss(pred, target)? + lambda * entropy_friendly_loss(code)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(v: &[f32]) -> BlockCode {
        BlockCode::continuous(v.to_vec()).unwrap()
    }

    #[test]
    fn entropy_loss_hand_cases() {
        assert_eq!(entropy_friendly_loss(&code(&[0.0; 7])).unwrap(), 0.0);
        assert_eq!(entropy_friendly_loss(&code(&[1.0])).unwrap(), 1.0);
        let v = entropy_friendly_loss(&code(&[0.5, 0.5])).unwrap();
        assert!((v - 0.5 / 3.0).abs() < 1e-12);
        assert!(entropy_friendly_loss(&code(&[])).is_err());
    }

    #[test]
    fn mse_cases() {
        let a = Tensor::<f64>::full(vec![2, 3], 0.25);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let b = Tensor::<f64>::full(vec![2, 3], 0.75);
        assert_eq!(mse_loss(&a, &b).unwrap(), 0.25);
        let c = Tensor::<f64>::full(vec![3, 2], 0.75);
        assert!(mse_loss(&a, &c).is_err());
    }

    #[test]
    fn total_loss_is_weighted_sum() {
        let a = Tensor::<f64>::full(vec![4], 0.25);
        let b = Tensor::<f64>::full(vec![4], 0.75);
        let c = code(&[0.5, 0.5]);
        assert_eq!(total_loss(&a, &b, &c, 0.0).unwrap(), 0.25);
        let expected = 0.25 + 0.001 * (0.5 / 3.0);
        assert!((total_loss(&a, &b, &c, 0.001).unwrap() - expected).abs() < 1e-12);
        assert_eq!(total_loss(&a, &a, &code(&[0.0; 4]), 0.001).unwrap(), 0.0);
        assert!(total_loss(&a, &b, &c, -1.0).is_err());
    }
}
