use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor4;

/// Probability clamp applied before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

fn check<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty prediction".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clamped to `[ε, 1-ε]`.
pub fn bce_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<T> {
    check(pred, target)?;
    let (lo, hi) = (BCE_EPS, 1.0 - BCE_EPS);
    let sum: f64 = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&p, &t)| {
            let p = p.as_f64().clamp(lo, hi);
            let t = t.as_f64();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    let loss = sum / pred.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("bce"));
    }
    Ok(T::from_f64(loss))
}

/// Derivative of [`bce_loss`] with respect to the predictions. Zero where the
/// clamp is active.
pub fn bce_grad<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<Tensor4<T>> {
    check(pred, target)?;
    let n = T::from_f64(pred.len() as f64);
    let (lo, hi) = (T::from_f64(BCE_EPS), T::from_f64(1.0 - BCE_EPS));
    let values = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&p, &t)| {
            if p < lo || p > hi {
                T::zero()
            } else {
                (p - t) / (p * (T::one() - p)) / n
            }
        })
        .collect();
    Tensor4::from_vec(pred.dims(), values)
}
