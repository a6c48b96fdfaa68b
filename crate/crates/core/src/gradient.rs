//! Differentiable log-density interface and a finite-difference verifier.

use crate::error::{Error, Result};

/// A scalar function of a real vector with an exact gradient.
///
/// `evaluate` and `evaluate_with_gradient` must agree on the value.
pub trait DifferentiableScalarField: Sync {
    fn dimension(&self) -> usize;

    fn evaluate_with_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.evaluate_with_gradient(x).map(|(v, _)| v)
    }
}

impl<T: DifferentiableScalarField + ?Sized> DifferentiableScalarField for &T {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn evaluate_with_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).evaluate_with_gradient(x)
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        (**self).evaluate(x)
    }
}

/// Adapts a closure returning `(value, gradient)`.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> DifferentiableScalarField for FnField<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    fn dimension(&self) -> usize {
        self.dim
    }

    fn evaluate_with_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.f)(x))
    }
}

/// Value and gradient with input and output validation.
pub fn eval_with_gradient<F: DifferentiableScalarField + ?Sized>(
    field: &F,
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if x.len() != field.dimension() {
        return Err(Error::DimensionMismatch {
            expected: field.dimension(),
            actual: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(format!("input coordinate {i} is {}", x[i])));
    }
    let (value, grad) = field.evaluate_with_gradient(x)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteValue(format!("density value {value}")));
    }
    if grad.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: grad.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteValue(format!("gradient coordinate {i} is {}", grad[i])));
    }
    Ok((value, grad))
}

/// Largest discrepancy between the analytic gradient and central differences
/// with step `step * max(1, |x_i|)`, measured as `|g - fd| / max(|g|, 1)`:
/// relative for components of magnitude at least one, absolute below, where
/// a relative error is dominated by roundoff in the differences.
pub fn finite_diff_check<F: DifferentiableScalarField + ?Sized>(
    field: &F,
    x: &[f64],
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {step}")));
    }
    let (_, grad) = eval_with_gradient(field, x)?;
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = field.evaluate(&probe)?;
        probe[i] = x[i] - h;
        let down = field.evaluate(&probe)?;
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteValue(format!("finite difference at coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * h);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
