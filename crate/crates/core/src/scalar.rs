//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating point type usable by the analysis code: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the implemented types.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Upcasts a stored 32-bit attention weight.
    fn of_f32(x: f32) -> Self {
        Self::from_f32(x).expect("f32 value representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }

    /// `x * ln(x)` with the convention `0 * ln 0 = 0`.
    fn xlnx(self) -> Self {
        if self > Self::zero() {
            self * self.ln()
        } else {
            Self::zero()
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable in-place softmax. Returns the log-normalizer.
pub fn softmax_in_place<T: Scalar>(logits: &mut [T]) -> T {
    if logits.is_empty() {
        return T::neg_infinity();
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in logits.iter_mut() {
        *v /= z;
    }
    max + z.ln()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let mut v = vec![0.7f64, 0.3];
        softmax_in_place(&mut v);
        assert!((v[0] - 0.598_687_660_112_452_3).abs() < 1e-12);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.1f32, 0.45, 0.45]), Some(1));
        assert_eq!(argmax::<f64>(&[]), None);
    }

    #[test]
    fn xlnx_zero() {
        assert_eq!(0.0f64.xlnx(), 0.0);
        assert!((1.0f32.xlnx()).abs() < 1e-7);
    }
}
