//! Arithmetic abstraction for state vectors.
//!
//! Model matrices stay in `f64`; states may be carried in double-double
//! precision so that estimation errors of an unstable plant remain resolvable
//! long after the plant state has grown by many orders of magnitude.

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use twofloat::TwoFloat;

pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Mul<f64, Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Double-double value; about 32 significant decimal digits.
pub type Extended = TwoFloat;

impl Scalar for TwoFloat {
    fn from_f64(v: f64) -> Self {
        TwoFloat::from(v)
    }
    fn to_f64(self) -> f64 {
        self.hi() + self.lo()
    }
    fn is_finite(self) -> bool {
        self.hi().is_finite() && self.lo().is_finite()
    }
}

/// `out += alpha * m * x`.
pub fn gemv_acc<S: Scalar>(out: &mut [S], alpha: f64, m: &DMatrix<f64>, x: &[S]) {
    debug_assert_eq!(out.len(), m.nrows());
    debug_assert_eq!(x.len(), m.ncols());
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = S::zero();
        for (c, &xc) in x.iter().enumerate() {
            let a = m[(r, c)];
            if a != 0.0 {
                acc = acc + xc * a;
            }
        }
        *o = *o + acc * alpha;
    }
}

/// `out += alpha * x`.
pub fn axpy<S: Scalar>(out: &mut [S], alpha: f64, x: &[S]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, &v) in out.iter_mut().zip(x) {
        *o = *o + v * alpha;
    }
}

pub fn lift<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::from_f64(x)).collect()
}

pub fn lower<S: Scalar>(v: &[S]) -> Vec<f64> {
    v.iter().map(|&x| x.to_f64()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extended_keeps_small_differences() {
        let big = Extended::from_f64(1e15);
        let near = big + Extended::from_f64(1e-3);
        assert!(((near - big).to_f64() - 1e-3).abs() < 1e-15);
        let plain: f64 = 1e15 + 1e-3 - 1e15;
        assert!((plain - 1e-3).abs() > 1e-5);
    }

    #[test]
    fn gemv_matches_nalgebra() {
        let m = DMatrix::from_row_slice(2, 3, &[1., 2., 3., -1., 0.5, 0.]);
        let x = [1.0, -2.0, 0.25];
        let mut out = [1.0, 1.0];
        gemv_acc(&mut out, 2.0, &m, &x);
        let expected = nalgebra::DVector::from_row_slice(&[1.0, 1.0])
            + (&m * nalgebra::DVector::from_row_slice(&x)) * 2.0;
        assert!((out[0] - expected[0]).abs() < 1e-15);
        assert!((out[1] - expected[1]).abs() < 1e-15);
    }
}
