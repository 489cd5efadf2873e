//! Tridiagonal systems solved by Thomas elimination.

use std::ops::{Add, Div, Mul, Sub};

use crate::error::{Error, Result};

/// Scalar types the elimination works over (real and complex).
pub trait Field:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn magnitude(self) -> f64;
}

impl Field for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl Field for num_complex::Complex64 {
    fn zero() -> Self {
        num_complex::Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        num_complex::Complex64::new(1.0, 0.0)
    }
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

/// Matrix with `lower[i] = A[i][i-1]` (`lower[0]` unused), `diag[i] = A[i][i]`
/// and `upper[i] = A[i][i+1]` (last entry unused).
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal<T> {
    pub lower: Vec<T>,
    pub diag: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Field> Tridiagonal<T> {
    pub fn new(lower: Vec<T>, diag: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != diag.len() || upper.len() != diag.len() || diag.is_empty() {
            return Err(Error::Config("tridiagonal bands must have equal, non-zero length".into()));
        }
        Ok(Self { lower, diag, upper })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s = s + self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    s = s + self.upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn factor(&self) -> Result<ThomasFactor<T>> {
        ThomasFactor::new(self)
    }

    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        let f = self.factor()?;
        let mut x = rhs.to_vec();
        f.solve_in_place(&mut x);
        Ok(x)
    }
}

/// Forward-elimination multipliers of a tridiagonal matrix, reusable for
/// many right-hand sides.
#[derive(Debug, Clone)]
pub struct ThomasFactor<T> {
    lower: Vec<T>,
    /// Modified super-diagonal `c'_i`.
    upper: Vec<T>,
    /// Reciprocal of the modified pivots.
    inv_pivot: Vec<T>,
}

impl<T: Field> ThomasFactor<T> {
    pub fn new(a: &Tridiagonal<T>) -> Result<Self> {
        let n = a.len();
        let scale = a
            .diag
            .iter()
            .chain(&a.lower)
            .chain(&a.upper)
            .map(|x| x.magnitude())
            .fold(0.0, f64::max);
        let mut upper = vec![T::zero(); n];
        let mut inv_pivot = vec![T::zero(); n];
        let mut prev_upper = T::zero();
        for i in 0..n {
            let pivot = if i == 0 {
                a.diag[0]
            } else {
                a.diag[i] - a.lower[i] * prev_upper
            };
            if !(pivot.magnitude() > f64::EPSILON * scale) {
                return Err(Error::Singular(format!("zero pivot in tridiagonal solve at row {i}")));
            }
            inv_pivot[i] = T::one() / pivot;
            upper[i] = if i + 1 < n { a.upper[i] * inv_pivot[i] } else { T::zero() };
            prev_upper = upper[i];
        }
        Ok(Self {
            lower: a.lower.clone(),
            upper,
            inv_pivot,
        })
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = x.len();
        x[0] = x[0] * self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.lower[i] * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] = x[i] - self.upper[i] * x[i + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn dense(a: &Tridiagonal<f64>) -> DMatrix<f64> {
        let n = a.len();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                a.diag[i]
            } else if j + 1 == i {
                a.lower[i]
            } else if i + 1 == j {
                a.upper[i]
            } else {
                0.0
            }
        })
    }

    #[test]
    fn second_difference_inverse_is_known() {
        // tridiag(-1, 2, -1) has inverse min(i,j)(n+1-max(i,j))/(n+1), 1-based
        let n = 9;
        let a = Tridiagonal::new(vec![-1.0; n], vec![2.0; n], vec![-1.0; n]).unwrap();
        let f = a.factor().unwrap();
        for col in 0..n {
            let mut e = vec![0.0; n];
            e[col] = 1.0;
            f.solve_in_place(&mut e);
            for (row, v) in e.iter().enumerate() {
                let (i, j) = ((row + 1) as f64, (col + 1) as f64);
                let want = i.min(j) * (n as f64 + 1.0 - i.max(j)) / (n as f64 + 1.0);
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn complex_system_round_trips() {
        let n = 6;
        let lower: Vec<_> = (0..n).map(|i| Complex64::new(-0.3, 0.1 * i as f64)).collect();
        let diag: Vec<_> = (0..n).map(|i| Complex64::new(2.0 + i as f64, -0.5)).collect();
        let upper: Vec<_> = (0..n).map(|_| Complex64::new(0.2, -0.4)).collect();
        let a = Tridiagonal::new(lower, diag, upper).unwrap();
        let x: Vec<_> = (0..n).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
        let y = a.solve(&a.mul_vec(&x)).unwrap();
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = Tridiagonal::new(vec![1.0; 2], vec![1.0; 2], vec![1.0; 2]).unwrap();
        assert!(matches!(a.solve(&[1.0, 1.0]), Err(Error::Singular(_))));
    }

    #[test]
    fn mismatched_bands_rejected() {
        assert!(Tridiagonal::new(vec![0.0; 2], vec![1.0; 3], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn matches_dense_lu(
            n in 1usize..24,
            seed in prop::collection::vec(-1.0f64..1.0, 96),
        ) {
            let lower: Vec<f64> = (0..n).map(|i| seed[i]).collect();
            let upper: Vec<f64> = (0..n).map(|i| seed[24 + i]).collect();
            // diagonally dominant so both routes are well conditioned
            let diag: Vec<f64> = (0..n).map(|i| 2.5 + seed[48 + i]).collect();
            let rhs: Vec<f64> = (0..n).map(|i| seed[72 + i]).collect();
            let a = Tridiagonal::new(lower, diag, upper).unwrap();
            let x = a.solve(&rhs).unwrap();
            let want = dense(&a).lu().solve(&DVector::from_vec(rhs)).unwrap();
            for (u, v) in x.iter().zip(want.iter()) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }
    }
}
