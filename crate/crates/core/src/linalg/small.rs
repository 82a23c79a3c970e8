//! Fixed-size `D x D` matrices for `D` in {1, 2}.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use crate::scalar::Real;

/// A point (or vector) in `D` dimensions.
pub type Point<T, const D: usize> = [T; D];

/// Row-major dense `D x D` matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SMat<T, const D: usize>(pub [[T; D]; D]);

impl<T: Real, const D: usize> SMat<T, D> {
    pub fn zeros() -> Self {
        SMat([[T::zero(); D]; D])
    }

    pub fn identity() -> Self {
        Self::scaled_identity(T::one())
    }

    pub fn scaled_identity(s: T) -> Self {
        let mut m = Self::zeros();
        for i in 0..D {
            m.0[i][i] = s;
        }
        m
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros();
        for i in 0..D {
            for j in 0..D {
                m.0[i][j] = f(i, j);
            }
        }
        m
    }

    pub fn diag(values: [T; D]) -> Self {
        let mut m = Self::zeros();
        for i in 0..D {
            m.0[i][i] = values[i];
        }
        m
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(|i, j| self.0[j][i])
    }

    pub fn scale(&self, s: T) -> Self {
        Self::from_fn(|i, j| self.0[i][j] * s)
    }

    pub fn trace(&self) -> T {
        (0..D).map(|i| self.0[i][i]).sum()
    }

    pub fn det(&self) -> T {
        let a = &self.0;
        match D {
            1 => a[0][0],
            2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
            _ => unsupported(),
        }
    }

    /// Inverse, or `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det == T::zero() || !det.is_finite() {
            return None;
        }
        let a = &self.0;
        let mut inv = Self::zeros();
        match D {
            1 => inv.0[0][0] = T::one() / a[0][0],
            2 => {
                inv.0[0][0] = a[1][1] / det;
                inv.0[0][1] = -a[0][1] / det;
                inv.0[1][0] = -a[1][0] / det;
                inv.0[1][1] = a[0][0] / det;
            }
            _ => unsupported(),
        }
        Some(inv)
    }

    pub fn mul_vec(&self, v: &Point<T, D>) -> Point<T, D> {
        let mut out = [T::zero(); D];
        for i in 0..D {
            for j in 0..D {
                out[i] += self.0[i][j] * v[j];
            }
        }
        out
    }

    pub fn symmetrize(&self) -> Self {
        let half = T::lit(0.5);
        Self::from_fn(|i, j| (self.0[i][j] + self.0[j][i]) * half)
    }

    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for row in &self.0 {
            for &x in row {
                m = m.max(x.abs());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|r| r.iter().all(|x| x.is_finite()))
    }

    /// Eigen-decomposition of the symmetric part: eigenvalues in ascending
    /// order and the matrix whose columns are the matching unit eigenvectors.
    pub fn sym_eigen(&self) -> ([T; D], Self) {
        let a = &self.0;
        match D {
            1 => {
                let mut vals = [T::zero(); D];
                vals[0] = a[0][0];
                (vals, Self::identity())
            }
            2 => {
                let (p, q, r) = (a[0][0], (a[0][1] + a[1][0]) * T::lit(0.5), a[1][1]);
                let mean = (p + r) * T::lit(0.5);
                let half_diff = (p - r) * T::lit(0.5);
                let rad = half_diff.hypot(q);
                // Angle of the eigenvector of the larger eigenvalue.
                let theta = T::lit(0.5) * (T::lit(2.0) * q).atan2(p - r);
                let (s, c) = theta.sin_cos();
                let mut vals = [T::zero(); D];
                vals[0] = mean - rad;
                vals[1] = mean + rad;
                let mut vecs = Self::zeros();
                // column 0: smaller eigenvalue, orthogonal to (c, s)
                vecs.0[0][0] = -s;
                vecs.0[1][0] = c;
                vecs.0[0][1] = c;
                vecs.0[1][1] = s;
                (vals, vecs)
            }
            _ => unsupported(),
        }
    }

    /// `Q f(Λ) Qᵀ` for the symmetric eigen-decomposition `Q Λ Qᵀ`.
    pub fn sym_apply(&self, f: impl Fn(T) -> T) -> Self {
        let (vals, q) = self.sym_eigen();
        let mut mapped = [T::zero(); D];
        for i in 0..D {
            mapped[i] = f(vals[i]);
        }
        q * Self::diag(mapped) * q.transpose()
    }

    /// Lower-triangular Cholesky factor, or `None` if not positive definite.
    pub fn cholesky(&self) -> Option<Self> {
        let a = &self.0;
        let mut l = Self::zeros();
        match D {
            1 => {
                if !(a[0][0] > T::zero()) {
                    return None;
                }
                l.0[0][0] = a[0][0].sqrt();
            }
            2 => {
                if !(a[0][0] > T::zero()) {
                    return None;
                }
                let l00 = a[0][0].sqrt();
                let l10 = a[1][0] / l00;
                let rem = a[1][1] - l10 * l10;
                if !(rem > T::zero()) {
                    return None;
                }
                l.0[0][0] = l00;
                l.0[1][0] = l10;
                l.0[1][1] = rem.sqrt();
            }
            _ => unsupported(),
        }
        Some(l)
    }

    /// Smallest eigenvalue of the symmetric part.
    pub fn min_eigenvalue(&self) -> T {
        self.sym_eigen().0[0]
    }
}

#[cold]
fn unsupported() -> ! {
    panic!("only spatial dimensions 1 and 2 are supported")
}

impl<T: Real, const D: usize> Mul for SMat<T, D> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..D {
            for k in 0..D {
                let aik = self.0[i][k];
                for j in 0..D {
                    out.0[i][j] += aik * rhs.0[k][j];
                }
            }
        }
        out
    }
}

impl<T: Real, const D: usize> Mul<T> for SMat<T, D> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        self.scale(rhs)
    }
}

impl<T: Real, const D: usize> Add for SMat<T, D> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] + rhs.0[i][j])
    }
}

impl<T: Real, const D: usize> AddAssign for SMat<T, D> {
    fn add_assign(&mut self, rhs: Self) {
        for i in 0..D {
            for j in 0..D {
                self.0[i][j] += rhs.0[i][j];
            }
        }
    }
}

impl<T: Real, const D: usize> Sub for SMat<T, D> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] - rhs.0[i][j])
    }
}

impl<T, const D: usize> Index<(usize, usize)> for SMat<T, D> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.0[i][j]
    }
}

impl<T, const D: usize> IndexMut<(usize, usize)> for SMat<T, D> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.0[i][j]
    }
}

pub fn sub<T: Real, const D: usize>(a: &Point<T, D>, b: &Point<T, D>) -> Point<T, D> {
    let mut out = *a;
    for i in 0..D {
        out[i] -= b[i];
    }
    out
}

pub fn add<T: Real, const D: usize>(a: &Point<T, D>, b: &Point<T, D>) -> Point<T, D> {
    let mut out = *a;
    for i in 0..D {
        out[i] += b[i];
    }
    out
}

pub fn scale<T: Real, const D: usize>(a: &Point<T, D>, s: T) -> Point<T, D> {
    let mut out = *a;
    for x in out.iter_mut() {
        *x *= s;
    }
    out
}

pub fn dot<T: Real, const D: usize>(a: &Point<T, D>, b: &Point<T, D>) -> T {
    (0..D).map(|i| a[i] * b[i]).sum()
}

pub fn norm<T: Real, const D: usize>(a: &Point<T, D>) -> T {
    dot(a, a).sqrt()
}

pub fn distance<T: Real, const D: usize>(a: &Point<T, D>, b: &Point<T, D>) -> T {
    norm(&sub(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_2x2_reconstructs() {
        let a = SMat::<f64, 2>([[3.0, 1.2], [1.2, -0.5]]);
        let (vals, q) = a.sym_eigen();
        assert!(vals[0] <= vals[1]);
        let back = q * SMat::diag(vals) * q.transpose();
        assert!((back - a).max_abs() < 1e-14);
        let qtq = q.transpose() * q;
        assert!((qtq - SMat::identity()).max_abs() < 1e-14);
    }

    #[test]
    fn eigen_diagonal_input() {
        let a = SMat::<f64, 2>::diag([1.0, 4.0]);
        let (vals, _) = a.sym_eigen();
        assert_eq!(vals, [1.0, 4.0]);
        let b = SMat::<f64, 2>::diag([4.0, 1.0]);
        let (vals, q) = b.sym_eigen();
        assert_eq!(vals, [1.0, 4.0]);
        assert!((q * SMat::diag(vals) * q.transpose() - b).max_abs() < 1e-15);
    }

    #[test]
    fn inverse_and_cholesky() {
        let a = SMat::<f64, 2>([[4.0, 2.0], [2.0, 3.0]]);
        let inv = a.inverse().unwrap();
        assert!((a * inv - SMat::identity()).max_abs() < 1e-15);
        let l = a.cholesky().unwrap();
        assert!((l * l.transpose() - a).max_abs() < 1e-15);
        assert!(SMat::<f64, 2>([[1.0, 2.0], [2.0, 1.0]]).cholesky().is_none());
        assert!(SMat::<f64, 1>([[0.0]]).inverse().is_none());
    }
}
