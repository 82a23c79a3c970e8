use crate::linalg::{Point, SMat};
use crate::scalar::{factorial, Real};

/// Equilateral `d`-simplex of unit volume.
#[derive(Clone, Debug)]
pub struct ReferenceElement<T, const D: usize> {
    vertices: Vec<Point<T, D>>,
}

impl<T: Real, const D: usize> ReferenceElement<T, D> {
    pub fn new() -> Self {
        let mut vertices = vec![[T::zero(); D]; D + 1];
        match D {
            1 => vertices[1][0] = T::one(),
            2 => {
                // side s with s^2 sqrt(3) / 4 = 1
                let s = T::lit(2.0) / T::lit(3.0).powf(T::lit(0.25));
                vertices[1][0] = s;
                vertices[2][0] = s * T::lit(0.5);
                vertices[2][1] = s * T::lit(3.0).sqrt() * T::lit(0.5);
            }
            _ => panic!("only spatial dimensions 1 and 2 are supported"),
        }
        ReferenceElement { vertices }
    }

    pub fn vertices(&self) -> &[Point<T, D>] {
        &self.vertices
    }

    pub fn edge_matrix(&self) -> SMat<T, D> {
        SMat::from_fn(|r, c| self.vertices[c + 1][r] - self.vertices[0][r])
    }

    pub fn volume(&self) -> T {
        self.edge_matrix().det().abs() / factorial::<T>(D)
    }
}

impl<T: Real, const D: usize> Default for ReferenceElement<T, D> {
    fn default() -> Self {
        Self::new()
    }
}
