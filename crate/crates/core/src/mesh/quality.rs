use super::{ReferenceElement, SimplicialMesh};
use crate::error::{Error, Result};
use crate::linalg::SMat;
use crate::scalar::Real;

fn check_spd<T: Real, const D: usize>(m: &SMat<T, D>) -> Result<()> {
    let e = m.min_eigenvalue();
    if !(e > T::zero()) || !m.is_finite() {
        return Err(Error::NotSpd { eigenvalue: e.to_f64_lossy() });
    }
    Ok(())
}

/// Per-element equidistribution ratio `|K| sqrt(det M_K) N / sigma_h`.
pub fn equidistribution_quality<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    metric: &[SMat<T, D>],
) -> Result<Vec<T>> {
    if metric.len() != mesh.n_elements() {
        return Err(Error::LengthMismatch { expected: mesh.n_elements(), got: metric.len() });
    }
    let mut rho = Vec::with_capacity(metric.len());
    for (k, m) in metric.iter().enumerate() {
        check_spd(m)?;
        rho.push(mesh.volume(k) * m.det().sqrt());
    }
    let sigma: T = rho.iter().copied().sum();
    let n = T::from_count(mesh.n_elements());
    Ok(rho.into_iter().map(|r| r * n / sigma).collect())
}

/// Per-element alignment ratio: arithmetic over geometric mean of the
/// eigenvalues of `(F_K')^{-1} M_K^{-1} (F_K')^{-T}`.
pub fn alignment_quality<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    metric: &[SMat<T, D>],
) -> Result<Vec<T>> {
    if metric.len() != mesh.n_elements() {
        return Err(Error::LengthMismatch { expected: mesh.n_elements(), got: metric.len() });
    }
    let reference = ReferenceElement::<T, D>::new().edge_matrix();
    let ref_inv = reference.inverse().expect("reference element is nonsingular");
    let d = T::from_count(D);
    let mut out = Vec::with_capacity(metric.len());
    for (k, m) in metric.iter().enumerate() {
        check_spd(m)?;
        let f = mesh.edge_matrix(k) * ref_inv;
        let finv = f.inverse().ok_or(Error::SingularElement { element: k, volume: 0.0 })?;
        let minv = m.inverse().ok_or(Error::NotSpd { eigenvalue: 0.0 })?;
        let a = finv * minv * finv.transpose();
        out.push(a.trace() / d / a.det().powf(T::one() / d));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoxDomain, SimplicialMesh};
    use std::sync::Arc;

    #[test]
    fn uniform_mesh_identity_metric() {
        let m: SimplicialMesh<f64, 1> = SimplicialMesh::uniform(BoxDomain::new([0.0], [1.0]).unwrap(), [6]).unwrap();
        let metric = vec![SMat::identity(); 5];
        for q in equidistribution_quality(&m, &metric).unwrap() {
            assert!((q - 1.0).abs() < 1e-12);
        }
        let scaled = vec![SMat::scaled_identity(7.5); 5];
        for q in equidistribution_quality(&m, &scaled).unwrap() {
            assert!((q - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn doubled_element() {
        // lengths 1, 2, 1 -> sigma = 4, N = 3
        let base: SimplicialMesh<f64, 1> = SimplicialMesh::uniform(BoxDomain::new([0.0], [4.0]).unwrap(), [4]).unwrap();
        let m = base.with_vertices(vec![[0.0], [1.0], [3.0], [4.0]]).unwrap();
        let q = equidistribution_quality(&m, &vec![SMat::identity(); 3]).unwrap();
        assert!((q[1] - 2.0 * 3.0 / 4.0).abs() < 1e-12);
        assert!((q[0] - 3.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn right_triangle_worse_than_equilateral() {
        let r = ReferenceElement::<f64, 2>::new();
        let topo = Arc::new(
            crate::mesh::Topology::new(
                r.vertices(),
                vec![0, 1, 2],
                vec![crate::mesh::Boundary::Corner; 3],
                &[0.0, 0.0],
                &[2.0, 2.0],
            )
            .unwrap(),
        );
        let domain = BoxDomain::new([0.0, 0.0], [2.0, 2.0]).unwrap();
        let eq = SimplicialMesh::from_parts(topo.clone(), r.vertices().to_vec(), domain).unwrap();
        let right = SimplicialMesh::from_parts(topo, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], domain).unwrap();
        let id = vec![SMat::identity()];
        let qe = alignment_quality(&eq, &id).unwrap()[0];
        let qr = alignment_quality(&right, &id).unwrap()[0];
        assert!((qe - 1.0).abs() < 1e-12);
        assert!(qr > qe + 1e-3);
    }

    #[test]
    fn non_spd_rejected() {
        let m: SimplicialMesh<f64, 1> = SimplicialMesh::uniform(BoxDomain::new([0.0], [1.0]).unwrap(), [3]).unwrap();
        let bad = vec![SMat::identity(), SMat::scaled_identity(-1.0)];
        assert!(matches!(equidistribution_quality(&m, &bad), Err(Error::NotSpd { .. })));
    }
}
