//! State transfer between meshes that share connectivity.
//!
//! [`dg_interpolate`] solves `du/dzeta = 0` on the mesh moving linearly from
//! the source to the target over `zeta in [0, 1]`, reusing the moving-mesh
//! DG machinery with a zero physical flux. It conserves mass to rounding.
//! [`linear_interpolate`] is the non-conservative baseline.

use crate::error::{Error, Result};
use crate::linalg::{small, Point};
use crate::mesh::SimplicialMesh;
use crate::scalar::Real;
use crate::solver::rhs::{element_volumes, ssp_rk3};
use crate::solver::{relative_drift, DgState, Flux, Limiter};

/// Number of pseudo-time steps for a deformation:
/// `max(5, ceil(10 * max displacement / min diameter))`.
pub fn zeta_substeps<T: Real, const D: usize>(source: &SimplicialMesh<T, D>, target: &SimplicialMesh<T, D>) -> usize {
    let disp = source
        .vertices()
        .iter()
        .zip(target.vertices())
        .map(|(a, b)| small::distance(a, b))
        .fold(T::zero(), T::max);
    let dmin = (0..source.n_elements()).map(|k| source.diameter(k)).fold(T::infinity(), T::min);
    let n = (T::lit(10.0) * disp / dmin).ceil().to_f64_lossy();
    if n.is_finite() {
        (n as usize).max(5)
    } else {
        5
    }
}

fn lerp<T: Real, const D: usize>(a: &[Point<T, D>], b: &[Point<T, D>], theta: T) -> Vec<Point<T, D>> {
    a.iter()
        .zip(b)
        .map(|(p, q)| {
            let mut r = *p;
            for i in 0..D {
                r[i] = p[i] + theta * (q[i] - p[i]);
            }
            r
        })
        .collect()
}

/// Mass tolerance for conservative transfers; loosened for `f32`.
pub(crate) fn mass_tolerance<T: Real>() -> T {
    T::lit(1e-10).max(T::epsilon() * T::lit(1e3))
}

/// Conservative DG transfer of `state` from `source` to `target` with the
/// default number of pseudo-time steps.
pub fn dg_interpolate<T: Real, const D: usize>(
    state: &DgState<T>,
    source: &SimplicialMesh<T, D>,
    target: &SimplicialMesh<T, D>,
) -> Result<DgState<T>> {
    dg_interpolate_with(state, source, target, zeta_substeps(source, target))
}

/// [`dg_interpolate`] with an explicit number of pseudo-time steps.
pub fn dg_interpolate_with<T: Real, const D: usize>(
    state: &DgState<T>,
    source: &SimplicialMesh<T, D>,
    target: &SimplicialMesh<T, D>,
    steps: usize,
) -> Result<DgState<T>> {
    if !source.same_connectivity(target) {
        return Err(Error::InvalidParameter("interpolation meshes differ in connectivity".into()));
    }
    if state.coeffs.len() != source.n_elements() * (D + 1) {
        return Err(Error::LengthMismatch { expected: source.n_elements() * (D + 1), got: state.coeffs.len() });
    }
    let steps = steps.max(1);
    let topo = source.topology();
    let h = T::one() / T::from_count(steps);
    let off = Limiter::disabled();
    let mut u = state.coeffs.clone();
    let mut x0 = source.vertices().to_vec();
    for s in 1..=steps {
        let x1 = if s == steps { target.vertices().to_vec() } else { lerp(source.vertices(), target.vertices(), h * T::from_count(s)) };
        // the stage at the half step must be valid too
        for xs in [&lerp(&x0, &x1, T::lit(0.5)), &x1] {
            if let Some((k, v)) = element_volumes(topo, xs).into_iter().enumerate().find(|(_, v)| !(*v > T::zero())) {
                return Err(Error::MeshTangled { element: k, volume: v.to_f64_lossy() });
            }
        }
        u = ssp_rk3(topo, &x0, &x1, &u, h, Flux::Zero, &off)?;
        x0 = x1;
    }
    let out = DgState { coeffs: u, time: state.time };
    let drift = relative_drift(state.mass(source), out.mass(target), state.abs_mass(source));
    if drift > mass_tolerance() {
        return Err(Error::MassDrift { drift: drift.to_f64_lossy() });
    }
    Ok(out)
}

/// Values at the `target` vertices of the continuous P1 field with
/// `values` at the `source` vertices. Target vertices outside the source
/// domain are clamped onto it.
pub fn linear_interpolate<T: Real, const D: usize>(
    values: &[T],
    source: &SimplicialMesh<T, D>,
    target: &SimplicialMesh<T, D>,
) -> Result<Vec<T>> {
    if values.len() != source.n_vertices() {
        return Err(Error::LengthMismatch { expected: source.n_vertices(), got: values.len() });
    }
    let dom = source.domain();
    let mut hint = 0;
    target
        .vertices()
        .iter()
        .map(|p| {
            let q = dom.clamp(p);
            let (k, b) = source.locate_from(hint, &q)?;
            hint = k;
            Ok(source.element(k).iter().zip(&b).map(|(&v, &w)| w * values[v]).sum())
        })
        .collect()
}

/// Baseline state transfer: vertex averages, linear interpolation, and a
/// continuous P1 state rebuilt on the target.
pub fn linear_transfer<T: Real, const D: usize>(
    state: &DgState<T>,
    source: &SimplicialMesh<T, D>,
    target: &SimplicialMesh<T, D>,
) -> Result<DgState<T>> {
    let v = linear_interpolate(&state.vertex_values(source), source, target)?;
    Ok(DgState::from_vertex_values(target, &v, state.time))
}
