//! Weak-form residual of the quasi-Lagrangian P1-DG discretization and the
//! SSP-RK3 update with stage volumes that satisfy the discrete GCL.

use crate::error::{Error, Result};
use crate::linalg::{small, Point, SMat};
use crate::mesh::{edge_matrix_of, face_normal_of, Topology};
use crate::scalar::{factorial, Real};

use super::limiter::{limit, Limiter};

/// Volume quadrature in barycentric coordinates (first `d + 1` entries used)
/// with weights relative to the element volume.
pub(crate) fn volume_rule<T: Real, const D: usize>() -> Vec<([T; 3], T)> {
    match D {
        1 => {
            let g = T::lit(0.5) / T::lit(3.0).sqrt();
            let h = T::lit(0.5);
            vec![([h + g, h - g, T::zero()], h), ([h - g, h + g, T::zero()], h)]
        }
        2 => {
            let h = T::lit(0.5);
            let w = T::one() / T::lit(3.0);
            vec![
                ([h, h, T::zero()], w),
                ([h, T::zero(), h], w),
                ([T::zero(), h, h], w),
            ]
        }
        _ => panic!("only spatial dimensions 1 and 2 are supported"),
    }
}

/// Face quadrature: weights on the `D` face vertices, relative weight.
fn face_rule<T: Real, const D: usize>() -> Vec<([T; 2], T)> {
    match D {
        1 => vec![([T::one(), T::zero()], T::one())],
        2 => {
            let g = T::lit(0.5) / T::lit(3.0).sqrt();
            let h = T::lit(0.5);
            vec![([h + g, h - g], h), ([h - g, h + g], h)]
        }
        _ => panic!("only spatial dimensions 1 and 2 are supported"),
    }
}

/// Gradients of the barycentric basis functions.
#[inline]
pub(crate) fn basis_gradients<T: Real, const D: usize>(e_inv: &SMat<T, D>) -> [Point<T, D>; 3] {
    let mut g = [[T::zero(); D]; 3];
    for i in 0..D {
        for a in 0..D {
            g[i + 1][a] = e_inv[(i, a)];
            g[0][a] -= e_inv[(i, a)];
        }
    }
    g
}

/// Physical flux selector: Burgers `f(u) = u^2/2 (1, .., 1)` or none.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flux {
    Burgers,
    Zero,
}

impl Flux {
    #[inline]
    fn value<T: Real>(self, u: T) -> T {
        match self {
            Flux::Burgers => T::lit(0.5) * u * u,
            Flux::Zero => T::zero(),
        }
    }

    #[inline]
    fn speed<T: Real>(self, u: T) -> T {
        match self {
            Flux::Burgers => u,
            Flux::Zero => T::zero(),
        }
    }
}

/// Residual `R_i = int (f - u xdot) . grad phi_i - sum_F int phi_i g_hat`
/// for every element and local basis function, together with the volume
/// rate `d|K|/dt` implied by the vertex velocities.
pub(crate) fn residual<T: Real, const D: usize>(
    topo: &Topology<D>,
    x: &[Point<T, D>],
    xdot: &[Point<T, D>],
    u: &[T],
    flux: Flux,
    out: &mut [T],
    vol_rate: &mut [T],
) -> Result<()> {
    let stride = D + 1;
    let ne = topo.n_elements();
    let vrule = volume_rule::<T, D>();
    let fact = factorial::<T>(D);
    for k in 0..ne {
        let elem = topo.element(k);
        let e = edge_matrix_of(x, elem);
        let det = e.det();
        if !(det > T::zero()) {
            return Err(Error::MeshTangled { element: k, volume: (det / fact).to_f64_lossy() });
        }
        let vol = det / fact;
        let e_inv = e.inverse().expect("nonzero determinant");
        let grads = basis_gradients(&e_inv);
        let uk = &u[k * stride..(k + 1) * stride];
        let r = &mut out[k * stride..(k + 1) * stride];
        r.iter_mut().for_each(|v| *v = T::zero());
        let mut div = T::zero();
        for i in 0..stride {
            div += small::dot(&grads[i], &xdot[elem[i]]);
        }
        vol_rate[k] = vol * div;
        for (lam, w) in &vrule {
            let mut uq = T::zero();
            let mut vq = [T::zero(); D];
            for i in 0..stride {
                uq += lam[i] * uk[i];
                vq = small::add(&vq, &small::scale(&xdot[elem[i]], lam[i]));
            }
            let fq = flux.value(uq);
            let mut fvec = [T::zero(); D];
            for a in 0..D {
                fvec[a] = fq - uq * vq[a];
            }
            let wv = *w * vol;
            for i in 0..stride {
                r[i] += wv * small::dot(&fvec, &grads[i]);
            }
        }
    }

    let frule = face_rule::<T, D>();
    for face in topo.faces() {
        let [a, b] = face.sides;
        let ea = topo.element(a.element);
        let (n, measure) = face_normal_of(x, ea, a.opposite);
        let an: T = n.iter().copied().sum();
        let ua = &u[a.element * stride..(a.element + 1) * stride];
        let ub = &u[b.element * stride..(b.element + 1) * stride];
        // one dissipation coefficient per face
        let mut alpha = T::zero();
        let mut pts = [(T::zero(), T::zero(), T::zero()); 2];
        for (q, (lam, _)) in frule.iter().enumerate() {
            let mut um = T::zero();
            let mut up = T::zero();
            let mut vn = T::zero();
            for m in 0..D {
                um += lam[m] * ua[a.locals[m]];
                up += lam[m] * ub[b.locals[m]];
                vn += lam[m] * small::dot(&xdot[ea[a.locals[m]]], &n);
            }
            pts[q] = (um, up, vn);
            let sm = (flux.speed(um) * an - vn).abs();
            let sp = (flux.speed(up) * an - vn).abs();
            alpha = alpha.max(sm).max(sp);
        }
        for (q, (lam, w)) in frule.iter().enumerate() {
            let (um, up, vn) = pts[q];
            let gm = flux.value(um) * an - vn * um;
            let gp = flux.value(up) * an - vn * up;
            let ghat = T::lit(0.5) * (gm + gp) - T::lit(0.5) * alpha * (up - um);
            let wf = *w * measure * ghat;
            for m in 0..D {
                out[a.element * stride + a.locals[m]] -= wf * lam[m];
                out[b.element * stride + b.locals[m]] += wf * lam[m];
            }
        }
    }
    Ok(())
}

/// Applies the inverse P1 mass matrix of an element with volume `vol`,
/// in place: `M^{-1} = ((d+1)(d+2)/vol) (I - 1 1^T / (d+2))`.
#[inline]
pub(crate) fn apply_inverse_mass<T: Real>(z: &mut [T], vol: T) {
    let n = z.len();
    let sum: T = z.iter().copied().sum();
    let c = T::from_count(n * (n + 1)) / vol;
    let shift = sum / T::from_count(n + 1);
    for v in z.iter_mut() {
        *v = c * (*v - shift);
    }
}

/// `M u` for an element of volume `vol`.
#[inline]
pub(crate) fn apply_mass<T: Real>(u: &[T], vol: T, out: &mut [T]) {
    let n = u.len();
    let sum: T = u.iter().copied().sum();
    let c = vol / T::from_count(n * (n + 1));
    for (o, &v) in out.iter_mut().zip(u) {
        *o = c * (v + sum);
    }
}

pub(crate) fn element_volumes<T: Real, const D: usize>(topo: &Topology<D>, x: &[Point<T, D>]) -> Vec<T> {
    let fact = factorial::<T>(D);
    (0..topo.n_elements()).map(|k| edge_matrix_of(x, topo.element(k)).det() / fact).collect()
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

/// One SSP-RK3 step for `d(M U)/dt = R(U)` while the mesh moves linearly
/// from `x_from` to `x_to`. Stage mass matrices use volumes advanced by the
/// same Runge-Kutta recurrence as the solution, so constants are preserved
/// exactly; for meshes moving linearly in time the final stage volume
/// equals the geometric one.
pub(crate) fn ssp_rk3<T: Real, const D: usize>(
    topo: &Topology<D>,
    x_from: &[Point<T, D>],
    x_to: &[Point<T, D>],
    u0: &[T],
    dt: T,
    flux: Flux,
    limiter: &Limiter<T>,
) -> Result<Vec<T>> {
    let stride = D + 1;
    let ne = topo.n_elements();
    let inv_dt = T::one() / dt;
    let xdot: Vec<Point<T, D>> =
        x_from.iter().zip(x_to).map(|(a, b)| small::scale(&small::sub(b, a), inv_dt)).collect();
    let x_half = lerp(x_from, x_to, T::lit(0.5));

    let mut r = vec![T::zero(); u0.len()];
    let mut rate = vec![T::zero(); ne];
    let vol0 = element_volumes(topo, x_from);
    let mut z0 = vec![T::zero(); u0.len()];
    for k in 0..ne {
        apply_mass(&u0[k * stride..(k + 1) * stride], vol0[k], &mut z0[k * stride..(k + 1) * stride]);
    }

    // stage 1 at t0
    residual(topo, x_from, &xdot, u0, flux, &mut r, &mut rate)?;
    let vol1: Vec<T> = (0..ne).map(|k| vol0[k] + dt * rate[k]).collect();
    let mut z1: Vec<T> = z0.iter().zip(&r).map(|(z, r)| *z + dt * *r).collect();
    let mut u1 = z1.clone();
    for k in 0..ne {
        apply_inverse_mass(&mut u1[k * stride..(k + 1) * stride], vol1[k]);
    }
    limit(topo, x_to, &mut u1, limiter);
    for k in 0..ne {
        apply_mass(&u1[k * stride..(k + 1) * stride], vol1[k], &mut z1[k * stride..(k + 1) * stride]);
    }

    // stage 2 at t1
    residual(topo, x_to, &xdot, &u1, flux, &mut r, &mut rate)?;
    let q = T::lit(0.25);
    let tq = T::lit(0.75);
    let vol2: Vec<T> = (0..ne).map(|k| tq * vol0[k] + q * (vol1[k] + dt * rate[k])).collect();
    let mut z2: Vec<T> = (0..u0.len()).map(|i| tq * z0[i] + q * (z1[i] + dt * r[i])).collect();
    let mut u2 = z2.clone();
    for k in 0..ne {
        apply_inverse_mass(&mut u2[k * stride..(k + 1) * stride], vol2[k]);
    }
    limit(topo, &x_half, &mut u2, limiter);
    for k in 0..ne {
        apply_mass(&u2[k * stride..(k + 1) * stride], vol2[k], &mut z2[k * stride..(k + 1) * stride]);
    }

    // stage 3 at t1/2
    residual(topo, &x_half, &xdot, &u2, flux, &mut r, &mut rate)?;
    let third = T::one() / T::lit(3.0);
    let two_thirds = T::lit(2.0) * third;
    let vol3: Vec<T> = (0..ne).map(|k| third * vol0[k] + two_thirds * (vol2[k] + dt * rate[k])).collect();
    let mut u3: Vec<T> = (0..u0.len()).map(|i| third * z0[i] + two_thirds * (z2[i] + dt * r[i])).collect();
    for k in 0..ne {
        apply_inverse_mass(&mut u3[k * stride..(k + 1) * stride], vol3[k]);
    }
    limit(topo, x_to, &mut u3, limiter);
    if u3.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("DG step"));
    }
    Ok(u3)
}
