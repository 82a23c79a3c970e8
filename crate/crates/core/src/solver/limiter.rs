//! Minmod TVB slope limiter (Cockburn-Shu) for P1-DG nodal coefficients.
//! Element means are never changed.

use crate::linalg::{small, Point};
use crate::mesh::{edge_matrix_of, Topology};
use crate::scalar::{factorial, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Limiter<T> {
    pub enabled: bool,
    /// TVB constant `M`: deviations below `M h^2` are left alone.
    pub tvb_m: T,
    /// Neighbor-difference factor in 2D.
    pub nu: T,
}

impl<T: Real> Default for Limiter<T> {
    fn default() -> Self {
        Limiter { enabled: true, tvb_m: T::one(), nu: T::lit(1.5) }
    }
}

impl<T: Real> Limiter<T> {
    pub fn disabled() -> Self {
        Limiter { enabled: false, ..Self::default() }
    }
}

#[inline]
fn minmod<T: Real>(a: T, b: T, c: T) -> T {
    if a > T::zero() && b > T::zero() && c > T::zero() {
        a.min(b).min(c)
    } else if a < T::zero() && b < T::zero() && c < T::zero() {
        a.max(b).max(c)
    } else {
        T::zero()
    }
}

#[inline]
fn tvb_minmod<T: Real>(a: T, b: T, c: T, threshold: T) -> T {
    if a.abs() <= threshold {
        a
    } else {
        minmod(a, b, c)
    }
}

/// Neighbor across the face opposite each local vertex, with the centroid
/// translated across periodic faces.
fn neighbor_centroids<T: Real, const D: usize>(
    topo: &Topology<D>,
    x: &[Point<T, D>],
    centroids: &[Point<T, D>],
) -> Vec<[Option<(usize, Point<T, D>)>; 3]> {
    let mut out = vec![[None; 3]; topo.n_elements()];
    let inv = T::one() / T::from_count(D);
    let face_mid = |elem: &[usize], locals: &[usize; D]| {
        let mut m = [T::zero(); D];
        for &l in locals {
            m = small::add(&m, &x[elem[l]]);
        }
        small::scale(&m, inv)
    };
    for f in topo.faces() {
        let [a, b] = f.sides;
        let (ea, eb) = (topo.element(a.element), topo.element(b.element));
        let (ca, cb) = (centroids[a.element], centroids[b.element]);
        let (cb_seen, ca_seen) = if f.periodic {
            let shift = small::sub(&face_mid(ea, &a.locals), &face_mid(eb, &b.locals));
            (small::add(&cb, &shift), small::sub(&ca, &shift))
        } else {
            (cb, ca)
        };
        out[a.element][a.opposite] = Some((b.element, cb_seen));
        out[b.element][b.opposite] = Some((a.element, ca_seen));
    }
    out
}

/// Limits `u` in place on the mesh with vertices `x`.
pub(crate) fn limit<T: Real, const D: usize>(topo: &Topology<D>, x: &[Point<T, D>], u: &mut [T], limiter: &Limiter<T>) {
    if !limiter.enabled {
        return;
    }
    let stride = D + 1;
    let ne = topo.n_elements();
    let inv_n = T::one() / T::from_count(stride);
    let means: Vec<T> = (0..ne).map(|k| u[k * stride..(k + 1) * stride].iter().copied().sum::<T>() * inv_n).collect();
    let centroids: Vec<Point<T, D>> = (0..ne)
        .map(|k| {
            let mut c = [T::zero(); D];
            for &v in topo.element(k) {
                c = small::add(&c, &x[v]);
            }
            small::scale(&c, inv_n)
        })
        .collect();
    let nbrs = neighbor_centroids(topo, x, &centroids);
    match D {
        1 => limit_1d(topo, x, u, &means, &centroids, &nbrs, limiter),
        2 => limit_2d(topo, x, u, &means, &centroids, &nbrs, limiter),
        _ => unreachable!("only spatial dimensions 1 and 2 are supported"),
    }
}

fn limit_1d<T: Real, const D: usize>(
    topo: &Topology<D>,
    x: &[Point<T, D>],
    u: &mut [T],
    means: &[T],
    centroids: &[Point<T, D>],
    nbrs: &[[Option<(usize, Point<T, D>)>; 3]],
    limiter: &Limiter<T>,
) {
    let half = T::lit(0.5);
    for k in 0..topo.n_elements() {
        let e = topo.element(k);
        let (x0, x1) = (x[e[0]][0], x[e[1]][0]);
        let h = x1 - x0;
        let c = centroids[k][0];
        // local vertex 1 is the right end, so the face opposite it is on the left
        let (Some((r, cr)), Some((l, cl))) = (nbrs[k][0], nbrs[k][1]) else { continue };
        let ub = means[k];
        let slope = (u[2 * k + 1] - u[2 * k]) / h;
        let sr = (means[r] - ub) / (cr[0] - c);
        let sl = (ub - means[l]) / (c - cl[0]);
        let dev = slope * h * half;
        let lim = tvb_minmod(dev, sr * h, sl * h, limiter.tvb_m * h * h);
        if lim != dev {
            u[2 * k] = ub - lim;
            u[2 * k + 1] = ub + lim;
        }
    }
}

fn limit_2d<T: Real, const D: usize>(
    topo: &Topology<D>,
    x: &[Point<T, D>],
    u: &mut [T],
    means: &[T],
    centroids: &[Point<T, D>],
    nbrs: &[[Option<(usize, Point<T, D>)>; 3]],
    limiter: &Limiter<T>,
) {
    let half = T::lit(0.5);
    let fact = factorial::<T>(D);
    for k in 0..topo.n_elements() {
        let e = topo.element(k);
        let nb = nbrs[k];
        if nb.iter().any(|n| n.is_none()) {
            continue;
        }
        let nb: [(usize, Point<T, D>); 3] = [nb[0].unwrap(), nb[1].unwrap(), nb[2].unwrap()];
        let uk = [u[3 * k], u[3 * k + 1], u[3 * k + 2]];
        let ub = means[k];
        let c0 = centroids[k];
        let vol = edge_matrix_of(x, e).det() / fact;
        let diam = (vol * T::lit(2.0)).sqrt();
        let threshold = limiter.tvb_m * diam * diam;
        let mut delta = [T::zero(); 3];
        let mut changed = false;
        for i in 0..3 {
            // midpoint of the edge opposite local vertex i
            let mut m = [T::zero(); D];
            for l in 0..3 {
                if l != i {
                    m = small::add(&m, &x[e[l]]);
                }
            }
            let m = small::scale(&m, half);
            let tilde = (uk[0] + uk[1] + uk[2] - uk[i]) * half - ub;
            let d = small::sub(&m, &c0);
            let neighbor_diff = best_pair(&d, &c0, &nb, i)
                .map(|(a1, j1, a2, j2)| a1 * (means[nb[j1].0] - ub) + a2 * (means[nb[j2].0] - ub))
                .unwrap_or(T::zero());
            let lim = tvb_minmod(tilde, limiter.nu * neighbor_diff, limiter.nu * neighbor_diff, threshold);
            if lim != tilde {
                changed = true;
            }
            delta[i] = lim;
        }
        if !changed {
            continue;
        }
        let sum: T = delta.iter().copied().sum();
        if sum != T::zero() {
            let pos: T = delta.iter().map(|d| d.max(T::zero())).sum();
            let neg: T = delta.iter().map(|d| (-*d).max(T::zero())).sum();
            let tp = if pos > T::zero() { T::one().min(neg / pos) } else { T::one() };
            let tn = if neg > T::zero() { T::one().min(pos / neg) } else { T::one() };
            for d in delta.iter_mut() {
                *d = tp * d.max(T::zero()) - tn * (-*d).max(T::zero());
            }
        }
        for i in 0..3 {
            u[3 * k + i] = ub - T::lit(2.0) * delta[i];
        }
    }
}

/// Coefficients `a1, a2 >= 0` with `d = a1 (c_j1 - c0) + a2 (c_j2 - c0)`,
/// preferring pairs that contain neighbor `i`.
fn best_pair<T: Real, const D: usize>(
    d: &Point<T, D>,
    c0: &Point<T, D>,
    nb: &[(usize, Point<T, D>); 3],
    i: usize,
) -> Option<(T, usize, T, usize)> {
    let pairs = [(i, (i + 1) % 3), (i, (i + 2) % 3), ((i + 1) % 3, (i + 2) % 3)];
    let tol = -T::lit(1e-10);
    for (j1, j2) in pairs {
        let p = small::sub(&nb[j1].1, c0);
        let q = small::sub(&nb[j2].1, c0);
        let det = p[0] * q[1] - p[1] * q[0];
        if det.abs() <= T::epsilon() {
            continue;
        }
        let a1 = (d[0] * q[1] - d[1] * q[0]) / det;
        let a2 = (p[0] * d[1] - p[1] * d[0]) / det;
        if a1 >= tol && a2 >= tol {
            return Some((a1.max(T::zero()), j1, a2.max(T::zero()), j2));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoxDomain, SimplicialMesh};

    #[test]
    fn minmod_rules() {
        assert_eq!(minmod(1.0, 2.0, 0.5), 0.5);
        assert_eq!(minmod(-1.0, -2.0, -0.5), -0.5);
        assert_eq!(minmod(1.0, -2.0, 0.5), 0.0);
        assert_eq!(tvb_minmod(0.01, -1.0, 1.0, 0.1), 0.01);
    }

    #[test]
    fn limiter_flattens_step_keeps_means() {
        let m: SimplicialMesh<f64, 1> = SimplicialMesh::uniform(BoxDomain::new([0.0], [1.0]).unwrap(), [11]).unwrap();
        // step with a steep interior ramp in element 5
        let mut u = Vec::new();
        for k in 0..10 {
            match k {
                0..=4 => u.extend([0.0, 0.0]),
                5 => u.extend([-1.0, 3.0]),
                _ => u.extend([1.0, 1.0]),
            }
        }
        let means: Vec<f64> = u.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect();
        let lim = Limiter { enabled: true, tvb_m: 0.0, nu: 1.5 };
        limit(m.topology(), m.vertices(), &mut u, &lim);
        let after: Vec<f64> = u.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect();
        assert_eq!(means, after);
        assert!(u[10] >= 0.0 && u[11] <= 1.0, "{:?}", &u[10..12]);
    }

    #[test]
    fn linear_field_untouched_in_2d() {
        let m: SimplicialMesh<f64, 2> =
            SimplicialMesh::uniform(BoxDomain::new([0.0, 0.0], [1.0, 1.0]).unwrap(), [6, 6]).unwrap();
        let f = |p: &[f64; 2]| 0.3 + 0.2 * p[0] - 0.1 * p[1];
        let mut u: Vec<f64> =
            (0..m.n_elements()).flat_map(|k| m.element(k).iter().map(|&v| f(m.vertex(v))).collect::<Vec<_>>()).collect();
        let orig = u.clone();
        let lim = Limiter { enabled: true, tvb_m: 0.0, nu: 1.5 };
        limit(m.topology(), m.vertices(), &mut u, &lim);
        // interior elements reproduce the linear field exactly
        for k in 0..m.n_elements() {
            let interior = m.element(k).iter().all(|&v| m.topology().boundary(v) == crate::mesh::Boundary::Interior);
            if interior {
                for i in 0..3 {
                    assert!((u[3 * k + i] - orig[3 * k + i]).abs() < 1e-12);
                }
            }
        }
    }
}
