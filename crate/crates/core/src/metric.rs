//! Metric tensor fields: Hessian-based metrics, intersection, the
//! observation-concentration metric, and low-pass smoothing.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{small, Point, SMat};
use crate::mesh::SimplicialMesh;
use crate::scalar::Real;

/// One SPD matrix per element plus the cached `sigma_h = sum |K| sqrt(det M_K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField<T, const D: usize> {
    tensors: Vec<SMat<T, D>>,
    sigma: T,
    alpha: Option<T>,
}

impl<T: Real, const D: usize> MetricField<T, D> {
    /// Validates symmetry and positive definiteness of every tensor.
    pub fn new(mesh: &SimplicialMesh<T, D>, tensors: Vec<SMat<T, D>>) -> Result<Self> {
        if tensors.len() != mesh.n_elements() {
            return Err(Error::LengthMismatch { expected: mesh.n_elements(), got: tensors.len() });
        }
        for m in &tensors {
            check_spd(m)?;
        }
        let sigma = tensors.iter().enumerate().map(|(k, m)| mesh.volume(k) * m.det().sqrt()).sum();
        Ok(MetricField { tensors, sigma, alpha: None })
    }

    pub fn identity(mesh: &SimplicialMesh<T, D>) -> Self {
        Self::new(mesh, vec![SMat::identity(); mesh.n_elements()]).expect("identity is SPD")
    }

    pub fn tensors(&self) -> &[SMat<T, D>] {
        &self.tensors
    }

    #[inline]
    pub fn get(&self, k: usize) -> &SMat<T, D> {
        &self.tensors[k]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// Regularization parameter used when the field came from a Hessian.
    pub fn alpha(&self) -> Option<T> {
        self.alpha
    }

    /// Volume-weighted average of the tensors over the patch of vertex `j`.
    pub fn vertex_tensor(&self, mesh: &SimplicialMesh<T, D>, j: usize) -> SMat<T, D> {
        mesh.vertex_average(j, |k| self.tensors[k])
    }

    pub fn max_sqrt_det(&self) -> T {
        self.tensors.iter().map(|m| m.det().sqrt()).fold(T::zero(), T::max)
    }

    /// Debug dump: one line per element, the element id then the row-major entries.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (k, m) in self.tensors.iter().enumerate() {
            let _ = write!(s, "{k}");
            for r in 0..D {
                for c in 0..D {
                    let _ = write!(s, " {:e}", m[(r, c)].to_f64_lossy());
                }
            }
            s.push('\n');
        }
        s
    }
}

fn check_spd<T: Real, const D: usize>(m: &SMat<T, D>) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::NonFinite("metric tensor"));
    }
    let scale = m.max_abs();
    for r in 0..D {
        for c in (r + 1)..D {
            if (m[(r, c)] - m[(c, r)]).abs() > T::lit(1e-12) * scale.max(T::one()) {
                return Err(Error::InvalidParameter("metric tensor is not symmetric".into()));
            }
        }
    }
    let e = m.min_eigenvalue();
    if !(e > T::zero()) {
        return Err(Error::NotSpd { eigenvalue: e.to_f64_lossy() });
    }
    Ok(())
}

/// Gradient of the element-local P1 polynomial given its nodal coefficients.
#[inline]
pub(crate) fn element_gradient<T: Real, const D: usize>(edge_inv_t: &SMat<T, D>, nodal: &[T]) -> Point<T, D> {
    let mut delta = [T::zero(); D];
    for i in 0..D {
        delta[i] = nodal[i + 1] - nodal[0];
    }
    edge_inv_t.mul_vec(&delta)
}

/// Recovered Hessian per element from element-local P1 coefficients
/// (`d + 1` nodal values per element).
///
/// Element gradients are averaged to vertices with volume weights (patches
/// of periodically identified vertices are merged), and the resulting
/// piecewise-linear gradient is differentiated again.
pub fn recover_hessian<T: Real, const D: usize>(mesh: &SimplicialMesh<T, D>, coeffs: &[T]) -> Vec<SMat<T, D>> {
    let ne = mesh.n_elements();
    let stride = D + 1;
    assert_eq!(coeffs.len(), ne * stride, "coefficient vector does not match mesh");
    let inv_t: Vec<SMat<T, D>> = (0..ne)
        .map(|k| mesh.edge_matrix(k).inverse().expect("nonsingular element").transpose())
        .collect();
    let grads: Vec<Point<T, D>> =
        (0..ne).map(|k| element_gradient(&inv_t[k], &coeffs[k * stride..(k + 1) * stride])).collect();
    let volumes = mesh.volumes();

    let topo = mesh.topology();
    let mut vgrad = vec![[T::zero(); D]; mesh.n_vertices()];
    for (j, g) in vgrad.iter_mut().enumerate() {
        let mut acc = [T::zero(); D];
        let mut w = T::zero();
        for &img in topo.periodic_images(j) {
            for &(k, _) in topo.patch(img) {
                acc = small::add(&acc, &small::scale(&grads[k], volumes[k]));
                w += volumes[k];
            }
        }
        *g = small::scale(&acc, T::one() / w);
    }

    (0..ne)
        .map(|k| {
            let e = mesh.element(k);
            // column a: gradient of the a-th recovered derivative
            let mut h = SMat::zeros();
            for a in 0..D {
                let nodal: Vec<T> = e.iter().map(|&v| vgrad[v][a]).collect();
                let col = element_gradient(&inv_t[k], &nodal);
                for b in 0..D {
                    h[(b, a)] = col[b];
                }
            }
            h.symmetrize()
        })
        .collect()
}

fn hessian_tensor<T: Real, const D: usize>(abs_h: &SMat<T, D>, alpha: T) -> SMat<T, D> {
    let m = SMat::identity() + abs_h.scale(T::one() / alpha);
    let exponent = -T::one() / T::from_count(D + 4);
    m.scale(m.det().powf(exponent))
}

/// Solves `sum |K| det(I + |H_K|/alpha)^{2/(d+4)} = target` for `alpha` in
/// `[1e-8, 1e8]` by bracketed Newton iteration on `log alpha`.
fn solve_alpha<T: Real, const D: usize>(volumes: &[T], abs_h: &[SMat<T, D>], target: T) -> T {
    let p = T::lit(2.0) / T::from_count(D + 4);
    let eig: Vec<[T; D]> = abs_h.iter().map(|h| h.sym_eigen().0.map(|x| x.max(T::zero()))).collect();
    // residual and its derivative; decreasing in log alpha
    let f = |la: T| -> (T, T) {
        let inv = (-la).exp();
        let (mut s, mut ds) = (T::zero(), T::zero());
        for (&v, l) in volumes.iter().zip(&eig) {
            let mut log_det = T::zero();
            let mut dlog = T::zero();
            for &x in l {
                let q = x * inv;
                log_det += q.ln_1p();
                dlog -= q / (T::one() + q);
            }
            let g = v * (p * log_det).exp();
            s += g;
            ds += g * p * dlog;
        }
        (s - target, ds)
    };
    let (mut a, mut b) = (T::lit(1e-8).ln(), T::lit(1e8).ln());
    if f(a).0 <= T::zero() {
        return a.exp();
    }
    if f(b).0 >= T::zero() {
        return b.exp();
    }
    let tol = T::lit(1e-6).ln_1p();
    let mut x = (a + b) * T::lit(0.5);
    for _ in 0..200 {
        let (fx, dfx) = f(x);
        if fx == T::zero() {
            return x.exp();
        }
        if fx > T::zero() {
            a = x;
        } else {
            b = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx < T::zero() && newton > a && newton < b { newton } else { (a + b) * T::lit(0.5) };
        if (next - x).abs() < tol * T::lit(1e-3) || b - a < tol {
            return next.exp();
        }
        x = next;
    }
    x.exp()
}

/// Hessian-based metric `det(I + |H|/alpha)^{-1/(d+4)} (I + |H|/alpha)`.
///
/// `alpha` solves the balance equation with right-hand side
/// `2 max(sum |K| det|H_K|^{2/(d+4)}, sum |K|)`; the left side never drops
/// below `sum |K|`, so without the floor the equation can lack a root.
/// A flat field (every `H_K = 0`) yields the identity metric.
///
/// Eigenvalues of `|H_K| / alpha` are clipped at `cap`. At a discontinuity
/// the recovered Hessian grows like `1/h^2`, so without a cap the mesh
/// keeps refining the shock until elements are orders of magnitude smaller
/// than their neighbours. Pass `T::infinity()` for the unclipped metric.
pub fn hessian_metric<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    coeffs: &[T],
    cap: T,
) -> Result<MetricField<T, D>> {
    let hessians = recover_hessian(mesh, coeffs);
    if hessians.iter().any(|h| !h.is_finite()) {
        return Err(Error::NonFinite("recovered Hessian"));
    }
    if hessians.iter().all(|h| h.max_abs() == T::zero()) {
        return Ok(MetricField::identity(mesh));
    }
    let abs_h: Vec<SMat<T, D>> = hessians.iter().map(|h| h.sym_apply(T::abs)).collect();
    let volumes = mesh.volumes();
    let p = T::lit(2.0) / T::from_count(D + 4);
    let rhs: T = volumes.iter().zip(&abs_h).map(|(&v, h)| v * h.det().max(T::zero()).powf(p)).sum();
    let total: T = volumes.iter().copied().sum();
    let target = T::lit(2.0) * rhs.max(total);
    let alpha = solve_alpha(&volumes, &abs_h, target);
    let clip = cap * alpha;
    let tensors = abs_h.iter().map(|h| hessian_tensor(&h.sym_apply(|l| l.min(clip)), alpha)).collect();
    let mut field = MetricField::new(mesh, tensors)?;
    field.alpha = Some(alpha);
    Ok(field)
}

/// Intersection `A ∩ B = P^{-1} diag(max(1, b_i)) P^{-T}` where `P A P^T = I`
/// and `P B P^T = diag(b_i)`.
pub fn intersect_pair<T: Real, const D: usize>(a: &SMat<T, D>, b: &SMat<T, D>) -> Result<SMat<T, D>> {
    check_spd(a)?;
    check_spd(b)?;
    Ok(intersect_unchecked(a, b))
}

fn intersect_unchecked<T: Real, const D: usize>(a: &SMat<T, D>, b: &SMat<T, D>) -> SMat<T, D> {
    if D == 1 {
        return SMat::from_fn(|_, _| a[(0, 0)].max(b[(0, 0)]));
    }
    let l = a.cholesky().expect("SPD input");
    let linv = l.inverse().expect("SPD input");
    let c = (linv * *b * linv.transpose()).symmetrize();
    let (vals, q) = c.sym_eigen();
    let mut lam = vals;
    for v in lam.iter_mut() {
        *v = v.max(T::one());
    }
    let lq = l * q;
    (lq * SMat::diag(lam) * lq.transpose()).symmetrize()
}

/// Element-wise intersection of several metric fields. Per element the
/// accumulator starts from the tensor of smallest determinant and at each
/// step absorbs the remaining tensor that gives the smallest determinant of
/// the partial intersection; ties go to the lowest member index.
pub fn intersect_ensemble<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    fields: &[MetricField<T, D>],
) -> Result<MetricField<T, D>> {
    let first = fields.first().ok_or(Error::Empty("metric fields"))?;
    let ne = first.len();
    if let Some(f) = fields.iter().find(|f| f.len() != ne) {
        return Err(Error::LengthMismatch { expected: ne, got: f.len() });
    }
    if fields.len() == 1 {
        return Ok(first.clone());
    }
    let mut out = Vec::with_capacity(ne);
    let mut remaining = Vec::with_capacity(fields.len());
    for k in 0..ne {
        remaining.clear();
        remaining.extend(0..fields.len());
        let start = argmin_by(&remaining, |&i| fields[i].get(k).det());
        let mut acc = *fields[remaining.remove(start)].get(k);
        while !remaining.is_empty() {
            let cands: Vec<SMat<T, D>> =
                remaining.iter().map(|&i| intersect_unchecked(&acc, fields[i].get(k))).collect();
            let pick = argmin_by(&(0..cands.len()).collect::<Vec<_>>(), |&c| cands[c].det());
            acc = cands[pick];
            remaining.remove(pick);
        }
        out.push(acc);
    }
    MetricField::new(mesh, out)
}

/// Position of the first minimal value (lowest index on ties).
fn argmin_by<T: Real>(items: &[usize], key: impl Fn(&usize) -> T) -> usize {
    let mut best = 0;
    let mut best_val = key(&items[0]);
    for (pos, it) in items.iter().enumerate().skip(1) {
        let v = key(it);
        if v < best_val {
            best = pos;
            best_val = v;
        }
    }
    best
}

/// `chi(w) = 1 / (exp(4 w^2) - 1 + 1 / max_K sqrt(det M^m_K))`.
pub fn chi<T: Real>(w: T, max_sqrt_det: T) -> T {
    T::one() / ((T::lit(4.0) * w * w).exp_m1() + T::one() / max_sqrt_det)
}

/// Isotropic observation-concentration metric evaluated at element centroids.
pub fn observation_metric<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    obs_locations: &[Point<T, D>],
    ensemble_metric: &MetricField<T, D>,
) -> Result<MetricField<T, D>> {
    let peak = ensemble_metric.max_sqrt_det();
    // keeps far-field elements strictly positive definite
    let floor = peak * T::lit(1e-30);
    let tensors = (0..mesh.n_elements())
        .map(|k| {
            let c = mesh.centroid(k);
            let s: T = obs_locations.iter().map(|o| chi(small::distance(&c, o), peak)).sum();
            SMat::scaled_identity(s.max(floor))
        })
        .collect();
    MetricField::new(mesh, tensors)
}

/// Barycentric centroids of the `m^d` congruent pieces of the uniform
/// refinement of a simplex (d = 1, 2).
fn refinement_centroids<T: Real>(d: usize, m: usize) -> Vec<[T; 3]> {
    let mf = T::from_count(m);
    let mut out = Vec::new();
    if d == 1 {
        for i in 0..m {
            let x = (T::from_count(i) + T::lit(0.5)) / mf;
            out.push([T::one() - x, x, T::zero()]);
        }
        return out;
    }
    let third = T::one() / T::lit(3.0);
    for i in 0..m {
        for j in 0..m - i {
            let (a, b) = ((T::from_count(i) + third) / mf, (T::from_count(j) + third) / mf);
            out.push([T::one() - a - b, a, b]);
            if i + j + 2 <= m {
                let (a, b) = ((T::from_count(i) + third + third) / mf, (T::from_count(j) + third + third) / mf);
                out.push([T::one() - a - b, a, b]);
            }
        }
    }
    out
}

/// [`observation_metric`] with `chi` averaged over each element instead of
/// sampled at its centroid. Elements larger than `resolution` are split
/// into congruent pieces of about that size (at most 32 per axis), so
/// large elements near an observation see its peak.
pub fn observation_metric_averaged<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    obs_locations: &[Point<T, D>],
    ensemble_metric: &MetricField<T, D>,
    resolution: T,
) -> Result<MetricField<T, D>> {
    if !(resolution > T::zero()) {
        return Err(Error::InvalidParameter(format!("resolution must be positive, got {resolution}")));
    }
    let peak = ensemble_metric.max_sqrt_det();
    let floor = peak * T::lit(1e-30);
    let mut cache: Vec<Vec<[T; 3]>> = Vec::new();
    let tensors = (0..mesh.n_elements())
        .map(|k| {
            let m = (mesh.diameter(k) / resolution).ceil().to_f64_lossy().clamp(1.0, 32.0) as usize;
            if cache.len() < m {
                cache.resize(m, Vec::new());
            }
            if cache[m - 1].is_empty() {
                cache[m - 1] = refinement_centroids(D, m);
            }
            let e = mesh.element(k);
            let pts = &cache[m - 1];
            let mut s = T::zero();
            for b in pts {
                let mut x = [T::zero(); D];
                for i in 0..=D {
                    x = small::add(&x, &small::scale(mesh.vertex(e[i]), b[i]));
                }
                s += obs_locations.iter().map(|o| chi(small::distance(&x, o), peak)).sum::<T>();
            }
            Ok(SMat::scaled_identity((s / T::from_count(pts.len())).max(floor)))
        })
        .collect::<Result<Vec<_>>>()?;
    MetricField::new(mesh, tensors)
}

/// Which metric drives the common mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshMode {
    EnsembleOnly,
    ObservationOnly,
    Intersect,
}

pub fn combine_metrics<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    mode: MeshMode,
    mm: &MetricField<T, D>,
    mo: &MetricField<T, D>,
) -> Result<MetricField<T, D>> {
    match mode {
        MeshMode::EnsembleOnly => Ok(mm.clone()),
        MeshMode::ObservationOnly => Ok(mo.clone()),
        MeshMode::Intersect => {
            if mm.len() != mo.len() {
                return Err(Error::LengthMismatch { expected: mm.len(), got: mo.len() });
            }
            let t = mm.tensors.iter().zip(&mo.tensors).map(|(a, b)| intersect_unchecked(a, b)).collect();
            MetricField::new(mesh, t)
        }
    }
}

/// Low-pass filter: each sweep sets `M_K <- M_K / 2 + (volume-weighted mean
/// over face neighbors) / 2`, periodic neighbors included.
pub fn smooth_metric<T: Real, const D: usize>(
    metric: &MetricField<T, D>,
    mesh: &SimplicialMesh<T, D>,
    sweeps: usize,
) -> Result<MetricField<T, D>> {
    if sweeps == 0 {
        return Ok(metric.clone());
    }
    let ne = mesh.n_elements();
    let volumes = mesh.volumes();
    let mut adjacency = vec![Vec::with_capacity(D + 1); ne];
    for f in mesh.topology().faces() {
        let (a, b) = (f.sides[0].element, f.sides[1].element);
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    let half = T::lit(0.5);
    let mut cur = metric.tensors.clone();
    for _ in 0..sweeps {
        let next: Vec<SMat<T, D>> = (0..ne)
            .map(|k| {
                if adjacency[k].is_empty() {
                    return cur[k];
                }
                let mut acc = SMat::zeros();
                let mut w = T::zero();
                for &n in &adjacency[k] {
                    acc += cur[n].scale(volumes[n]);
                    w += volumes[n];
                }
                (cur[k].scale(half) + acc.scale(half / w)).symmetrize()
            })
            .collect();
        cur = next;
    }
    let mut out = MetricField::new(mesh, cur)?;
    out.alpha = metric.alpha;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoxDomain;

    fn line(n: usize, len: f64) -> SimplicialMesh<f64, 1> {
        SimplicialMesh::uniform(BoxDomain::new([0.0], [len]).unwrap(), [n]).unwrap()
    }

    fn nodal_1d(mesh: &SimplicialMesh<f64, 1>, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..mesh.n_elements()).flat_map(|k| mesh.element(k).iter().map(|&v| f(mesh.vertex(v)[0])).collect::<Vec<_>>()).collect()
    }

    #[test]
    fn hessian_of_quadratics() {
        let m = line(11, 1.0);
        let h = recover_hessian(&m, &nodal_1d(&m, |x| x * x));
        for k in 1..9 {
            assert!((h[k][(0, 0)] - 2.0).abs() < 1e-8, "{k}: {:?}", h[k]);
        }
        let sq: SimplicialMesh<f64, 2> =
            SimplicialMesh::uniform(BoxDomain::new([0.0, 0.0], [1.0, 1.0]).unwrap(), [7, 7]).unwrap();
        let coeffs: Vec<f64> = (0..sq.n_elements())
            .flat_map(|k| sq.element(k).iter().map(|&v| sq.vertex(v)[0] * sq.vertex(v)[1]).collect::<Vec<_>>())
            .collect();
        let h = recover_hessian(&sq, &coeffs);
        for k in 0..sq.n_elements() {
            let interior = sq.element(k).iter().all(|&v| sq.topology().boundary(v) == crate::mesh::Boundary::Interior);
            if interior {
                assert!((h[k][(0, 1)] - 1.0).abs() < 1e-8 && h[k][(0, 0)].abs() < 1e-8 && h[k][(1, 1)].abs() < 1e-8);
            }
        }
    }

    #[test]
    fn flat_field_gives_identity() {
        let m = line(6, 1.0);
        let f = hessian_metric(&m, &vec![3.0; 10], f64::INFINITY).unwrap();
        assert!(f.tensors().iter().all(|t| *t == SMat::identity()));
        assert!(f.alpha().is_none());
    }

    #[test]
    fn alpha_matches_independent_bisection() {
        let m = line(21, 2.0);
        let coeffs = nodal_1d(&m, |x| (3.0 * x).sin() + 0.5 * x * x);
        let f = hessian_metric(&m, &coeffs, f64::INFINITY).unwrap();
        let alpha = f.alpha().unwrap();
        // independent oracle: plain bisection on alpha itself
        let h: Vec<f64> = recover_hessian(&m, &coeffs).iter().map(|h| h[(0, 0)].abs()).collect();
        let vol = m.volumes();
        let rhs: f64 = vol.iter().zip(&h).map(|(v, h)| v * h.powf(0.4)).sum();
        let target = 2.0 * rhs.max(vol.iter().sum());
        let g = |a: f64| vol.iter().zip(&h).map(|(v, h)| v * (1.0 + h / a).powf(0.4)).sum::<f64>() - target;
        let (mut lo, mut hi) = (1e-8, 1e8);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((alpha / lo - 1.0).abs() < 1e-5, "{alpha} vs {lo}");
        // larger curvature -> larger metric
        let mut order: Vec<usize> = (0..h.len()).collect();
        order.sort_by(|&a, &b| h[a].partial_cmp(&h[b]).unwrap());
        for w in order.windows(2) {
            assert!(f.get(w[0])[(0, 0)] <= f.get(w[1])[(0, 0)] + 1e-12);
        }
    }

    #[test]
    fn scaling_state_sharpens_concentration() {
        let m = line(41, 20.0);
        let u = |x: f64| 0.5 + (std::f64::consts::PI * x / 10.0).sin();
        let a = hessian_metric(&m, &nodal_1d(&m, u), f64::INFINITY).unwrap();
        let b = hessian_metric(&m, &nodal_1d(&m, |x| 4.0 * u(x)), f64::INFINITY).unwrap();
        let peak = (0..a.len()).max_by(|&i, &j| a.get(i).det().partial_cmp(&a.get(j).det()).unwrap()).unwrap();
        assert!(b.get(peak).det() >= a.get(peak).det());
    }

    #[test]
    fn cap_bounds_concentration() {
        let m = line(41, 1.0);
        let step = nodal_1d(&m, |x| if x < 0.5 { 0.0 } else { 1.0 });
        let free = hessian_metric(&m, &step, f64::INFINITY).unwrap();
        let capped = hessian_metric(&m, &step, 10.0).unwrap();
        let bound = 11f64.powf(0.8);
        assert!(capped.tensors().iter().all(|t| t[(0, 0)] <= bound + 1e-12));
        assert!(free.tensors().iter().any(|t| t[(0, 0)] > bound));
    }

    #[test]
    fn intersection_examples() {
        let i = SMat::<f64, 2>::identity();
        assert_eq!(intersect_pair(&i, &i).unwrap(), i);
        let a = SMat::<f64, 1>::diag([2.0]);
        let b = SMat::<f64, 1>::diag([5.0]);
        assert_eq!(intersect_pair(&a, &b).unwrap().0, [[5.0]]);
        let a = SMat::diag([4.0, 1.0]);
        let b = SMat::diag([1.0, 4.0]);
        let c = intersect_pair(&a, &b).unwrap();
        assert!((c - SMat::diag([4.0, 4.0])).max_abs() < 1e-12);
        assert!(matches!(intersect_pair(&a, &SMat::diag([1.0, -1.0])), Err(Error::NotSpd { .. })));
    }

    #[test]
    fn ensemble_intersection_1d_is_max() {
        let m = line(2, 1.0);
        let fields: Vec<MetricField<f64, 1>> =
            [2.0, 7.0, 3.0].iter().map(|&v| MetricField::new(&m, vec![SMat::diag([v])]).unwrap()).collect();
        let r = intersect_ensemble(&m, &fields).unwrap();
        assert_eq!(r.get(0).0, [[7.0]]);
        assert!(intersect_ensemble::<f64, 1>(&m, &[]).is_err());
        let single = intersect_ensemble(&m, &fields[..1]).unwrap();
        assert_eq!(single, fields[0]);
    }

    #[test]
    fn observation_metric_values() {
        let m = line(3, 2.0);
        let mm = MetricField::new(&m, vec![SMat::diag([4.0]), SMat::diag([9.0])]).unwrap();
        let c0 = m.centroid(0);
        let mo = observation_metric(&m, &[c0], &mm).unwrap();
        assert!((mo.get(0)[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((chi(3.0, 3.0) - (-36.0f64).exp()).abs() < 1e-18);
        let far = observation_metric(&m, &[[c0[0] - 3.0 + 0.0]], &mm);
        assert!(far.is_ok());
    }

    #[test]
    fn averaged_observation_metric() {
        // fine elements: the centroid value; a coarse element: the mean of chi
        let m = line(3, 2.0);
        let mm = MetricField::new(&m, vec![SMat::diag([4.0]), SMat::diag([9.0])]).unwrap();
        let c0 = m.centroid(0);
        let fine = observation_metric_averaged(&m, &[c0], &mm, 10.0).unwrap();
        assert_eq!(fine, observation_metric(&m, &[c0], &mm).unwrap());
        let avg = observation_metric_averaged(&m, &[c0], &mm, 1e-3).unwrap();
        let (a, b) = (m.vertex(0)[0], m.vertex(1)[0]);
        let n = 20000;
        let exact: f64 =
            (0..n).map(|i| chi((a + (b - a) * (i as f64 + 0.5) / n as f64 - c0[0]).abs(), 3.0)).sum::<f64>() / n as f64;
        assert!((avg.get(0)[(0, 0)] - exact).abs() < 1e-3 * exact);
        assert!(avg.get(0)[(0, 0)] < 3.0);
        // 2D pieces tile the triangle: their centroids average to its centroid
        for m in 1..6 {
            let pts = refinement_centroids::<f64>(2, m);
            assert_eq!(pts.len(), m * m);
            for i in 0..3 {
                let mean = pts.iter().map(|p| p[i]).sum::<f64>() / pts.len() as f64;
                assert!((mean - 1.0 / 3.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn combine_modes() {
        let m = line(3, 2.0);
        let mm = MetricField::new(&m, vec![SMat::diag([4.0]), SMat::diag([9.0])]).unwrap();
        let mo = MetricField::new(&m, vec![SMat::diag([5.0]), SMat::diag([1.0])]).unwrap();
        assert_eq!(combine_metrics(&m, MeshMode::EnsembleOnly, &mm, &mo).unwrap(), mm);
        assert_eq!(combine_metrics(&m, MeshMode::ObservationOnly, &mm, &mo).unwrap(), mo);
        let c = combine_metrics(&m, MeshMode::Intersect, &mm, &mo).unwrap();
        assert_eq!((c.get(0)[(0, 0)], c.get(1)[(0, 0)]), (5.0, 9.0));
    }

    #[test]
    fn smoothing_hand_computed() {
        // open 5-element line without periodic pairing of the middle
        let m = line(6, 5.0);
        let vals = [1.0, 1.0, 9.0, 1.0, 1.0];
        let f = MetricField::new(&m, vals.iter().map(|&v| SMat::diag([v])).collect()).unwrap();
        let s = smooth_metric(&f, &m, 1).unwrap();
        assert!((s.get(2)[(0, 0)] - 5.0).abs() < 1e-12);
        assert!((s.get(1)[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((s.get(3)[(0, 0)] - 3.0).abs() < 1e-12);
        assert_eq!(smooth_metric(&f, &m, 0).unwrap(), f);
        let c = MetricField::new(&m, vec![SMat::diag([2.5]); 5]).unwrap();
        assert_eq!(smooth_metric(&c, &m, 3).unwrap().tensors(), c.tensors());
    }

    #[test]
    fn dump_format() {
        let m = line(3, 1.0);
        let f = MetricField::identity(&m);
        assert_eq!(f.dump(), "0 1e0\n1 1e0\n");
    }
}
