//! Ensemble filters on the common mesh: global ETKF, LETKF with per-vertex
//! radii, and the gain-form EnKF with Gaspari-Cohn localization in model
//! or observation space.
//!
//! The state vector is the full DG coefficient vector; each coefficient is
//! positioned at its element vertex for localization distances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dense::{cholesky, cholesky_solve, sym_eigen};
use crate::linalg::{small, Point};
use crate::mesh::{Bary, SimplicialMesh};
use crate::metric::MetricField;
use crate::scalar::Real;

/// Ensemble members as the columns of a `dim x n_members` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble<T: Real> {
    members: DMatrix<T>,
}

impl<T: Real> Ensemble<T> {
    pub fn new(members: DMatrix<T>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::InvalidParameter(format!("ensemble needs at least 2 members, got {}", members.ncols())));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ensemble"));
        }
        Ok(Ensemble { members })
    }

    pub fn from_members(members: &[Vec<T>]) -> Result<Self> {
        let dim = members.first().map_or(0, Vec::len);
        if let Some(m) = members.iter().find(|m| m.len() != dim) {
            return Err(Error::LengthMismatch { expected: dim, got: m.len() });
        }
        Self::new(DMatrix::from_fn(dim, members.len(), |r, c| members[c][r]))
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.members
    }

    pub fn member(&self, i: usize) -> Vec<T> {
        self.members.column(i).iter().copied().collect()
    }

    pub fn n_members(&self) -> usize {
        self.members.ncols()
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn mean(&self) -> DVector<T> {
        let inv = T::one() / T::from_count(self.n_members());
        DVector::from_iterator(self.dim(), self.members.row_iter().map(|r| r.iter().copied().sum::<T>() * inv))
    }

    /// `X = (u_i - mean) / sqrt(N - 1)`.
    pub fn perturbations(&self) -> DMatrix<T> {
        let m = self.mean();
        let s = T::one() / T::from_count(self.n_members() - 1).sqrt();
        DMatrix::from_fn(self.dim(), self.n_members(), |r, c| (self.members[(r, c)] - m[r]) * s)
    }

    /// Square root of the mean sample variance over state components.
    pub fn spread(&self) -> T {
        let x = self.perturbations();
        (x.iter().map(|v| *v * *v).sum::<T>() / T::from_count(self.dim().max(1))).sqrt()
    }

    fn from_mean_and_perturbations(mean: &DVector<T>, x: &DMatrix<T>) -> Result<Self> {
        let s = T::from_count(x.ncols() - 1).sqrt();
        Self::new(DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| mean[r] + s * x[(r, c)]))
    }
}

/// Point observations of the DG state. Row `j` of `H` holds the barycentric
/// weights of observation `j` on the coefficients of the containing element.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet<T: Real, const D: usize> {
    locations: Vec<Point<T, D>>,
    values: DVector<T>,
    r_diag: Vec<T>,
    rows: Vec<(usize, Bary<T>)>,
}

impl<T: Real, const D: usize> ObservationSet<T, D> {
    pub fn new(mesh: &SimplicialMesh<T, D>, locations: Vec<Point<T, D>>, values: Vec<T>, r_diag: Vec<T>) -> Result<Self> {
        if values.len() != locations.len() {
            return Err(Error::LengthMismatch { expected: locations.len(), got: values.len() });
        }
        if r_diag.len() != locations.len() {
            return Err(Error::LengthMismatch { expected: locations.len(), got: r_diag.len() });
        }
        if let Some(r) = r_diag.iter().find(|r| !(**r > T::zero())) {
            return Err(Error::InvalidParameter(format!("observation variance must be positive, got {r}")));
        }
        let rows = Self::locate(mesh, &locations)?;
        Ok(ObservationSet { locations, values: DVector::from_vec(values), r_diag, rows })
    }

    fn locate(mesh: &SimplicialMesh<T, D>, locations: &[Point<T, D>]) -> Result<Vec<(usize, Bary<T>)>> {
        locations.iter().map(|p| mesh.locate_from(0, &mesh.domain().clamp(p))).collect()
    }

    /// `H u` for a DG coefficient vector on the mesh the set was built on.
    pub fn observe(&self, u: &[T]) -> DVector<T> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|(k, b)| (0..=D).map(|i| b[i] * u[k * (D + 1) + i]).sum::<T>()),
        )
    }

    /// Dense `H` with `dim` columns.
    pub fn h_matrix(&self, dim: usize) -> DMatrix<T> {
        let mut h = DMatrix::zeros(self.rows.len(), dim);
        for (j, (k, b)) in self.rows.iter().enumerate() {
            for i in 0..=D {
                h[(j, k * (D + 1) + i)] = b[i];
            }
        }
        h
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Point<T, D>] {
        &self.locations
    }

    pub fn values(&self) -> &DVector<T> {
        &self.values
    }

    pub fn r_diag(&self) -> &[T] {
        &self.r_diag
    }

    fn apply_ensemble(&self, m: &DMatrix<T>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.rows.len(), m.ncols());
        for c in 0..m.ncols() {
            let col: Vec<T> = m.column(c).iter().copied().collect();
            out.set_column(c, &self.observe(&col));
        }
        out
    }

    fn subset(&self, idx: &[usize]) -> Self {
        ObservationSet {
            locations: idx.iter().map(|&j| self.locations[j]).collect(),
            values: DVector::from_iterator(idx.len(), idx.iter().map(|&j| self.values[j])),
            r_diag: idx.iter().map(|&j| self.r_diag[j]).collect(),
            rows: idx.iter().map(|&j| self.rows[j]).collect(),
        }
    }
}

/// Localization settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LocalizationScheme<T> {
    /// Metric-tensor radii `L exp(-d_i / (2 d_min))` with `d_i = min(det M, c)`.
    Mt { l: T, c: T },
    GcMod { l: T },
    GcObs { l: T },
    FixedRadius { r: T },
    None,
}

impl<T: Real> LocalizationScheme<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LocalizationScheme::Mt { l, c } => l > T::zero() && c > T::zero(),
            LocalizationScheme::GcMod { l } | LocalizationScheme::GcObs { l } => l > T::zero(),
            LocalizationScheme::FixedRadius { r } => r > T::zero(),
            LocalizationScheme::None => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("localization parameters must be positive: {self:?}")))
        }
    }

    /// Copy with the length parameter replaced (used by tuning grids).
    pub fn with_length(self, len: T) -> Self {
        match self {
            LocalizationScheme::Mt { c, .. } => LocalizationScheme::Mt { l: len, c },
            LocalizationScheme::GcMod { .. } => LocalizationScheme::GcMod { l: len },
            LocalizationScheme::GcObs { .. } => LocalizationScheme::GcObs { l: len },
            LocalizationScheme::FixedRadius { .. } => LocalizationScheme::FixedRadius { r: len },
            LocalizationScheme::None => LocalizationScheme::None,
        }
    }

    /// The same scheme with every parameter passed through `f`.
    pub fn map<U>(self, f: impl Fn(T) -> U) -> LocalizationScheme<U> {
        match self {
            LocalizationScheme::Mt { l, c } => LocalizationScheme::Mt { l: f(l), c: f(c) },
            LocalizationScheme::GcMod { l } => LocalizationScheme::GcMod { l: f(l) },
            LocalizationScheme::GcObs { l } => LocalizationScheme::GcObs { l: f(l) },
            LocalizationScheme::FixedRadius { r } => LocalizationScheme::FixedRadius { r: f(r) },
            LocalizationScheme::None => LocalizationScheme::None,
        }
    }
}

/// Gaspari-Cohn fifth-order piecewise rational correlation, support `[0, 2]`.
pub fn gaspari_cohn<T: Real>(r: T) -> T {
    let r = r.abs();
    let l = T::lit;
    if r <= T::one() {
        let r2 = r * r;
        let r3 = r2 * r;
        ((-l(0.25) * r + l(0.5)) * r + l(0.625)) * r3 - l(5.0 / 3.0) * r2 + T::one()
    } else if r < l(2.0) {
        let r2 = r * r;
        let r3 = r2 * r;
        let r4 = r3 * r;
        let r5 = r4 * r;
        l(1.0 / 12.0) * r5 - l(0.5) * r4 + l(0.625) * r3 + l(5.0 / 3.0) * r2 - l(5.0) * r + l(4.0) - l(2.0 / 3.0) / r
    } else {
        T::zero()
    }
}

/// Floor for `d_min` in [`mt_radii`].
pub const D_MIN_FLOOR: f64 = 1e-12;

/// Per-vertex radii `r_i = L exp(-d_i / (2 d_min))`, `d_i = min(det M(x_i), c)`,
/// with `M(x_i)` the volume-weighted patch average of `metric`.
pub fn mt_radii<T: Real, const D: usize>(mesh: &SimplicialMesh<T, D>, metric: &MetricField<T, D>, l: T, c: T) -> Vec<T> {
    let d: Vec<T> = (0..mesh.n_vertices()).map(|j| metric.vertex_tensor(mesh, j).det().min(c)).collect();
    let dmin = d.iter().copied().fold(T::infinity(), T::min).max(T::lit(D_MIN_FLOOR));
    d.iter().map(|&di| l * (-di / (T::lit(2.0) * dmin)).exp()).collect()
}

/// Multiplicative inflation of the perturbations about the mean.
pub fn inflate<T: Real>(ens: &Ensemble<T>, rho: T) -> Result<Ensemble<T>> {
    if !(rho >= T::one()) {
        return Err(Error::InvalidParameter(format!("inflation factor must be >= 1, got {rho}")));
    }
    if rho == T::one() {
        return Ok(ens.clone());
    }
    let m = ens.mean();
    let e = ens.matrix();
    Ensemble::new(DMatrix::from_fn(e.nrows(), e.ncols(), |r, c| m[r] + rho * (e[(r, c)] - m[r])))
}

/// Multiplicative inflation restricted to the rows with `mask[row]` set.
pub fn inflate_rows<T: Real>(ens: &Ensemble<T>, rho: T, mask: &[bool]) -> Result<Ensemble<T>> {
    if mask.len() != ens.dim() {
        return Err(Error::LengthMismatch { expected: ens.dim(), got: mask.len() });
    }
    if !(rho >= T::one()) {
        return Err(Error::InvalidParameter(format!("inflation factor must be >= 1, got {rho}")));
    }
    let m = ens.mean();
    let mut e = ens.matrix().clone();
    for (r, _) in mask.iter().enumerate().filter(|(_, on)| **on) {
        for c in 0..e.ncols() {
            e[(r, c)] = m[r] + rho * (e[(r, c)] - m[r]);
        }
    }
    Ensemble::new(e)
}

/// Rows of the state that an analysis with `scheme` can change: those
/// within reach of at least one observation. `radii` holds the per-vertex
/// radii of domain-localized schemes.
pub fn analysis_rows<T: Real, const D: usize>(
    obs: &ObservationSet<T, D>,
    mesh: &SimplicialMesh<T, D>,
    scheme: &LocalizationScheme<T>,
    radii: Option<&[T]>,
) -> Result<Vec<bool>> {
    let pos = coefficient_positions(mesh);
    let near = |p: &Point<T, D>, q: &Point<T, D>, r: T| small::distance(p, q) <= r;
    let two = T::lit(2.0);
    Ok(match *scheme {
        LocalizationScheme::None => vec![true; pos.len()],
        LocalizationScheme::Mt { .. } | LocalizationScheme::FixedRadius { .. } => {
            let radii: Vec<T> = match (scheme, radii) {
                (LocalizationScheme::FixedRadius { r }, _) => vec![*r; mesh.n_vertices()],
                (_, Some(r)) if r.len() == mesh.n_vertices() => r.to_vec(),
                _ => return Err(Error::InvalidParameter("domain localization needs one radius per vertex".into())),
            };
            let mut rows = vec![false; pos.len()];
            for k in 0..mesh.n_elements() {
                for (l, &v) in mesh.element(k).iter().enumerate() {
                    rows[k * (D + 1) + l] = obs.locations().iter().any(|o| near(mesh.vertex(v), o, radii[v]));
                }
            }
            rows
        }
        LocalizationScheme::GcObs { l } => {
            pos.iter().map(|p| obs.locations().iter().any(|o| near(p, o, two * l))).collect()
        }
        LocalizationScheme::GcMod { l } => {
            // support of H: the vertices of each observed element
            let support: Vec<Point<T, D>> =
                obs.rows.iter().flat_map(|(k, _)| mesh.element(*k).iter().map(|&v| *mesh.vertex(v))).collect();
            pos.iter().map(|p| support.iter().any(|q| near(p, q, two * l))).collect()
        }
    })
}

/// ETKF weights in ensemble space: mean weights `T C d` and the symmetric
/// square root of `T = (I + Y^T R^-1 Y)^-1`, with `Y = H X`.
struct Transform<T: Real> {
    w_mean: DVector<T>,
    t_sqrt: DMatrix<T>,
}

fn transform<T: Real>(y: &DMatrix<T>, r_diag: &[T], innovation: &DVector<T>) -> Result<Transform<T>> {
    let n = y.ncols();
    let mut c = y.transpose();
    for (j, r) in r_diag.iter().enumerate() {
        let inv = T::one() / *r;
        for i in 0..n {
            c[(i, j)] *= inv;
        }
    }
    let a = DMatrix::identity(n, n) + &c * y;
    let (vals, vecs) = sym_eigen(&a);
    let min = vals.iter().copied().fold(T::infinity(), T::min);
    if !(min > T::zero()) {
        return Err(Error::NonSpdTransform { eigenvalue: min.to_f64_lossy() });
    }
    let floor = T::lit(1e-12);
    let t_vals: Vec<T> = vals.iter().map(|&l| (T::one() / l).max(floor)).collect();
    let scaled = |f: &dyn Fn(T) -> T| {
        let mut m = vecs.clone();
        for (col, &tv) in t_vals.iter().enumerate() {
            let s = f(tv);
            for r in 0..n {
                m[(r, col)] *= s;
            }
        }
        &m * vecs.transpose()
    };
    let t = scaled(&|v| v);
    let t_sqrt = scaled(&|v| v.sqrt());
    let w_mean = t * (c * innovation);
    Ok(Transform { w_mean, t_sqrt })
}

/// Global ETKF with the symmetric square-root transform.
pub fn etkf_update<T: Real, const D: usize>(ens: &Ensemble<T>, obs: &ObservationSet<T, D>) -> Result<Ensemble<T>> {
    if obs.is_empty() {
        return Ok(ens.clone());
    }
    let mean = ens.mean();
    let x = ens.perturbations();
    let y = obs.apply_ensemble(&x);
    let mean_slice: Vec<T> = mean.iter().copied().collect();
    let d = obs.values() - obs.observe(&mean_slice);
    let tr = transform(&y, obs.r_diag(), &d)?;
    let mean_a = &mean + &x * &tr.w_mean;
    let x_a = &x * &tr.t_sqrt;
    Ensemble::from_mean_and_perturbations(&mean_a, &x_a)
}

/// Physical position attached to each DG coefficient (its element vertex).
pub fn coefficient_positions<T: Real, const D: usize>(mesh: &SimplicialMesh<T, D>) -> Vec<Point<T, D>> {
    (0..mesh.n_elements()).flat_map(|k| mesh.element(k).iter().map(|&v| *mesh.vertex(v))).collect()
}

/// LETKF: every vertex assimilates the observations within its radius and
/// applies the local weights to the coefficients it owns.
pub fn letkf_update<T: Real, const D: usize>(
    ens: &Ensemble<T>,
    obs: &ObservationSet<T, D>,
    mesh: &SimplicialMesh<T, D>,
    radii: &[T],
) -> Result<Ensemble<T>> {
    if radii.len() != mesh.n_vertices() {
        return Err(Error::LengthMismatch { expected: mesh.n_vertices(), got: radii.len() });
    }
    if ens.dim() != mesh.n_elements() * (D + 1) {
        return Err(Error::LengthMismatch { expected: mesh.n_elements() * (D + 1), got: ens.dim() });
    }
    let mean = ens.mean();
    let x = ens.perturbations();
    let y = obs.apply_ensemble(&x);
    let mean_slice: Vec<T> = mean.iter().copied().collect();
    let d = obs.values() - obs.observe(&mean_slice);
    let scale = T::from_count(ens.n_members() - 1).sqrt();
    let mut out = ens.matrix().clone();
    let topo = mesh.topology();
    let mut cache: Vec<(Vec<usize>, Transform<T>)> = Vec::new();
    for (j, &r) in radii.iter().enumerate() {
        let p = mesh.vertex(j);
        let sel: Vec<usize> =
            (0..obs.len()).filter(|&o| small::distance(p, &obs.locations()[o]) <= r).collect();
        if sel.is_empty() {
            continue;
        }
        let pos = match cache.iter().position(|(s, _)| *s == sel) {
            Some(i) => i,
            None => {
                let sub = obs.subset(&sel);
                let ys = DMatrix::from_fn(sel.len(), y.ncols(), |a, b| y[(sel[a], b)]);
                let ds = DVector::from_iterator(sel.len(), sel.iter().map(|&o| d[o]));
                cache.push((sel, transform(&ys, sub.r_diag(), &ds)?));
                cache.len() - 1
            }
        };
        let tr = &cache[pos].1;
        for &(k, l) in topo.patch(j) {
            let row = k * (D + 1) + l;
            let xr = x.row(row);
            let m = mean[row] + (xr * &tr.w_mean)[(0, 0)];
            let xa = xr * &tr.t_sqrt;
            for c in 0..out.ncols() {
                out[(row, c)] = m + scale * xa[c];
            }
        }
    }
    Ensemble::new(out)
}

/// Deterministic gain-form update `u_i + K (y - H u_i)` with a
/// Gaspari-Cohn localized gain.
///
/// Model space: `K = (rho o P) H^T (H (rho o P) H^T + R)^-1`.
/// Observation space: `K = rho1 o (P H^T) (rho2 o (H P H^T) + R)^-1`.
pub fn enkf_gc_update<T: Real, const D: usize>(
    ens: &Ensemble<T>,
    obs: &ObservationSet<T, D>,
    mesh: &SimplicialMesh<T, D>,
    scheme: &LocalizationScheme<T>,
) -> Result<Ensemble<T>> {
    let pos = coefficient_positions(mesh);
    if pos.len() != ens.dim() {
        return Err(Error::LengthMismatch { expected: pos.len(), got: ens.dim() });
    }
    let x = ens.perturbations();
    let h = obs.h_matrix(ens.dim());
    let corr = |a: &Point<T, D>, b: &Point<T, D>, l: T| gaspari_cohn(small::distance(a, b) / l);
    let (pht, s) = match *scheme {
        LocalizationScheme::GcMod { l } => {
            let mut p = &x * x.transpose();
            for i in 0..p.nrows() {
                for j in 0..p.ncols() {
                    p[(i, j)] *= corr(&pos[i], &pos[j], l);
                }
            }
            let pht = &p * h.transpose();
            let s = &h * &pht;
            (pht, s)
        }
        LocalizationScheme::GcObs { l } => {
            let hx = &h * &x;
            let mut pht = &x * hx.transpose();
            for i in 0..pht.nrows() {
                for j in 0..pht.ncols() {
                    pht[(i, j)] *= corr(&pos[i], &obs.locations()[j], l);
                }
            }
            let mut s = &hx * hx.transpose();
            for i in 0..s.nrows() {
                for j in 0..s.ncols() {
                    s[(i, j)] *= corr(&obs.locations()[i], &obs.locations()[j], l);
                }
            }
            (pht, s)
        }
        LocalizationScheme::None => {
            let hx = &h * &x;
            (&x * hx.transpose(), &hx * hx.transpose())
        }
        _ => return Err(Error::InvalidParameter(format!("not a gain-form scheme: {scheme:?}"))),
    };
    gain_update(ens, obs, &h, &pht, s)
}

fn gain_update<T: Real, const D: usize>(
    ens: &Ensemble<T>,
    obs: &ObservationSet<T, D>,
    h: &DMatrix<T>,
    pht: &DMatrix<T>,
    mut s: DMatrix<T>,
) -> Result<Ensemble<T>> {
    for (j, r) in obs.r_diag().iter().enumerate() {
        s[(j, j)] += *r;
    }
    let chol = cholesky(&s).ok_or(Error::SingularInnovation)?;
    let innov = DMatrix::from_fn(obs.len(), ens.n_members(), |j, _| obs.values()[j]) - h * ens.matrix();
    let w = cholesky_solve(&chol, &innov);
    Ensemble::new(ens.matrix() + pht * w)
}

/// `||truth - mean||_2 / sqrt(M)`.
pub fn rmse<T: Real>(truth: &[T], mean: &[T]) -> Result<T> {
    if truth.len() != mean.len() {
        return Err(Error::LengthMismatch { expected: truth.len(), got: mean.len() });
    }
    if truth.is_empty() {
        return Err(Error::Empty("rmse input"));
    }
    let s: T = truth.iter().zip(mean).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
    Ok((s / T::from_count(truth.len())).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoxDomain;

    #[test]
    fn gaspari_cohn_branches() {
        assert_eq!(gaspari_cohn(0.0), 1.0);
        assert!(gaspari_cohn(2.0f64).abs() < 1e-14);
        assert_eq!(gaspari_cohn(2.5f64), 0.0);
        assert!((gaspari_cohn(1.0f64) - 5.0 / 24.0).abs() < 1e-14);
        assert!((gaspari_cohn(1.0f64 + 1e-12) - 5.0 / 24.0).abs() < 1e-10);
    }

    #[test]
    fn inflation_scales_covariance() {
        let e = Ensemble::<f64>::from_members(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.0]]).unwrap();
        let f = inflate(&e, 1.1).unwrap();
        let (p, q) = (e.perturbations(), f.perturbations());
        let (pp, qq) = (&p * p.transpose(), &q * q.transpose());
        for (a, b) in pp.iter().zip(qq.iter()) {
            assert!((b - 1.21 * a).abs() < 1e-12);
        }
        assert!((e.mean() - f.mean()).amax() < 1e-14);
    }

    #[test]
    fn mt_radii_uniform_metric() {
        let m: SimplicialMesh<f64, 1> = SimplicialMesh::uniform(BoxDomain::new([0.0], [1.0]).unwrap(), [6]).unwrap();
        let r = mt_radii(&m, &MetricField::identity(&m), 2.0, 8.0);
        assert!(r.iter().all(|v| (v - 2.0 * (-0.5f64).exp()).abs() < 1e-14));
    }

    #[test]
    fn rmse_offsets() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse::<f64>(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }
}
