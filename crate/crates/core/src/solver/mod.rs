//! Quasi-Lagrangian moving-mesh P1-DG solver for inviscid Burgers.

mod limiter;
pub(crate) mod rhs;

use std::fmt::Write as _;

pub use limiter::Limiter;
pub use rhs::Flux;

use crate::error::{Error, Result};
use crate::linalg::{small, Point};
use crate::mesh::{BoxDomain, SimplicialMesh};
use crate::metric::{hessian_metric, smooth_metric, MetricField};
use crate::mmpde::{move_mesh, MeshTriple, MmpdeParams};
use crate::scalar::Real;

/// Element-local P1 coefficients: the nodal values at each element's
/// vertices, `d + 1` per element in local vertex order.
#[derive(Clone, Debug, PartialEq)]
pub struct DgState<T> {
    pub coeffs: Vec<T>,
    pub time: T,
}

impl<T: Real> DgState<T> {
    pub fn new(coeffs: Vec<T>, time: T) -> Self {
        DgState { coeffs, time }
    }

    pub fn constant<const D: usize>(mesh: &SimplicialMesh<T, D>, value: T) -> Self {
        DgState { coeffs: vec![value; mesh.n_elements() * (D + 1)], time: T::zero() }
    }

    #[inline]
    pub fn element<const D: usize>(&self, k: usize) -> &[T] {
        &self.coeffs[k * (D + 1)..(k + 1) * (D + 1)]
    }

    /// `int u dx`.
    pub fn mass<const D: usize>(&self, mesh: &SimplicialMesh<T, D>) -> T {
        (0..mesh.n_elements()).map(|k| mesh.volume(k) * element_mean::<T, D>(self.element::<D>(k))).sum()
    }

    /// `int |u| dx` evaluated on element means; a scale for relative mass errors.
    pub fn abs_mass<const D: usize>(&self, mesh: &SimplicialMesh<T, D>) -> T {
        (0..mesh.n_elements()).map(|k| mesh.volume(k) * element_mean::<T, D>(self.element::<D>(k)).abs()).sum()
    }

    pub fn l2_norm<const D: usize>(&self, mesh: &SimplicialMesh<T, D>) -> T {
        let rule = rhs::volume_rule::<T, D>();
        (0..mesh.n_elements())
            .map(|k| {
                let u = self.element::<D>(k);
                let vol = mesh.volume(k);
                rule.iter()
                    .map(|(lam, w)| {
                        let v: T = (0..=D).map(|i| lam[i] * u[i]).sum();
                        *w * vol * v * v
                    })
                    .sum::<T>()
            })
            .sum::<T>()
            .sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.coeffs.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Value of the local polynomial at `x`; on shared faces the element
    /// returned by [`SimplicialMesh::locate_point`] is used.
    pub fn evaluate<const D: usize>(&self, mesh: &SimplicialMesh<T, D>, x: &Point<T, D>) -> Result<T> {
        let (k, b) = mesh.locate_point(x)?;
        Ok(self.element::<D>(k).iter().zip(&b).map(|(u, l)| *u * *l).sum())
    }

    /// Volume-weighted average of the element limits at each vertex,
    /// periodic images merged.
    pub fn vertex_values<const D: usize>(&self, mesh: &SimplicialMesh<T, D>) -> Vec<T> {
        let topo = mesh.topology();
        let volumes = mesh.volumes();
        (0..mesh.n_vertices())
            .map(|j| {
                let mut acc = T::zero();
                let mut w = T::zero();
                for &img in topo.periodic_images(j) {
                    for &(k, l) in topo.patch(img) {
                        acc += volumes[k] * self.coeffs[k * (D + 1) + l];
                        w += volumes[k];
                    }
                }
                acc / w
            })
            .collect()
    }

    /// Continuous P1 state with the given vertex values.
    pub fn from_vertex_values<const D: usize>(mesh: &SimplicialMesh<T, D>, values: &[T], time: T) -> Self {
        let coeffs = (0..mesh.n_elements()).flat_map(|k| mesh.element(k).iter().map(|&v| values[v])).collect();
        DgState { coeffs, time }
    }

    /// Snapshot text: one line per element, the element id then its coefficients.
    pub fn snapshot<const D: usize>(&self) -> String {
        let mut s = String::new();
        for (k, c) in self.coeffs.chunks(D + 1).enumerate() {
            let _ = write!(s, "{k}");
            for v in c {
                let _ = write!(s, " {:e}", v.to_f64_lossy());
            }
            s.push('\n');
        }
        s
    }
}

#[inline]
fn element_mean<T: Real, const D: usize>(u: &[T]) -> T {
    u.iter().copied().sum::<T>() / T::from_count(D + 1)
}

/// Initial conditions of the two testbeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialCondition<T> {
    /// `1/2 + sin(2 pi x / S)` with period `S`.
    SineWave { period: T },
    /// `exp(-gamma |x|^2)`.
    Gaussian { gamma: T },
    Constant(T),
}

impl<T: Real> InitialCondition<T> {
    pub fn value<const D: usize>(&self, x: &Point<T, D>) -> T {
        match *self {
            InitialCondition::SineWave { period } => T::lit(0.5) + (T::lit(2.0) * T::PI() * x[0] / period).sin(),
            InitialCondition::Gaussian { gamma } => (-gamma * small::dot(x, x)).exp(),
            InitialCondition::Constant(c) => c,
        }
    }
}

/// Periodic inviscid Burgers problem `u_t + div(u^2/2 (1,..,1)) = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BurgersProblem<T, const D: usize> {
    pub domain: BoxDomain<T, D>,
    pub initial: InitialCondition<T>,
}

impl<T: Real> BurgersProblem<T, 1> {
    /// `x in [0, 20)`, `u0 = 1/2 + sin(2 pi x / 20)`.
    pub fn standard_1d() -> Self {
        BurgersProblem {
            domain: BoxDomain { lo: [T::zero()], hi: [T::lit(20.0)] },
            initial: InitialCondition::SineWave { period: T::lit(20.0) },
        }
    }
}

impl<T: Real> BurgersProblem<T, 2> {
    /// `(-0.5, 1)^2`, `u0 = exp(-gamma (x^2 + y^2))`, `gamma = -ln(1e-16)`.
    pub fn standard_2d() -> Self {
        BurgersProblem {
            domain: BoxDomain { lo: [T::lit(-0.5); 2], hi: [T::one(); 2] },
            initial: InitialCondition::Gaussian { gamma: -T::lit(1e-16).ln() },
        }
    }
}

/// L2 projection of the initial condition onto element-local P1.
pub fn initial_condition<T: Real, const D: usize>(
    problem: &BurgersProblem<T, D>,
    mesh: &SimplicialMesh<T, D>,
) -> DgState<T> {
    project(mesh, |x| problem.initial.value(x))
}

/// Element-wise L2 projection of a function onto P1.
pub fn project<T: Real, const D: usize>(mesh: &SimplicialMesh<T, D>, f: impl Fn(&Point<T, D>) -> T) -> DgState<T> {
    let rule = rhs::volume_rule::<T, D>();
    let stride = D + 1;
    let mut coeffs = vec![T::zero(); mesh.n_elements() * stride];
    for k in 0..mesh.n_elements() {
        let e = mesh.element(k);
        let vol = mesh.volume(k);
        let z = &mut coeffs[k * stride..(k + 1) * stride];
        for (lam, w) in &rule {
            let mut x = [T::zero(); D];
            for i in 0..stride {
                x = small::add(&x, &small::scale(mesh.vertex(e[i]), lam[i]));
            }
            let fx = f(&x);
            for i in 0..stride {
                z[i] += *w * vol * fx * lam[i];
            }
        }
        rhs::apply_inverse_mass(z, vol);
    }
    DgState { coeffs, time: T::zero() }
}

/// Time-stepping settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverParams<T> {
    pub cfl: T,
    pub limiter: Limiter<T>,
    pub smoothing_sweeps: usize,
    /// Clip for the eigenvalues of `|H| / alpha` in the Hessian metric.
    pub hessian_cap: T,
    /// Largest vertex displacement per step as a fraction of the smallest
    /// element height; larger mesh moves are relaxed towards the old mesh.
    pub max_move: T,
    /// Freeze the mesh (fixed-mesh DG).
    pub static_mesh: bool,
}

impl<T: Real> Default for SolverParams<T> {
    fn default() -> Self {
        SolverParams {
            cfl: T::lit(0.3),
            limiter: Limiter::default(),
            smoothing_sweeps: 2,
            hessian_cap: T::lit(1000.0),
            max_move: T::lit(0.1),
            static_mesh: false,
        }
    }
}

fn min_height<T: Real, const D: usize>(mesh: &SimplicialMesh<T, D>) -> T {
    (0..mesh.n_elements()).map(|k| mesh.min_height(k)).fold(T::infinity(), T::min)
}

/// Largest stable step `cfl * min h_K / (sqrt(d) |u|_max + |xdot|_max)`.
pub fn cfl_limit<T: Real, const D: usize>(mesh: &SimplicialMesh<T, D>, umax: T, mesh_speed: T, cfl: T) -> T {
    let speed = T::from_count(D).sqrt() * umax + mesh_speed;
    if speed <= T::zero() {
        return T::infinity();
    }
    cfl * min_height(mesh) / speed
}

/// Advances `state` by `dt` while the mesh moves linearly from `from` to `to`.
pub fn step<T: Real, const D: usize>(
    state: &DgState<T>,
    from: &SimplicialMesh<T, D>,
    to: &SimplicialMesh<T, D>,
    dt: T,
    params: &SolverParams<T>,
) -> Result<DgState<T>> {
    if !from.same_connectivity(to) {
        return Err(Error::InvalidParameter("step meshes differ in connectivity".into()));
    }
    let speed = from
        .vertices()
        .iter()
        .zip(to.vertices())
        .map(|(a, b)| small::distance(a, b))
        .fold(T::zero(), T::max)
        / dt;
    let limit = cfl_limit(from, state.max_abs(), speed, params.cfl).min(cfl_limit(to, state.max_abs(), speed, params.cfl));
    if dt > limit * (T::one() + T::lit(1e-9)) {
        return Err(Error::CflViolation { dt: dt.to_f64_lossy(), limit: limit.to_f64_lossy() });
    }
    let coeffs = rhs::ssp_rk3(from.topology(), from.vertices(), to.vertices(), &state.coeffs, dt, Flux::Burgers, &params.limiter)?;
    Ok(DgState { coeffs, time: state.time + dt })
}

/// Per-run diagnostics from [`integrate`].
#[derive(Clone, Debug, PartialEq)]
pub struct IntegrateReport<T> {
    pub steps: usize,
    pub min_volume: T,
    /// Largest relative energy increase over all mesh substeps.
    pub max_energy_increase: T,
    /// Largest per-step relative mass change.
    pub max_step_mass_drift: T,
    /// Sum of the per-step relative mass changes.
    pub total_mass_drift: T,
}

impl<T: Real> Default for IntegrateReport<T> {
    fn default() -> Self {
        IntegrateReport {
            steps: 0,
            min_volume: T::infinity(),
            max_energy_increase: T::zero(),
            max_step_mass_drift: T::zero(),
            total_mass_drift: T::zero(),
        }
    }
}

impl<T: Real> IntegrateReport<T> {
    pub fn merge(&mut self, other: &IntegrateReport<T>) {
        self.steps += other.steps;
        self.min_volume = self.min_volume.min(other.min_volume);
        self.max_energy_increase = self.max_energy_increase.max(other.max_energy_increase);
        self.max_step_mass_drift = self.max_step_mass_drift.max(other.max_step_mass_drift);
        self.total_mass_drift += other.total_mass_drift;
    }
}

pub(crate) fn relative_drift<T: Real>(before: T, after: T, scale: T) -> T {
    (after - before).abs() / scale.max(before.abs()).max(T::min_positive_value())
}

/// The smoothed Hessian metric of `state` on `mesh`.
pub fn state_metric<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    state: &DgState<T>,
    params: &SolverParams<T>,
) -> Result<MetricField<T, D>> {
    smooth_metric(&hessian_metric(mesh, &state.coeffs, params.hessian_cap)?, mesh, params.smoothing_sweeps)
}

/// Moves a fraction `theta` of the way from `from` to `to`, halving
/// `theta` until the blended mesh is valid.
pub(crate) fn relax_towards<T: Real, const D: usize>(
    from: &SimplicialMesh<T, D>,
    to: &SimplicialMesh<T, D>,
    mut theta: T,
) -> Result<SimplicialMesh<T, D>> {
    loop {
        let v = from
            .vertices()
            .iter()
            .zip(to.vertices())
            .map(|(a, b)| {
                let mut p = *a;
                for i in 0..D {
                    p[i] = a[i] + theta * (b[i] - a[i]);
                }
                p
            })
            .collect();
        match from.with_vertices(v) {
            Ok(m) => return Ok(m),
            Err(e) if theta < T::lit(1e-6) => return Err(e),
            Err(_) => theta = theta * T::lit(0.5),
        }
    }
}

/// Integrates from `state.time` to `t1`, alternating metric evaluation,
/// one mesh move and one PDE step on the moving mesh.
pub fn integrate<T: Real, const D: usize>(
    state: &DgState<T>,
    triple: &MeshTriple<T, D>,
    t1: T,
    params: &SolverParams<T>,
    mmpde: &MmpdeParams<T>,
) -> Result<(DgState<T>, MeshTriple<T, D>, IntegrateReport<T>)> {
    let mut report: IntegrateReport<T> = IntegrateReport::default();
    let mut state = state.clone();
    let mut triple = triple.clone();
    let eps = T::lit(1e-12) * t1.abs().max(T::one());
    let mut mesh_speed = T::zero();
    while state.time < t1 - eps {
        let mesh = triple.physical().clone();
        let umax = state.max_abs();
        let mut dt = cfl_limit(&mesh, umax, mesh_speed, params.cfl).min(t1 - state.time);
        let (next, energy_rise) = if params.static_mesh {
            (triple.clone(), T::zero())
        } else {
            let metric = state_metric(&mesh, &state, params)?;
            let (mut next, rep) = move_mesh(&triple, &metric, mmpde, dt)?;
            let h = min_height(&mesh);
            let budget = params.max_move * h;
            if rep.max_displacement > budget {
                let relaxed = relax_towards(&mesh, next.physical(), budget / rep.max_displacement)?;
                next = MeshTriple::with_physical(triple.reference().clone(), relaxed)?;
            }
            let disp = mesh
                .vertices()
                .iter()
                .zip(next.physical().vertices())
                .map(|(a, b)| small::distance(a, b))
                .fold(T::zero(), T::max);
            // the move is (nearly) independent of dt, so shrink dt to fit it
            let umax_speed = T::from_count(D).sqrt() * umax;
            let h_both = h.min(min_height(next.physical()));
            let room = params.cfl * h_both - disp;
            if room > T::zero() && umax_speed > T::zero() {
                dt = dt.min(room / umax_speed);
            } else if room <= T::zero() {
                return Err(Error::CflViolation { dt: dt.to_f64_lossy(), limit: 0.0 });
            }
            mesh_speed = disp / dt;
            (next, rep.max_energy_increase())
        };
        let before = state.mass(&mesh);
        let scale = state.abs_mass(&mesh);
        let stepped = step(&state, &mesh, next.physical(), dt, params)?;
        let after = stepped.mass(next.physical());
        let drift = relative_drift(before, after, scale);
        report.max_step_mass_drift = report.max_step_mass_drift.max(drift);
        report.total_mass_drift += drift;
        report.max_energy_increase = report.max_energy_increase.max(energy_rise);
        report.min_volume = report.min_volume.min(next.physical().min_volume());
        report.steps += 1;
        state = stepped;
        triple = next;
    }
    state.time = t1.max(state.time);
    Ok((state, triple, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, len: f64) -> SimplicialMesh<f64, 1> {
        SimplicialMesh::uniform(BoxDomain::new([0.0], [len]).unwrap(), [n]).unwrap()
    }

    #[test]
    fn projection_of_constants_and_linears_is_exact() {
        let m = line(6, 2.0);
        let s = project(&m, |x| 0.5 + 3.0 * x[0]);
        for k in 0..5 {
            for (i, &v) in m.element(k).iter().enumerate() {
                assert!((s.coeffs[2 * k + i] - (0.5 + 3.0 * m.vertex(v)[0])).abs() < 1e-12);
            }
        }
        let p = BurgersProblem::<f64, 2>::standard_2d();
        assert_eq!(p.initial.value(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn free_stream_on_moving_mesh() {
        let sq: SimplicialMesh<f64, 2> =
            SimplicialMesh::uniform(BoxDomain::new([0.0, 0.0], [1.0, 1.0]).unwrap(), [6, 6]).unwrap();
        let mut v = sq.vertices().to_vec();
        for (j, p) in v.iter_mut().enumerate() {
            if sq.topology().boundary(j) == crate::mesh::Boundary::Interior {
                p[0] += 0.003 * (7.0 * p[1]).sin();
                p[1] += 0.002 * (5.0 * p[0]).cos();
            }
        }
        let to = sq.with_vertices(v).unwrap();
        let s = DgState::constant(&sq, 0.7);
        let out = step(&s, &sq, &to, 0.01, &SolverParams::default()).unwrap();
        assert!(out.coeffs.iter().all(|c| (c - 0.7).abs() < 1e-12));
    }

    #[test]
    fn evaluate_matches_barycentric_expansion() {
        let m = line(5, 1.0);
        let s = DgState::new(vec![1.0, 2.0, 5.0, 3.0, 0.0, 1.0, 4.0, 4.0], 0.0);
        assert!((s.evaluate(&m, &[0.125]).unwrap() - 1.5).abs() < 1e-12);
        // vertex shared by elements 0 and 1 -> element 0
        assert!((s.evaluate(&m, &[0.25]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(s.snapshot::<1>().lines().next().unwrap(), "0 1e0 2e0");
    }

    #[test]
    fn zero_length_integration_is_identity() {
        let m = line(11, 20.0);
        let p = BurgersProblem::<f64, 1>::standard_1d();
        let s = initial_condition(&p, &m);
        let t = MeshTriple::new(m);
        let (out, _, rep) = integrate(&s, &t, 0.0, &SolverParams::default(), &MmpdeParams::default()).unwrap();
        assert_eq!(out, s);
        assert_eq!(rep.steps, 0);
    }

    #[test]
    fn cfl_violation_reported() {
        let m = line(11, 1.0);
        let s = DgState::constant(&m, 1.0);
        assert!(matches!(step(&s, &m, &m, 1.0, &SolverParams::default()), Err(Error::CflViolation { .. })));
    }
}
