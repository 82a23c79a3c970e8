//! Twin-experiment driver: truth generation, the forecast/analysis cycle on
//! adaptive member meshes, parameter sweeps and result files.

mod config;
mod output;
mod stats;

use std::any::Any;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

pub use config::{ExperimentConfig, Interpolation, LocalizationChoice, Problem};
pub use output::{write_comparison, write_runs, write_tuning};
pub use stats::{spearman, variance};

use crate::da::{
    analysis_rows, enkf_gc_update, etkf_update, inflate_rows, letkf_update, mt_radii, rmse, Ensemble, LocalizationScheme, ObservationSet,
    D_MIN_FLOOR,
};
use crate::error::{Error, Result};
use crate::interp::{dg_interpolate, linear_transfer, mass_tolerance};
use crate::linalg::{small, Point};
use crate::mesh::{equidistribution_quality, write_snapshot, BoxDomain, SimplicialMesh};
use crate::metric::{combine_metrics, intersect_ensemble, observation_metric_averaged, MeshMode, MetricField};
use crate::mmpde::{generate_common_mesh_with, remesh_member, transfer_metric, MeshTriple, MmpdeParams};
use crate::scalar::Real;
use crate::solver::{
    initial_condition, integrate, relative_drift, state_metric, BurgersProblem, DgState, InitialCondition, IntegrateReport,
    SolverParams,
};

/// Radius used for the near-observation and near-shock vertex counts.
pub const NEAR_RADIUS: f64 = 0.5;

/// Localization radius statistics for one cycle (MT only).
#[derive(Clone, Debug, PartialEq)]
pub struct RadiusStats {
    pub min: f64,
    pub max: f64,
    /// `L exp(-c / (2 d_min)) <= r_i <= L / sqrt(e)` for every vertex.
    pub bounds_ok: bool,
    /// Spearman correlation between local vertex spacing and radius.
    pub spacing_correlation: f64,
    pub median: f64,
    /// Median radius over vertices within [`NEAR_RADIUS`] of the shock (1D).
    pub shock_median: Option<f64>,
}

/// Diagnostics recorded at one observation time.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord {
    pub t: f64,
    pub rmse_forecast: f64,
    pub rmse_analysis: f64,
    pub spread_forecast: f64,
    pub spread_analysis: f64,
    pub common_min_volume: f64,
    /// Max/min equidistribution quality of the common mesh.
    pub equidistribution_ratio: f64,
    /// Common-mesh vertices within [`NEAR_RADIUS`] of each observation.
    pub near_obs: Vec<usize>,
    /// Truth shock position (1D) and vertices within [`NEAR_RADIUS`] of it.
    pub shock: Option<(f64, usize)>,
    pub radii: Option<RadiusStats>,
    /// Largest relative mass change over this cycle's state transfers.
    pub transfer_mass_drift: f64,
    pub remeshed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    Failed { cycle: usize, t: f64, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub cycles: Vec<CycleRecord>,
    pub status: RunStatus,
    pub min_member_volume: f64,
    pub max_energy_increase: f64,
    pub max_step_mass_drift: f64,
    /// Sum over solver steps and DG transfers of the relative mass changes.
    pub cumulative_mass_drift: f64,
    /// Snapshot texts `(cycle, common mesh, mean state)`.
    pub snapshots: Vec<(usize, String, String)>,
}

impl RunResult {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    fn window(&self, lo: f64, hi: f64) -> impl Iterator<Item = &CycleRecord> {
        self.cycles.iter().filter(move |c| c.t >= lo - 1e-9 && c.t <= hi + 1e-9)
    }

    fn window_mean(&self, lo: f64, hi: f64, f: impl Fn(&CycleRecord) -> f64) -> f64 {
        let v: Vec<f64> = self.window(lo, hi).map(f).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn mean_analysis(&self, lo: f64, hi: f64) -> f64 {
        self.window_mean(lo, hi, |c| c.rmse_analysis)
    }

    pub fn mean_forecast(&self, lo: f64, hi: f64) -> f64 {
        self.window_mean(lo, hi, |c| c.rmse_forecast)
    }

    pub fn mean_spread(&self, lo: f64, hi: f64) -> f64 {
        self.window_mean(lo, hi, |c| c.spread_analysis)
    }

    pub fn max_transfer_drift(&self) -> f64 {
        self.cycles.iter().map(|c| c.transfer_mass_drift).fold(0.0, f64::max)
    }
}

/// Windowed means over a set of runs; failed runs are counted, not averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub completed: usize,
    pub failed: usize,
    pub mean_forecast: f64,
    pub mean_analysis: f64,
    pub mean_spread: f64,
}

pub fn summarize(config: &ExperimentConfig, runs: &[RunResult]) -> Summary {
    let ok: Vec<&RunResult> = runs.iter().filter(|r| r.completed()).collect();
    let mean = |f: &dyn Fn(&RunResult) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    let (lo, hi) = (config.window_start, config.window_end);
    Summary {
        completed: ok.len(),
        failed: runs.len() - ok.len(),
        mean_forecast: mean(&|r| r.mean_forecast(lo, hi)),
        mean_analysis: mean(&|r| r.mean_analysis(lo, hi)),
        mean_spread: mean(&|r| r.mean_spread(lo, hi)),
    }
}

/// Base observation sites: a regular grid with cell-centred points,
/// perturbed uniformly by `perturbation` times the spacing.
pub fn observation_layout<T: Real, const D: usize>(
    domain: &BoxDomain<T, D>,
    count: usize,
    perturbation: T,
    rng: &mut ChaCha8Rng,
) -> Vec<Point<T, D>> {
    let per_axis = if D == 1 { count } else { (count as f64).powf(1.0 / D as f64).round() as usize };
    let unit = Uniform::new_inclusive(-1.0f64, 1.0).expect("valid range");
    let mut out = Vec::with_capacity(count);
    for idx in 0..per_axis.pow(D as u32) {
        let mut p = [T::zero(); D];
        let mut rest = idx;
        for (a, pa) in p.iter_mut().enumerate() {
            let i = rest % per_axis;
            rest /= per_axis;
            let spacing = domain.extent(a) / T::from_count(per_axis);
            let jitter = if perturbation > T::zero() { T::lit(unit.sample(rng)) * perturbation * spacing } else { T::zero() };
            *pa = domain.lo[a] + (T::from_count(i) + T::lit(0.5)) * spacing + jitter;
        }
        out.push(p);
    }
    out
}

/// Observation sites at time `t` for sites drifting with velocity `drift`
/// along every axis, wrapped into the periodic domain.
pub fn observation_sites<T: Real, const D: usize>(
    domain: &BoxDomain<T, D>,
    base: &[Point<T, D>],
    drift: T,
    t: T,
) -> Vec<Point<T, D>> {
    if drift == T::zero() {
        return base.to_vec();
    }
    base.iter()
        .map(|p| {
            let mut q = *p;
            for x in q.iter_mut() {
                *x += drift * t;
            }
            domain.wrap(&q)
        })
        .collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

fn normal<T: Real>(rng: &mut ChaCha8Rng, std: T) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z) * std
}

fn solver_params<T: Real>(c: &ExperimentConfig) -> SolverParams<T> {
    SolverParams { smoothing_sweeps: c.smoothing_sweeps, hessian_cap: T::lit(c.hessian_cap), ..SolverParams::default() }
}

fn mmpde_params<T: Real>(c: &ExperimentConfig) -> MmpdeParams<T> {
    MmpdeParams { tau: T::lit(c.tau), substeps: c.mesh_substeps, ..MmpdeParams::default() }
}

fn problem<T: Real, const D: usize>(c: &ExperimentConfig) -> Result<BurgersProblem<T, D>> {
    match (c.problem, D) {
        (Problem::Burgers1d, 1) | (Problem::Burgers2d, 2) => {}
        _ => return Err(Error::InvalidParameter(format!("{:?} is not a {D}D problem", c.problem))),
    }
    // the standard testbeds, built generically over D
    Ok(if D == 1 {
        BurgersProblem {
            domain: BoxDomain { lo: [T::zero(); D], hi: [T::lit(20.0); D] },
            initial: InitialCondition::SineWave { period: T::lit(20.0) },
        }
    } else {
        BurgersProblem {
            domain: BoxDomain { lo: [T::lit(-0.5); D], hi: [T::one(); D] },
            initial: InitialCondition::Gaussian { gamma: -T::lit(1e-16).ln() },
        }
    })
}

fn uniform_mesh<T: Real, const D: usize>(domain: BoxDomain<T, D>, n: usize) -> Result<SimplicialMesh<T, D>> {
    SimplicialMesh::uniform(domain, [n; D])
}

/// Fine-mesh reference solution at every observation time.
pub struct Truth<T: Real, const D: usize> {
    pub meshes: Vec<SimplicialMesh<T, D>>,
    pub states: Vec<DgState<T>>,
    pub report: IntegrateReport<T>,
}

impl<T: Real, const D: usize> Truth<T, D> {
    /// Continuous vertex values of the truth at cycle `n`, interpolated to `mesh`.
    pub fn values_on(&self, n: usize, mesh: &SimplicialMesh<T, D>) -> Result<Vec<T>> {
        let src = &self.meshes[n];
        crate::interp::linear_interpolate(&self.states[n].vertex_values(src), src, mesh)
    }

    pub fn evaluate(&self, n: usize, x: &Point<T, D>) -> Result<T> {
        let mesh = &self.meshes[n];
        self.states[n].evaluate(mesh, &mesh.domain().clamp(x))
    }

    /// Location of the steepest drop in the 1D truth.
    pub fn shock_position(&self, n: usize) -> Option<T> {
        if D != 1 {
            return None;
        }
        let mesh = &self.meshes[n];
        let v = self.states[n].vertex_values(mesh);
        let mut best = (T::zero(), T::zero());
        for k in 0..mesh.n_elements() {
            let e = mesh.element(k);
            let slope = (v[e[1]] - v[e[0]]) / mesh.volume(k);
            if slope < best.0 {
                best = (slope, mesh.centroid(k)[0]);
            }
        }
        Some(best.1)
    }
}

/// Integrates the truth on its own adaptive mesh, without model noise.
pub fn generate_truth<T: Real, const D: usize>(config: &ExperimentConfig) -> Result<Truth<T, D>> {
    let prob = problem::<T, D>(config)?;
    let mesh = uniform_mesh(prob.domain, config.truth_resolution)?;
    let mut state = initial_condition(&prob, &mesh);
    let mut triple = MeshTriple::new(mesh.clone());
    let sp = solver_params::<T>(config);
    let mp = mmpde_params::<T>(config);
    let mut report = IntegrateReport::default();
    let mut meshes = vec![mesh];
    let mut states = vec![state.clone()];
    for n in 1..=config.n_cycles() {
        let t1 = T::lit(config.obs_interval) * T::from_count(n);
        let (s, tr, rep) = integrate(&state, &triple, t1, &sp, &mp)?;
        report.merge(&rep);
        state = s;
        triple = tr;
        meshes.push(triple.physical().clone());
        states.push(state.clone());
    }
    Ok(Truth { meshes, states, report })
}

type CacheMap = HashMap<String, Arc<dyn Any + Send + Sync>>;

fn truth_cache() -> &'static Mutex<CacheMap> {
    static CACHE: OnceLock<Mutex<CacheMap>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// [`generate_truth`] memoised per process on the settings it depends on.
pub fn cached_truth<T: Real, const D: usize>(config: &ExperimentConfig) -> Result<Arc<Truth<T, D>>> {
    let key = format!(
        "{}|{D}|{:?}|{}|{}|{}|{}|{}|{}|{}",
        std::any::type_name::<T>(),
        config.problem,
        config.truth_resolution,
        config.t_end,
        config.obs_interval,
        config.tau,
        config.mesh_substeps,
        config.smoothing_sweeps,
        config.hessian_cap
    );
    if let Some(hit) = truth_cache().lock().expect("truth cache").get(&key) {
        if let Ok(t) = hit.clone().downcast::<Truth<T, D>>() {
            return Ok(t);
        }
    }
    let truth = Arc::new(generate_truth::<T, D>(config)?);
    truth_cache().lock().expect("truth cache").insert(key, truth.clone());
    Ok(truth)
}

struct Member<T: Real, const D: usize> {
    state: DgState<T>,
    triple: MeshTriple<T, D>,
}

fn ensemble_vertex_stats<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    ens: &Ensemble<T>,
    truth: &[T],
) -> Result<(f64, f64)> {
    let values: Vec<Vec<T>> =
        (0..ens.n_members()).map(|i| DgState::new(ens.member(i), T::zero()).vertex_values(mesh)).collect();
    let nv = mesh.n_vertices();
    let n = T::from_count(values.len());
    let mean: Vec<T> = (0..nv).map(|j| values.iter().map(|v| v[j]).sum::<T>() / n).collect();
    let var: T = (0..nv)
        .map(|j| values.iter().map(|v| (v[j] - mean[j]) * (v[j] - mean[j])).sum::<T>() / (n - T::one()))
        .sum::<T>()
        / T::from_count(nv);
    Ok((rmse(truth, &mean)?.to_f64_lossy(), var.sqrt().to_f64_lossy()))
}

fn transfer<T: Real, const D: usize>(
    how: Interpolation,
    state: &DgState<T>,
    from: &SimplicialMesh<T, D>,
    to: &SimplicialMesh<T, D>,
    drift: &mut f64,
) -> Result<DgState<T>> {
    let out = match how {
        Interpolation::Dg => dg_interpolate(state, from, to)?,
        Interpolation::Linear => linear_transfer(state, from, to)?,
    };
    let d = relative_drift(state.mass(from), out.mass(to), state.abs_mass(from)).to_f64_lossy();
    *drift = drift.max(d);
    Ok(out)
}

/// Moves the vertex nearest to each site onto it when the mesh stays valid.
fn pin_vertices<T: Real, const D: usize>(
    triple: MeshTriple<T, D>,
    sites: &[Point<T, D>],
) -> Result<MeshTriple<T, D>> {
    let mesh = triple.physical();
    let topo = mesh.topology();
    let mut v = mesh.vertices().to_vec();
    for s in sites {
        let j = (0..v.len())
            .filter(|&j| topo.boundary(j) == crate::mesh::Boundary::Interior)
            .min_by(|&a, &b| small::distance(&v[a], s).partial_cmp(&small::distance(&v[b], s)).expect("finite"));
        if let Some(j) = j {
            let old = v[j];
            v[j] = *s;
            if mesh.with_vertices(v.clone()).is_err() {
                v[j] = old;
            }
        }
    }
    MeshTriple::with_physical(triple.reference().clone(), mesh.with_vertices(v)?)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn radius_stats<T: Real, const D: usize>(
    mesh: &SimplicialMesh<T, D>,
    metric: &MetricField<T, D>,
    radii: &[T],
    l: f64,
    c: f64,
    shock: Option<f64>,
) -> RadiusStats {
    let d: Vec<f64> =
        (0..mesh.n_vertices()).map(|j| metric.vertex_tensor(mesh, j).det().to_f64_lossy().min(c)).collect();
    let dmin = d.iter().copied().fold(f64::INFINITY, f64::min).max(D_MIN_FLOOR);
    let lower = l * (-c / (2.0 * dmin)).exp();
    let upper = l / 1f64.exp().sqrt();
    let r: Vec<f64> = radii.iter().map(|x| x.to_f64_lossy()).collect();
    let tol = 1e-12 * l;
    let bounds_ok = r.iter().all(|&x| x >= lower - tol && x <= upper + tol);
    let spacing: Vec<f64> = (0..mesh.n_vertices())
        .map(|j| {
            let patch = mesh.topology().patch(j);
            patch.iter().map(|&(k, _)| mesh.diameter(k).to_f64_lossy()).sum::<f64>() / patch.len() as f64
        })
        .collect();
    let shock_median = shock.map(|s| {
        median(
            (0..mesh.n_vertices())
                .filter(|&j| (mesh.vertex(j)[0].to_f64_lossy() - s).abs() <= NEAR_RADIUS)
                .map(|j| r[j])
                .collect(),
        )
    });
    RadiusStats {
        min: r.iter().copied().fold(f64::INFINITY, f64::min),
        max: r.iter().copied().fold(0.0, f64::max),
        bounds_ok,
        spacing_correlation: spearman(&spacing, &r),
        median: median(r),
        shock_median,
    }
}

fn count_near<T: Real, const D: usize>(mesh: &SimplicialMesh<T, D>, p: &Point<T, D>) -> usize {
    mesh.vertices().iter().filter(|v| small::distance(v, p).to_f64_lossy() <= NEAR_RADIUS).count()
}

fn analysis<T: Real, const D: usize>(
    config: &ExperimentConfig,
    ens: &Ensemble<T>,
    obs: &ObservationSet<T, D>,
    mesh: &SimplicialMesh<T, D>,
    radii: Option<&[T]>,
) -> Result<Ensemble<T>> {
    // unobserved rows keep the forecast, so they are not inflated either
    let scheme = config.localization.map(T::lit);
    let rows = analysis_rows(obs, mesh, &scheme, radii)?;
    let ens = inflate_rows(ens, T::lit(config.inflation), &rows)?;
    match scheme {
        LocalizationScheme::Mt { .. } => letkf_update(&ens, obs, mesh, radii.expect("MT radii computed")),
        LocalizationScheme::FixedRadius { r } => letkf_update(&ens, obs, mesh, &vec![r; mesh.n_vertices()]),
        LocalizationScheme::None => etkf_update(&ens, obs),
        LocalizationScheme::GcMod { .. } | LocalizationScheme::GcObs { .. } => enkf_gc_update(&ens, obs, mesh, &scheme),
    }
}

/// One twin experiment with the given seed. Numerical failures end the run
/// and are reported in the status rather than as an error; configuration
/// problems are errors.
pub fn run_twin_experiment<T: Real, const D: usize>(config: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    config.validate()?;
    let prob = problem::<T, D>(config)?;
    let truth = cached_truth::<T, D>(config)?;
    let mut result = RunResult {
        seed,
        cycles: Vec::new(),
        status: RunStatus::Completed,
        min_member_volume: f64::INFINITY,
        max_energy_increase: 0.0,
        max_step_mass_drift: 0.0,
        cumulative_mass_drift: 0.0,
        snapshots: Vec::new(),
    };
    let mut cycle = 0;
    if let Err(e) = run_cycles(config, seed, &prob, &truth, &mut result, &mut cycle) {
        result.status =
            RunStatus::Failed { cycle, t: cycle as f64 * config.obs_interval, message: e.to_string() };
    }
    Ok(result)
}

fn run_cycles<T: Real, const D: usize>(
    config: &ExperimentConfig,
    seed: u64,
    prob: &BurgersProblem<T, D>,
    truth: &Truth<T, D>,
    result: &mut RunResult,
    cycle: &mut usize,
) -> Result<()> {
    let sp = solver_params::<T>(config);
    let mp = mmpde_params::<T>(config);
    let mut layout_rng = stream(seed, 1);
    let mut init_rng = stream(seed, 2);
    let mut obs_rng = stream(seed, 3);
    let mut noise_rng = stream(seed, 4);

    let base_sites = observation_layout(&prob.domain, config.obs_count, T::lit(config.obs_perturbation), &mut layout_rng);
    let reference = uniform_mesh(prob.domain, config.mesh_size)?;
    let init_std = T::lit(config.initial_cov.sqrt());
    let model_std = T::lit(config.model_noise.sqrt());
    let obs_std = T::lit(config.truth_obs_noise.sqrt());
    let mut members: Vec<Member<T, D>> = (0..config.ensemble_size)
        .map(|_| {
            let mut state = initial_condition(prob, &reference);
            for c in state.coeffs.iter_mut() {
                *c += normal(&mut init_rng, init_std);
            }
            Member { state, triple: MeshTriple::new(reference.clone()) }
        })
        .collect();
    let mut common = MeshTriple::new(reference.clone());
    let r_diag = vec![T::lit(config.obs_noise); config.obs_count];

    for n in 1..=config.n_cycles() {
        *cycle = n;
        let t = T::lit(config.obs_interval) * T::from_count(n);
        for m in members.iter_mut() {
            let (s, tr, rep) = integrate(&m.state, &m.triple, t, &sp, &mp)?;
            result.min_member_volume = result.min_member_volume.min(rep.min_volume.to_f64_lossy());
            result.max_energy_increase = result.max_energy_increase.max(rep.max_energy_increase.to_f64_lossy());
            result.max_step_mass_drift = result.max_step_mass_drift.max(rep.max_step_mass_drift.to_f64_lossy());
            result.cumulative_mass_drift += rep.total_mass_drift.to_f64_lossy();
            m.state = s;
            m.triple = tr;
        }

        // metrics on the previous common mesh
        let prev = common.physical().clone();
        let fields = members
            .iter()
            .map(|m| {
                let f = state_metric(m.triple.physical(), &m.state, &sp)?;
                transfer_metric(m.triple.physical(), &f, &prev)
            })
            .collect::<Result<Vec<_>>>()?;
        let mm = intersect_ensemble(&prev, &fields)?;
        let sites = observation_sites(&prob.domain, &base_sites, T::lit(config.obs_drift), t);
        // the observation part is evaluated afresh on every iterate
        let obs_resolution = reference.mean_diameter() * T::lit(0.25);
        let combined_on = |mesh: &SimplicialMesh<T, D>| {
            let m = transfer_metric(&prev, &mm, mesh)?;
            if config.mesh_mode == MeshMode::EnsembleOnly {
                return Ok(m);
            }
            let mo = observation_metric_averaged(mesh, &sites, &mm, obs_resolution)?;
            combine_metrics(mesh, config.mesh_mode, &m, &mo)
        };
        let (mut next, _) = generate_common_mesh_with(&common, &mp, combined_on)?;
        if config.fixed_obs_points {
            next = pin_vertices(next, &sites)?;
        }
        common = next;
        let cm = common.physical().clone();
        let mm_common = transfer_metric(&prev, &mm, &cm)?;
        let (radii, rstats) = match config.localization {
            LocalizationScheme::Mt { l, c } => {
                let r = mt_radii(&cm, &mm_common, T::lit(l), T::lit(c));
                let shock = truth.shock_position(n).map(|s| s.to_f64_lossy());
                let st = radius_stats(&cm, &mm_common, &r, l, c, shock);
                (Some(r), Some(st))
            }
            _ => (None, None),
        };

        let mut drift = 0.0;
        let forecast = members
            .iter()
            .map(|m| transfer(config.interpolation, &m.state, m.triple.physical(), &cm, &mut drift).map(|s| s.coeffs))
            .collect::<Result<Vec<_>>>()?;
        let forecast = Ensemble::from_members(&forecast)?;
        let truth_v = truth.values_on(n, &cm)?;
        let (rmse_f, spread_f) = ensemble_vertex_stats(&cm, &forecast, &truth_v)?;

        let y = sites
            .iter()
            .map(|s| Ok(truth.evaluate(n, s)? + normal(&mut obs_rng, obs_std)))
            .collect::<Result<Vec<T>>>()?;
        let obs = ObservationSet::new(&cm, sites.clone(), y, r_diag.clone())?;
        let analysed = analysis(config, &forecast, &obs, &cm, radii.as_deref())?;
        let (rmse_a, spread_a) = ensemble_vertex_stats(&cm, &analysed, &truth_v)?;
        if !rmse_a.is_finite() {
            return Err(Error::NonFinite("analysis"));
        }

        let mut remeshed = 0;
        for (i, m) in members.iter_mut().enumerate() {
            let f = DgState::new(forecast.member(i), t);
            let a = DgState::new(analysed.member(i), t);
            let back = transfer(config.interpolation, &a, &cm, m.triple.physical(), &mut drift)?;
            let inc = DgState::new(a.coeffs.iter().zip(&f.coeffs).map(|(x, y)| *x - *y).collect(), t);
            let rel = inc.l2_norm(&cm) / f.l2_norm(&cm).max(T::min_positive_value());
            m.state = back;
            if config.remesh_threshold > 0.0 && rel > T::lit(config.remesh_threshold) {
                let (s, tr) = remesh_member(&m.state, &m.triple, &sp, &mp)?;
                let scale = m.state.abs_mass(m.triple.physical());
                let d = relative_drift(m.state.mass(m.triple.physical()), s.mass(tr.physical()), scale);
                drift = drift.max(d.to_f64_lossy());
                m.state = s;
                m.triple = tr;
                remeshed += 1;
            }
            for c in m.state.coeffs.iter_mut() {
                *c += normal(&mut noise_rng, model_std);
            }
        }
        if config.interpolation == Interpolation::Dg {
            if drift > mass_tolerance::<T>().to_f64_lossy() {
                return Err(Error::MassDrift { drift });
            }
            result.cumulative_mass_drift += drift;
        }

        let eq = equidistribution_quality(&cm, combined_on(&cm)?.tensors())?;
        let eq_ratio = eq.iter().map(|v| v.to_f64_lossy()).fold(0.0, f64::max)
            / eq.iter().map(|v| v.to_f64_lossy()).fold(f64::INFINITY, f64::min);
        let shock = truth.shock_position(n).map(|s| {
            let near = cm.vertices().iter().filter(|v| (v[0] - s).abs().to_f64_lossy() <= NEAR_RADIUS).count();
            (s.to_f64_lossy(), near)
        });
        result.cycles.push(CycleRecord {
            t: t.to_f64_lossy(),
            rmse_forecast: rmse_f,
            rmse_analysis: rmse_a,
            spread_forecast: spread_f,
            spread_analysis: spread_a,
            common_min_volume: cm.min_volume().to_f64_lossy(),
            equidistribution_ratio: eq_ratio,
            near_obs: sites.iter().map(|s| count_near(&cm, s)).collect(),
            shock,
            radii: rstats,
            transfer_mass_drift: drift,
            remeshed,
        });
        if config.snapshot_every > 0 && n % config.snapshot_every == 0 {
            let mean: Vec<T> = analysed.mean().iter().copied().collect();
            result.snapshots.push((n, write_snapshot(&cm), DgState::new(mean, t).snapshot::<D>()));
        }
    }
    Ok(())
}

/// `config.run_count` runs with seeds `config.seed, config.seed + 1, ...`.
pub fn run_experiment<T: Real, const D: usize>(config: &ExperimentConfig) -> Result<Vec<RunResult>> {
    (0..config.run_count as u64).map(|i| run_twin_experiment::<T, D>(config, config.seed.wrapping_add(i))).collect()
}

/// Dispatches [`run_experiment`] on the configured dimension with `f64`.
pub fn run_config(config: &ExperimentConfig) -> Result<Vec<RunResult>> {
    match config.problem {
        Problem::Burgers1d => run_experiment::<f64, 1>(config),
        Problem::Burgers2d => run_experiment::<f64, 2>(config),
    }
}

/// One cell of a tuning table.
#[derive(Clone, Debug, PartialEq)]
pub struct TuneCell {
    pub inflation: f64,
    pub length: f64,
    pub summary: Summary,
}

/// Mean windowed analysis RMSE over an inflation x localization-length grid.
pub fn tune_grid(config: &ExperimentConfig, inflations: &[f64], lengths: &[f64]) -> Result<Vec<TuneCell>> {
    if inflations.is_empty() || lengths.is_empty() {
        return Err(Error::Empty("tuning grid"));
    }
    let mut out = Vec::new();
    for &rho in inflations {
        for &len in lengths {
            let mut c = config.clone();
            c.inflation = rho;
            c.localization = c.localization.with_length(len);
            let runs = run_config(&c)?;
            out.push(TuneCell { inflation: rho, length: len, summary: summarize(&c, &runs) });
        }
    }
    Ok(out)
}

/// Labelled variants of a configuration run side by side.
pub fn compare(variants: &[(String, ExperimentConfig)]) -> Result<Vec<(String, Vec<RunResult>)>> {
    variants.iter().map(|(label, c)| Ok((label.clone(), run_config(c)?))).collect()
}

/// Variants for each comparison subcommand.
pub fn variants(config: &ExperimentConfig, kind: &str) -> Result<Vec<(String, ExperimentConfig)>> {
    let with = |label: String, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = config.clone();
        f(&mut c);
        (label, c)
    };
    let out = match kind {
        "compare-loc" => config
            .compare_localization
            .iter()
            .map(|ch| {
                let label = match ch.localization {
                    LocalizationScheme::Mt { .. } => "mt",
                    LocalizationScheme::GcMod { .. } => "gc-mod",
                    LocalizationScheme::GcObs { .. } => "gc-obs",
                    LocalizationScheme::FixedRadius { .. } => "fixed-radius",
                    LocalizationScheme::None => "none",
                };
                with(label.to_string(), &|c| {
                    c.localization = ch.localization;
                    c.inflation = ch.inflation;
                })
            })
            .collect(),
        "compare-mesh" => [MeshMode::EnsembleOnly, MeshMode::ObservationOnly, MeshMode::Intersect]
            .into_iter()
            .map(|m| with(mode_label(m).to_string(), &|c| c.mesh_mode = m))
            .collect(),
        "sweep-cov" => config
            .sweep_cov
            .iter()
            .map(|&v| {
                with(format!("cov={v}"), &|c| {
                    c.model_noise = v;
                    c.obs_noise = v;
                    c.initial_cov = v;
                    c.truth_obs_noise = v;
                })
            })
            .collect(),
        "noisy-data" => config
            .noisy_truth_noise
            .iter()
            .map(|&v| with(format!("truth_obs_noise={v}"), &|c| c.truth_obs_noise = v))
            .collect(),
        "compare-interp" => [Interpolation::Dg, Interpolation::Linear]
            .into_iter()
            .map(|i| {
                let label = if i == Interpolation::Dg { "dg" } else { "linear" };
                with(label.to_string(), &|c| c.interpolation = i)
            })
            .collect(),
        other => return Err(Error::InvalidParameter(format!("unknown comparison {other}"))),
    };
    Ok(out)
}

fn mode_label(m: MeshMode) -> &'static str {
    match m {
        MeshMode::EnsembleOnly => "ensemble-only",
        MeshMode::ObservationOnly => "observation-only",
        MeshMode::Intersect => "intersect",
    }
}
