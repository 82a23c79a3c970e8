//! Experiment configuration, read from flat TOML key-value files.

use serde::{Deserialize, Serialize};

use crate::da::LocalizationScheme;
use crate::error::{Error, Result};
use crate::metric::MeshMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    #[serde(rename = "burgers-1d")]
    Burgers1d,
    #[serde(rename = "burgers-2d")]
    Burgers2d,
}

/// How members travel between their own meshes and the common mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    Dg,
    Linear,
}

/// Every knob of a twin experiment. Covariances are scalar multiples of
/// the identity and are given as variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    /// Vertices per axis of member and common meshes.
    pub mesh_size: usize,
    pub ensemble_size: usize,
    pub obs_count: usize,
    /// Uniform perturbation of the observation grid, as a fraction of its spacing.
    pub obs_perturbation: f64,
    /// Observation drift velocity (same along every axis); zero for fixed sites.
    pub obs_drift: f64,
    pub obs_interval: f64,
    pub model_noise: f64,
    pub obs_noise: f64,
    pub initial_cov: f64,
    /// Variance actually used to perturb synthetic observations.
    pub truth_obs_noise: f64,
    pub inflation: f64,
    pub localization: LocalizationScheme<f64>,
    pub mesh_mode: MeshMode,
    pub interpolation: Interpolation,
    /// Pin the nearest common-mesh vertex onto each observation site.
    pub fixed_obs_points: bool,
    pub tau: f64,
    pub mesh_substeps: usize,
    pub smoothing_sweeps: usize,
    pub hessian_cap: f64,
    /// Remesh a member when its relative analysis increment exceeds this.
    pub remesh_threshold: f64,
    pub t_end: f64,
    pub window_start: f64,
    pub window_end: f64,
    pub run_count: usize,
    pub seed: u64,
    /// Vertices per axis of the truth mesh.
    pub truth_resolution: usize,
    /// Write common-mesh and mean-state snapshots every this many cycles (0: never).
    pub snapshot_every: usize,
    pub tune_inflation: Vec<f64>,
    pub tune_length: Vec<f64>,
    pub sweep_cov: Vec<f64>,
    /// `truth_obs_noise` values for the noisy-data sweep.
    pub noisy_truth_noise: Vec<f64>,
    /// Localization schemes (with their inflation) for `compare-loc`.
    pub compare_localization: Vec<LocalizationChoice>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationChoice {
    pub localization: LocalizationScheme<f64>,
    pub inflation: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::baseline(Problem::Burgers1d)
    }
}

impl ExperimentConfig {
    /// Tuned MT set-up for either test problem.
    pub fn baseline(problem: Problem) -> Self {
        let one_d = problem == Problem::Burgers1d;
        let choice = |localization, inflation| LocalizationChoice { localization, inflation };
        ExperimentConfig {
            problem,
            mesh_size: if one_d { 50 } else { 15 },
            ensemble_size: 5,
            obs_count: if one_d { 5 } else { 16 },
            obs_perturbation: 0.1,
            obs_drift: 0.0,
            obs_interval: 0.5,
            model_noise: 0.01,
            obs_noise: 0.01,
            initial_cov: 0.01,
            truth_obs_noise: 0.01,
            inflation: 1.1,
            localization: LocalizationScheme::Mt { l: 1.0, c: 8.0 },
            mesh_mode: MeshMode::Intersect,
            interpolation: Interpolation::Dg,
            fixed_obs_points: false,
            tau: 0.1,
            mesh_substeps: 5,
            smoothing_sweeps: 2,
            hessian_cap: 1000.0,
            remesh_threshold: 0.1,
            t_end: if one_d { 100.0 } else { 50.0 },
            window_start: if one_d { 25.0 } else { 15.0 },
            window_end: if one_d { 100.0 } else { 50.0 },
            run_count: 10,
            seed: 0,
            truth_resolution: if one_d { 100 } else { 31 },
            snapshot_every: 0,
            tune_inflation: if one_d { vec![1.0, 1.1, 1.2, 1.5] } else { vec![1.0, 1.05, 1.1] },
            tune_length: if one_d { vec![0.5, 1.0, 2.0, 5.0, 10.0] } else { vec![0.5, 1.0] },
            sweep_cov: vec![0.001, 0.01, 0.1],
            noisy_truth_noise: vec![0.01, 1.0, 100.0],
            compare_localization: if one_d {
                vec![
                    choice(LocalizationScheme::Mt { l: 1.0, c: 8.0 }, 1.1),
                    choice(LocalizationScheme::GcMod { l: 0.5 }, 1.1),
                    choice(LocalizationScheme::GcObs { l: 0.5 }, 1.0),
                ]
            } else {
                vec![
                    choice(LocalizationScheme::Mt { l: 1.0, c: 8.0 }, 1.1),
                    choice(LocalizationScheme::GcMod { l: 0.5 }, 1.0),
                    choice(LocalizationScheme::GcObs { l: 1.0 }, 1.1),
                ]
            },
        }
    }

    /// Parses a TOML file. Keys that are absent take the baseline value
    /// for the file's `problem` (1D when unspecified).
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let problem = match table.get("problem") {
            Some(v) => Problem::deserialize(v.clone()).map_err(|e| Error::Parse(format!("problem: {e}")))?,
            None => Problem::Burgers1d,
        };
        let base = toml::Table::try_from(Self::baseline(problem)).map_err(|e| Error::Parse(e.to_string()))?;
        let mut merged = base;
        for (k, v) in table {
            merged.insert(k, v);
        }
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        match self.problem {
            Problem::Burgers1d => 1,
            Problem::Burgers2d => 2,
        }
    }

    pub fn n_cycles(&self) -> usize {
        (self.t_end / self.obs_interval + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.mesh_size < 3 {
            return bad(format!("mesh_size must be at least 3, got {}", self.mesh_size));
        }
        if self.truth_resolution < 3 {
            return bad(format!("truth_resolution must be at least 3, got {}", self.truth_resolution));
        }
        if self.ensemble_size < 2 {
            return bad(format!("ensemble_size must be at least 2, got {}", self.ensemble_size));
        }
        if self.obs_count == 0 {
            return bad("obs_count must be positive".into());
        }
        if self.dim() == 2 {
            let s = (self.obs_count as f64).sqrt().round() as usize;
            if s * s != self.obs_count {
                return bad(format!("2D obs_count must be a perfect square, got {}", self.obs_count));
            }
        }
        if !(self.obs_noise > 0.0) {
            return bad(format!("obs_noise must be positive, got {}", self.obs_noise));
        }
        for (name, v) in [
            ("model_noise", self.model_noise),
            ("initial_cov", self.initial_cov),
            ("truth_obs_noise", self.truth_obs_noise),
            ("obs_perturbation", self.obs_perturbation),
            ("remesh_threshold", self.remesh_threshold),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.obs_interval > 0.0) || !(self.t_end >= self.obs_interval) {
            return bad(format!("need 0 < obs_interval <= t_end, got {} and {}", self.obs_interval, self.t_end));
        }
        if !(self.window_start <= self.window_end) {
            return bad("window_start must not exceed window_end".into());
        }
        if !(self.inflation >= 1.0) {
            return bad(format!("inflation must be >= 1, got {}", self.inflation));
        }
        if !(self.tau > 0.0) || self.mesh_substeps == 0 || !(self.hessian_cap > 0.0) {
            return bad("tau, mesh_substeps and hessian_cap must be positive".into());
        }
        if self.run_count == 0 {
            return bad("run_count must be at least 1".into());
        }
        self.localization.validate()?;
        for c in &self.compare_localization {
            c.localization.validate()?;
        }
        Ok(())
    }
}
