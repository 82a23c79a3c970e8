pub mod error;
pub mod linalg;
pub mod mesh;
pub mod scalar;
pub mod metric;
pub mod mmpde;
pub mod solver;
pub mod interp;
pub mod da;
pub mod harness;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mesh1 = mesh::SimplicialMesh<f64, 1>;
pub type Mesh2 = mesh::SimplicialMesh<f64, 2>;
pub type Metric1 = metric::MetricField<f64, 1>;
pub type Metric2 = metric::MetricField<f64, 2>;
pub type State = solver::DgState<f64>;
pub type Ens = da::Ensemble<f64>;
pub type Obs1 = da::ObservationSet<f64, 1>;
pub type Obs2 = da::ObservationSet<f64, 2>;
pub type Localization = da::LocalizationScheme<f64>;
