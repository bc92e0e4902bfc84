//! Ensemble verification metrics, spectral and physical-consistency
//! diagnostics, and exact linear-Gaussian oracles.

mod ensemble;
mod kalman;
mod metrics;
mod physical;
mod psd;

pub use ensemble::{Ensemble, EnsembleError};
pub use kalman::{joint_moments, kalman_smoother, KalmanError, Lgssm, OracleResult, StepObservation};
pub use metrics::{crps, metric_table, skill, spread, spread_skill_ratio, MetricRow, MetricsError};
pub use physical::{
    altitude_from_geopotential, altitude_from_pressure_temperature, balanced_wind_from_geopotential,
    geostrophic_diagnostics, GeostrophicDiagnostics, PhysicalError, EARTH_RADIUS_M,
    GRAVITY_M_S2, MOLAR_MASS_AIR_KG_MOL, UNIVERSAL_GAS_CONSTANT,
};
pub use psd::{psd2d, PsdError, PsdSummary};
