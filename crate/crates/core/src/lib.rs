//! Closed-end sequential monitoring for mean shifts in high-dimensional data streams.
//!
//! The library monitors a stream `X_1, X_2, ...` of p-dimensional observations
//! after a change-free training block `X_1..X_n`, using U-statistic scans that
//! target the L_2 norm (dense shifts) and L_q norms for even `q` (sparser
//! shifts) of the mean change. Critical values come from Monte Carlo draws of
//! the pivotal Gaussian limit processes.
//!
//! Modules, bottom up:
//!
//! * [`streamcore`]: observations, configuration, CUSUM prefix sums.
//! * [`l2stat`] / [`lqstat`]: the recursive scan statistics and brute-force references.
//! * [`sigma_norm`]: training-block estimators of `||Sigma||_F^2` and `||Sigma||_q^q`.
//! * [`limitlaw`]: boundary functions, limit-process simulation, critical-value tables.
//! * [`adaptive`]: the online monitor with the combined multi-q decision rule.
//! * [`simharness`]: synthetic AR(1) scenarios and size/power/delay experiments.

pub mod adaptive;
pub mod error;
pub mod l2stat;
pub mod limitlaw;
pub mod lqstat;
pub mod sigma_norm;
pub mod simharness;
pub mod streamcore;

pub use adaptive::{adjusted_alpha, AlarmEvent, Decision, Monitor, Thresholds};
pub use error::{Error, Result};
pub use l2stat::{g_stat, g_stat_bruteforce, t2_stat, L2Scan};
pub use limitlaw::{BoundaryKind, CriticalValueTable, GridSpec, TableKey};
pub use lqstat::{LqScan, ProductSumTables};
pub use sigma_norm::{EstimatorMethod, NormEstimates};
pub use simharness::{ExperimentReport, ScenarioSpec};
pub use streamcore::{CusumState, MonitorConfig, Observation};
