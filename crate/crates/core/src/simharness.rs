//! Synthetic scenarios and the size / power / detection-delay experiment driver.
//!
//! Each replication draws `floor(nT)` Gaussian vectors with AR(1) cross-sectional
//! covariance `Sigma_ij = rho^|i-j|`, optionally shifted by
//! `sqrt(delta / r) (1_r, 0_{p-r})` from the change time onward, and runs one
//! fresh monitor on them.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{Monitor, Thresholds, L2_LIMIT_SCALE};
use crate::error::{Error, Result};
use crate::l2stat::t2_stat;
use crate::limitlaw::{boundary_w, replication_rng, BoundaryKind};
use crate::lqstat::ProductSumTables;
use crate::sigma_norm::NormEstimates;
use crate::streamcore::{horizon_len, CusumState, MonitorConfig};

/// Largest tolerated share of replications lost to Phase-I failures.
pub const MAX_PHASE_ONE_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub p: usize,
    pub horizon: f64,
    pub rho: f64,
    pub delta: f64,
    pub r_sparsity: usize,
    /// First shifted time index, or `None` under the null.
    pub k_star: Option<usize>,
    pub reps: usize,
    pub alpha: f64,
    pub boundary: BoundaryKind,
    pub q_set: Vec<u32>,
    pub seed: u64,
    /// Incomplete-estimator tuple count; `None` means `50 n`.
    #[serde(default)]
    pub samples: Option<usize>,
}

impl ScenarioSpec {
    /// No-change scenario with the usual defaults (`T = 2`, `alpha = 0.1`, T1, `q` in {2, 6}).
    pub fn null(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            horizon: 2.0,
            rho: 0.0,
            delta: 0.0,
            r_sparsity: 1,
            k_star: None,
            reps: 500,
            alpha: 0.1,
            boundary: BoundaryKind::T1,
            q_set: vec![2, 6],
            seed: 1,
            samples: None,
        }
    }

    /// Shift of total energy `delta` on the first `r` coordinates at `floor(1.25 n) + 1`.
    pub fn with_shift(mut self, delta: f64, r: usize) -> Self {
        self.delta = delta;
        self.r_sparsity = r;
        self.k_star = Some((1.25 * self.n as f64).floor() as usize + 1);
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_q_set(mut self, q_set: &[u32]) -> Self {
        let mut q = q_set.to_vec();
        q.sort_unstable();
        q.dedup();
        self.q_set = q;
        self
    }

    pub fn with_boundary(mut self, boundary: BoundaryKind) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn monitor_config(&self) -> MonitorConfig {
        MonitorConfig::new(self.n, self.p)
            .with_q_set(&self.q_set)
            .with_horizon(self.horizon)
            .with_alpha(self.alpha)
            .with_boundary(self.boundary)
            .with_seed(self.seed)
    }

    pub fn horizon_len(&self) -> usize {
        horizon_len(self.n, self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        self.monitor_config().validate()?;
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho = {} must lie in [0, 1)", self.rho)));
        }
        if self.r_sparsity < 1 || self.r_sparsity > self.p {
            return Err(Error::Config(format!("r = {} must lie in [1, p]", self.r_sparsity)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta = {} must be finite and >= 0", self.delta)));
        }
        if let Some(k) = self.k_star {
            if k <= self.n || k > self.horizon_len() {
                return Err(Error::Config(format!(
                    "change time {k} must lie in ({}, {}]",
                    self.n,
                    self.horizon_len()
                )));
            }
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        Ok(())
    }

    // Data and monitor randomness come from disjoint stream families.
    fn data_seed(&self) -> u64 {
        self.seed
    }

    fn monitor_seed(&self, rep: u64) -> u64 {
        self.seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ rep.wrapping_add(0x9E37_79B9_7F4A_7C15)
    }
}

/// The `floor(nT)` observations of replication `rep`.
pub fn gen_stream(spec: &ScenarioSpec, rep: u64) -> Vec<Vec<f64>> {
    let mut rng = replication_rng(spec.data_seed(), rep);
    let innov = (1.0 - spec.rho * spec.rho).sqrt();
    let shift = if spec.r_sparsity > 0 { (spec.delta / spec.r_sparsity as f64).sqrt() } else { 0.0 };
    (1..=spec.horizon_len())
        .map(|t| {
            let mut row = Vec::with_capacity(spec.p);
            let mut prev = 0.0;
            for j in 0..spec.p {
                let e: f64 = StandardNormal.sample(&mut rng);
                let z = if j == 0 { e } else { spec.rho * prev + innov * e };
                prev = z;
                row.push(z);
            }
            if spec.k_star.is_some_and(|k| t >= k) {
                row.iter_mut().take(spec.r_sparsity).for_each(|v| *v += shift);
            }
            row
        })
        .collect()
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: u64,
    pub phase_one_failed: bool,
    pub k_alarm: Option<usize>,
    pub triggered_q: Vec<u32>,
    pub m_hat: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QBreakdown {
    pub q: u32,
    /// Replications in which this `q` was among the triggering statistics.
    pub triggers: usize,
    pub trigger_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ScenarioSpec,
    pub thresholds: Thresholds,
    pub completed: usize,
    pub phase_one_failures: usize,
    /// Share of completed replications that alarmed anywhere in `(n, nT]`.
    pub reject_rate: f64,
    /// Mean `k_alarm - k*` over alarms at or after `k*`.
    pub adt: Option<f64>,
    pub early_alarms: usize,
    /// Median `|m_hat - k*|` over detecting replications.
    pub median_location_error: Option<f64>,
    pub per_q: Vec<QBreakdown>,
}

/// Runs one replication end to end.
pub fn run_replication(spec: &ScenarioSpec, thresholds: &Thresholds, rep: u64) -> Result<RepOutcome> {
    let data = gen_stream(spec, rep);
    let config = spec.monitor_config().with_seed(spec.monitor_seed(rep));
    let mut monitor = Monitor::new(config, thresholds.clone())?;
    match monitor.train(&data[..spec.n], spec.samples) {
        Ok(_) => {}
        Err(Error::PhaseOne(msg)) => {
            log::debug!("replication {rep}: phase-I failure: {msg}");
            return Ok(RepOutcome { rep, phase_one_failed: true, k_alarm: None, triggered_q: vec![], m_hat: None });
        }
        Err(e) => return Err(e),
    }
    let alarm = monitor.run(&data[spec.n..])?;
    Ok(RepOutcome {
        rep,
        phase_one_failed: false,
        k_alarm: alarm.as_ref().map(|a| a.k_alarm),
        triggered_q: alarm.as_ref().map(|a| a.triggered_q.clone()).unwrap_or_default(),
        m_hat: alarm.map(|a| a.m_hat),
    })
}

/// Runs `spec.reps` independent replications in parallel and summarizes them.
pub fn run_experiment(spec: &ScenarioSpec, thresholds: &Thresholds) -> Result<ExperimentReport> {
    spec.validate()?;
    let outcomes: Vec<RepOutcome> = (0..spec.reps as u64)
        .into_par_iter()
        .map(|rep| run_replication(spec, thresholds, rep))
        .collect::<Result<_>>()?;
    summarize(spec, thresholds, &outcomes)
}

pub fn summarize(spec: &ScenarioSpec, thresholds: &Thresholds, outcomes: &[RepOutcome]) -> Result<ExperimentReport> {
    let failures = outcomes.iter().filter(|o| o.phase_one_failed).count();
    if failures as f64 >= MAX_PHASE_ONE_FAILURE_RATE * outcomes.len() as f64 && failures > 0 {
        return Err(Error::Experiment(format!(
            "{failures} of {} replications failed Phase-I estimation",
            outcomes.len()
        )));
    }
    let done: Vec<&RepOutcome> = outcomes.iter().filter(|o| !o.phase_one_failed).collect();
    let completed = done.len();
    let alarms = done.iter().filter(|o| o.k_alarm.is_some()).count();
    let (mut delays, mut loc_err, mut early) = (Vec::new(), Vec::new(), 0);
    if let Some(k_star) = spec.k_star {
        for o in &done {
            if let Some(k) = o.k_alarm {
                if k >= k_star {
                    delays.push((k - k_star) as f64);
                    if let Some(m) = o.m_hat {
                        loc_err.push((m as f64 - k_star as f64).abs());
                    }
                } else {
                    early += 1;
                }
            }
        }
    }
    let adt = (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64);
    let median_location_error = (!loc_err.is_empty()).then(|| {
        loc_err.sort_by(f64::total_cmp);
        let mid = loc_err.len() / 2;
        if loc_err.len() % 2 == 1 {
            loc_err[mid]
        } else {
            0.5 * (loc_err[mid - 1] + loc_err[mid])
        }
    });
    let per_q = spec
        .q_set
        .iter()
        .map(|&q| {
            let triggers = done.iter().filter(|o| o.triggered_q.contains(&q)).count();
            QBreakdown { q, triggers, trigger_rate: triggers as f64 / completed.max(1) as f64 }
        })
        .collect();
    Ok(ExperimentReport {
        spec: spec.clone(),
        thresholds: thresholds.clone(),
        completed,
        phase_one_failures: failures,
        reject_rate: alarms as f64 / completed.max(1) as f64,
        adt,
        early_alarms: early,
        median_location_error,
        per_q,
    })
}

/// Finite-sample counterpart of the limit simulation: runs the monitor's
/// statistic for one `q` on i.i.d. `N(0, I_p)` streams with the true norms
/// plugged in and returns `max_k stat(k) / w(k/n - 1)` per boundary.
///
/// Used to sanity-check simulated tables; it is not a calibration source.
pub fn finite_sample_sups(
    q: u32,
    n: usize,
    p: usize,
    horizon: f64,
    boundaries: &[BoundaryKind],
    reps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let spec = ScenarioSpec::null(n, p).with_q_set(&[q]).with_seed(seed);
    let spec = ScenarioSpec { horizon, ..spec };
    spec.validate()?;
    let len = spec.horizon_len();
    let per_rep: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>> {
            let data = gen_stream(&spec, rep);
            let mut best = vec![f64::NEG_INFINITY; boundaries.len()];
            let mut record = |k: usize, stat: f64| -> Result<()> {
                for (b, &kind) in best.iter_mut().zip(boundaries) {
                    *b = b.max(stat / boundary_w(kind, k as f64 / n as f64 - 1.0)?);
                }
                Ok(())
            };
            if q == 2 {
                let mut st = CusumState::new(p, len);
                for (t, x) in data.iter().enumerate() {
                    st.push_values(x)?;
                    let k = t + 1;
                    if k >= n + 3 {
                        record(k, L2_LIMIT_SCALE * t2_stat(&st, n, k, (p as f64).sqrt())?.t_stat)?;
                    }
                }
            } else {
                let mut tables = ProductSumTables::new(q, p, len)?;
                for (t, x) in data.iter().enumerate() {
                    tables.extend(x)?;
                    let k = t + 1;
                    if k > n + q as usize {
                        record(k, tables.scan(n, k, p as f64)?.t_stat)?;
                    }
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok((0..boundaries.len()).map(|b| per_rep.iter().map(|r| r[b]).collect()).collect())
}

/// True norms of the AR(1) covariance: `(||Sigma||_F^2, ||Sigma||_q^q)`.
pub fn ar1_norms(p: usize, rho: f64, q: u32) -> (f64, f64) {
    let mut frob = 0.0;
    let mut lq = 0.0;
    for i in 0..p {
        for j in 0..p {
            let v = rho.powi((i as i32 - j as i32).abs());
            frob += v * v;
            lq += v.powi(q as i32);
        }
    }
    (frob, lq)
}

/// Norm estimates equal to the truth, for experiments that isolate the statistic.
pub fn oracle_estimates(spec: &ScenarioSpec) -> NormEstimates {
    let (frob_sq, _) = ar1_norms(spec.p, spec.rho, 2);
    let lq = spec
        .q_set
        .iter()
        .filter(|&&q| q != 2)
        .map(|&q| crate::sigma_norm::LqEstimate {
            q,
            value: ar1_norms(spec.p, spec.rho, q).1,
            method: crate::sigma_norm::EstimatorMethod::Complete,
        })
        .collect();
    NormEstimates { n_train: spec.n, p: spec.p, frob_sq, lq }
}
