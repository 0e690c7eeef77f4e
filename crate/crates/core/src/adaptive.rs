//! Online decision layer: per-q statistics, the combined size adjustment,
//! boundary-scaled thresholds and change localization at the alarm.
//!
//! At time `k` every `q` with `k >= n + q + 1` is evaluated and compared with
//! `c(q) * w(k/n - 1)`. The first `k` at which any `q` exceeds its threshold
//! raises the alarm and ends the session.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l2stat::{g_stat_bruteforce, t2_stat};
use crate::limitlaw::{boundary_w, CriticalValueTable};
use crate::lqstat::ProductSumTables;
use crate::sigma_norm::NormEstimates;
use crate::streamcore::{CusumState, MonitorConfig, Observation};

/// Factor putting `T_(n,2)(k)` on the scale of the simulated `q = 2` limit.
///
/// The prefix-sum expansion counts every unordered index pair once, and its
/// normalized maximum converges to `sup G / sqrt(2)`.
pub const L2_LIMIT_SCALE: f64 = SQRT_2;

/// Per-test size `1 - (1 - alpha)^{1/|I|}` that keeps the union test at `alpha`.
pub fn adjusted_alpha(alpha: f64, card_i: usize) -> Result<f64> {
    if card_i < 1 {
        return Err(Error::Config("the set of monitored q must not be empty".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if card_i == 1 {
        return Ok(alpha);
    }
    Ok(1.0 - (1.0 - alpha).powf(1.0 / card_i as f64))
}

/// Critical value `c(q)` for every monitored `q`, before boundary scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub per_q: Vec<(u32, f64)>,
}

impl Thresholds {
    pub fn manual(per_q: Vec<(u32, f64)>) -> Self {
        Self { per_q }
    }

    /// Reads `c_{alpha*}(q)` from one table per `q`, `alpha*` adjusted for `|q_set|`.
    pub fn from_tables(config: &MonitorConfig, tables: &[CriticalValueTable]) -> Result<Self> {
        let level = adjusted_alpha(config.alpha, config.q_set.len())?;
        let per_q = config
            .q_set
            .iter()
            .map(|&q| {
                let table = tables
                    .iter()
                    .find(|t| t.key.q == q && t.key.boundary == config.boundary)
                    .ok_or_else(|| Error::Config(format!("no {} table for q = {q}", config.boundary)))?;
                if (table.key.horizon - config.horizon).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "table for q = {q} was simulated for T = {}, session uses T = {}",
                        table.key.horizon, config.horizon
                    )));
                }
                Ok((q, table.value_at(level)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { per_q })
    }

    pub fn get(&self, q: u32) -> Option<f64> {
        self.per_q.iter().find(|(qq, _)| *qq == q).map(|(_, c)| *c)
    }
}

/// Raised at the first threshold crossing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub k_alarm: usize,
    pub triggered_q: Vec<u32>,
    /// `(q, statistic)` for every `q` active at `k_alarm`.
    pub stats: Vec<(u32, f64)>,
    pub m_hat: usize,
}

/// One statistic evaluated at a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    pub q: u32,
    /// `None` while `k < n + q + 1`.
    pub stat: Option<f64>,
    pub threshold: f64,
    pub argmax_m: Option<usize>,
    /// Multiply-adds spent on this statistic at this step.
    pub ops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Continue,
    Alarm(AlarmEvent),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub k: usize,
    pub entries: Vec<StepEntry>,
    pub decision: Decision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Untrained,
    Monitoring,
    Alarmed,
    Finished,
}

/// Closed-end monitor over one stream.
#[derive(Debug, Clone)]
pub struct Monitor {
    config: MonitorConfig,
    thresholds: Thresholds,
    phase: Phase,
    estimates: Option<NormEstimates>,
    center: Vec<f64>,
    cusum: CusumState,
    tables: Vec<ProductSumTables>,
    alarm: Option<AlarmEvent>,
    alarm_argmax: Vec<(u32, usize)>,
}

impl Monitor {
    pub fn new(config: MonitorConfig, thresholds: Thresholds) -> Result<Self> {
        config.validate()?;
        for &q in &config.q_set {
            match thresholds.get(q) {
                Some(c) if c.is_finite() && c > 0.0 => {}
                Some(c) => return Err(Error::Config(format!("threshold for q = {q} must be positive, got {c}"))),
                None => return Err(Error::Config(format!("missing threshold for q = {q}"))),
            }
        }
        let cap = config.horizon_len();
        let tables = config
            .q_set
            .iter()
            .filter(|&&q| q != 2)
            .map(|&q| ProductSumTables::new(q, config.p, cap))
            .collect::<Result<_>>()?;
        Ok(Self {
            cusum: CusumState::new(config.p, cap),
            center: vec![0.0; config.p],
            config,
            thresholds,
            phase: Phase::Untrained,
            estimates: None,
            tables,
            alarm: None,
            alarm_argmax: Vec::new(),
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn estimates(&self) -> Option<&NormEstimates> {
        self.estimates.as_ref()
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn t_now(&self) -> usize {
        self.cusum.t_now()
    }

    /// Estimates the norms from the training block and seals Phase I.
    pub fn train(&mut self, phase_one: &[Vec<f64>], samples: Option<usize>) -> Result<&NormEstimates> {
        self.check_block(phase_one)?;
        let est = NormEstimates::estimate(phase_one, &self.config.q_set, samples, self.config.seed)?;
        self.train_with_estimates(phase_one, est)
    }

    /// Seals Phase I with externally supplied norm estimates.
    pub fn train_with_estimates(&mut self, phase_one: &[Vec<f64>], est: NormEstimates) -> Result<&NormEstimates> {
        if self.phase != Phase::Untrained {
            return Err(Error::State("the monitor has already been trained".into()));
        }
        self.check_block(phase_one)?;
        est.check_positive()?;
        if est.p != self.config.p {
            return Err(Error::Dimension { expected: self.config.p, got: est.p });
        }
        for &q in &self.config.q_set {
            if est.lq(q).is_none() {
                return Err(Error::PhaseOne(format!("no norm estimate for q = {q}")));
            }
        }
        let n = self.config.n as f64;
        let mut center = vec![0.0; self.config.p];
        for row in phase_one {
            for (c, v) in center.iter_mut().zip(row) {
                *c += v / n;
            }
        }
        self.center = center;
        for row in phase_one {
            self.absorb(row)?;
        }
        self.estimates = Some(est);
        self.phase = Phase::Monitoring;
        Ok(self.estimates.as_ref().expect("just set"))
    }

    fn check_block(&self, phase_one: &[Vec<f64>]) -> Result<()> {
        if phase_one.len() != self.config.n {
            return Err(Error::PhaseOne(format!(
                "training block has {} rows, configuration expects n = {}",
                phase_one.len(),
                self.config.n
            )));
        }
        for (i, row) in phase_one.iter().enumerate() {
            if row.len() != self.config.p {
                return Err(Error::Dimension { expected: self.config.p, got: row.len() });
            }
            if let Some(coord) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { t: i + 1, coord });
            }
        }
        Ok(())
    }

    // Observations enter the accumulators centered by the Phase-I mean. Both
    // statistics use difference kernels, so this changes rounding only.
    fn absorb(&mut self, x: &[f64]) -> Result<()> {
        let centered: Vec<f64> = x.iter().zip(&self.center).map(|(v, c)| v - c).collect();
        self.cusum.push_values(&centered)?;
        for t in &mut self.tables {
            t.extend(&centered)?;
        }
        Ok(())
    }

    /// Consumes `X_k` for `k = t_now + 1` and decides.
    pub fn step(&mut self, obs: &Observation) -> Result<StepOutcome> {
        match self.phase {
            Phase::Untrained => return Err(Error::State("step called before Phase I was sealed".into())),
            Phase::Alarmed => return Err(Error::State("the monitor has already raised its alarm".into())),
            Phase::Finished => return Err(Error::State("the closed-end horizon has been reached".into())),
            Phase::Monitoring => {}
        }
        let k = self.t_now() + 1;
        if obs.t != k {
            return Err(Error::TimeIndex { expected: k, got: obs.t });
        }
        if obs.x.len() != self.config.p {
            return Err(Error::Dimension { expected: self.config.p, got: obs.x.len() });
        }
        if let Some(coord) = obs.x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: k, coord });
        }
        self.absorb(&obs.x)?;

        let n = self.config.n;
        let w = boundary_w(self.config.boundary, k as f64 / n as f64 - 1.0)?;
        let est = self.estimates.as_ref().expect("monitoring implies trained");
        let mut entries = Vec::with_capacity(self.config.q_set.len());
        let mut tables = self.tables.iter();
        for &q in &self.config.q_set {
            let threshold = self.thresholds.get(q).expect("checked in new") * w;
            let table = if q == 2 { None } else { tables.next() };
            let active = k > n + q as usize;
            let (stat, argmax_m, ops) = if !active {
                (None, None, 0)
            } else if q == 2 {
                let scan = t2_stat(&self.cusum, n, k, est.sigma_f())?;
                (Some(L2_LIMIT_SCALE * scan.t_stat), Some(scan.argmax_m), scan.ops)
            } else {
                let lq = est.lq(q).expect("checked in training");
                let scan = table.expect("one table per q >= 4").scan(n, k, lq)?;
                (Some(scan.t_stat), Some(scan.argmax_m), scan.ops)
            };
            entries.push(StepEntry { q, stat, threshold, argmax_m, ops });
        }

        let triggered: Vec<&StepEntry> =
            entries.iter().filter(|e| e.stat.is_some_and(|s| s > e.threshold)).collect();
        let decision = if let Some(first) = triggered.first() {
            let event = AlarmEvent {
                k_alarm: k,
                triggered_q: triggered.iter().map(|e| e.q).collect(),
                stats: entries.iter().filter_map(|e| e.stat.map(|s| (e.q, s))).collect(),
                m_hat: first.argmax_m.expect("active statistic has an argmax"),
            };
            self.alarm_argmax = entries.iter().filter_map(|e| e.argmax_m.map(|m| (e.q, m))).collect();
            self.alarm = Some(event.clone());
            self.phase = Phase::Alarmed;
            Decision::Alarm(event)
        } else {
            if k >= self.config.horizon_len() {
                self.phase = Phase::Finished;
            }
            Decision::Continue
        };
        Ok(StepOutcome { k, entries, decision })
    }

    pub fn alarm(&self) -> Option<&AlarmEvent> {
        self.alarm.as_ref()
    }

    /// Argmax break of the statistic for `q` at the alarm time.
    pub fn locate_change(&self, q: u32) -> Result<usize> {
        if self.phase != Phase::Alarmed {
            return Err(Error::State("locate_change needs a raised alarm".into()));
        }
        self.alarm_argmax
            .iter()
            .find(|(qq, _)| *qq == q)
            .map(|(_, m)| *m)
            .ok_or_else(|| Error::State(format!("q = {q} was not active at the alarm")))
    }

    /// Feeds a whole Phase-II block; stops at the alarm or the horizon.
    pub fn run(&mut self, phase_two: &[Vec<f64>]) -> Result<Option<AlarmEvent>> {
        for row in phase_two {
            if self.phase != Phase::Monitoring {
                break;
            }
            let obs = Observation { t: self.t_now() + 1, x: row.clone() };
            if let Decision::Alarm(ev) = self.step(&obs)?.decision {
                return Ok(Some(ev));
            }
        }
        Ok(None)
    }
}

/// `T_(n,2)(k)` for every `k` by brute-force re-evaluation of each `G_k(m)`
/// from the raw data, O(k^2 p) per break candidate. Returned on the same scale
/// as the monitor's statistic.
pub fn l2_path_bruteforce(data: &[Vec<f64>], n: usize, sigma_f_hat: f64) -> Result<Vec<f64>> {
    let nf = n as f64;
    (n + 3..=data.len())
        .map(|k| {
            let mut best = f64::NEG_INFINITY;
            for m in n + 1..=k - 2 {
                best = best.max(g_stat_bruteforce(data, n, m, k)?);
            }
            Ok(L2_LIMIT_SCALE * best / (nf * nf * nf * sigma_f_hat))
        })
        .collect()
}
