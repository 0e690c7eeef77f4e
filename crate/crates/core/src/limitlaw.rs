//! Boundary functions and the limiting Gaussian processes behind the critical values.
//!
//! For `q = 2` the scan statistic converges to functionals of
//!
//! ```text
//! G(s, t) = t(t-s) Q(0, s) + s t Q(s, t) - s(t-s) Q(0, t)
//! Cov(Q(a1, b1), Q(a2, b2)) = (min(b1, b2) - max(a1, a2))^2   on overlap, 0 otherwise
//! ```
//!
//! and for general even `q` to
//!
//! ```text
//! G_q(s, t) = sum_c (-1)^{q-c} C(q, c) s^{q-c} (t-s)^c Q_{q,c}(s; [0, t])
//! ```
//!
//! Both fields are linear in a Gaussian vector with known covariance, so the
//! covariance of `G` itself on the monitoring grid is assembled directly and
//! factorized once. Each replication then costs one triangular product.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqstat::binomial;
use crate::streamcore::validate_q;

/// Levels stored in every persisted table.
pub const DEFAULT_ALPHAS: [f64; 4] = [0.10, 0.05, 0.025, 0.01];

/// Replications for persisted tables.
pub const DEFAULT_REPS: usize = 100_000;

/// Version stamped into cache files.
pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Shape of the time-varying threshold `c_alpha * w(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryKind {
    /// `w(t) = 1`.
    T1,
    /// `w(t) = (t+1)^2`.
    T2,
    /// `w(t) = (t+1)^2 max{(t/(t+1))^{1/2}, 1e-10}`.
    T3,
}

impl BoundaryKind {
    pub const ALL: [BoundaryKind; 3] = [BoundaryKind::T1, BoundaryKind::T2, BoundaryKind::T3];

    pub fn w(self, t: f64) -> Result<f64> {
        boundary_w(self, t)
    }
}

impl fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryKind::T1 => "T1",
            BoundaryKind::T2 => "T2",
            BoundaryKind::T3 => "T3",
        };
        f.write_str(s)
    }
}

impl FromStr for BoundaryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T1" => Ok(BoundaryKind::T1),
            "T2" => Ok(BoundaryKind::T2),
            "T3" => Ok(BoundaryKind::T3),
            other => Err(Error::Config(format!("unknown boundary '{other}', expected T1, T2 or T3"))),
        }
    }
}

/// Boundary function `w(t)` for `t >= 0`.
pub fn boundary_w(kind: BoundaryKind, t: f64) -> Result<f64> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Config(format!("boundary argument must be finite and >= 0, got {t}")));
    }
    Ok(match kind {
        BoundaryKind::T1 => 1.0,
        BoundaryKind::T2 => (t + 1.0).powi(2),
        BoundaryKind::T3 => (t + 1.0).powi(2) * (t / (t + 1.0)).sqrt().max(1e-10),
    })
}

/// Regular grid on `[1, T]` with `g` points per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub horizon: f64,
    pub g: usize,
}

impl GridSpec {
    pub fn new(horizon: f64, g: usize) -> Result<Self> {
        let spec = Self { horizon, g };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.g == 0 {
            return Err(Error::Config("grid needs at least one point per unit".into()));
        }
        if !self.horizon.is_finite() || self.horizon <= 1.0 {
            return Err(Error::Config(format!("horizon must exceed 1, got {}", self.horizon)));
        }
        let steps = self.horizon * self.g as f64;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "horizon {} is not a multiple of the grid step 1/{}",
                self.horizon, self.g
            )));
        }
        Ok(())
    }

    /// Monitoring time points `1, 1 + 1/g, ..., T`.
    pub fn points(&self) -> Vec<f64> {
        let last = (self.horizon * self.g as f64).round() as usize;
        (self.g..=last).map(|i| i as f64 / self.g as f64).collect()
    }

    /// Pairs `(s, t)` with `1 <= s < t <= T` on the grid. The diagonal `s = t`
    /// is omitted because both limit fields vanish there.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        let pts = self.points();
        let mut out = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
        for (i, &s) in pts.iter().enumerate() {
            for &t in &pts[i + 1..] {
                out.push((s, t));
            }
        }
        out
    }
}

/// Covariance of `Q(a1, b1)` and `Q(a2, b2)` in the `q = 2` limit.
pub fn q2_cov(a1: f64, b1: f64, a2: f64, b2: f64) -> f64 {
    let overlap = b1.min(b2) - a1.max(a2);
    if overlap > 0.0 {
        overlap * overlap
    } else {
        0.0
    }
}

fn pow0(x: f64, e: u32) -> f64 {
    if e == 0 {
        1.0
    } else {
        x.powi(e as i32)
    }
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Covariance of `Q_{q,c1}(s1; [0, t1])` and `Q_{q,c2}(s2; [0, t2])`.
///
/// `Q_{q,c}(s; [0, t])` collects the tuples with `c` indices in `[0, s]` and
/// `q - c` in `(s, t]`. Two such sums correlate only through tuples that sit in
/// both configurations, which forces the smaller split point to carry the
/// smaller `c`. With `r <= R` the split points and `b = min(t1, t2)`:
///
/// ```text
/// C(C, c) c! (q-c)! r^c (min(R, t_r) - r)^{C-c} (b - R)_+^{q-C}
/// ```
///
/// where `(c, t_r)` belong to the field split at `r`, `C` to the one split at `R`,
/// and the covariance is zero when `c > C`.
pub fn qc_cov(q: u32, c1: u32, s1: f64, t1: f64, c2: u32, s2: f64, t2: f64) -> f64 {
    let ((c_lo, r, t_r), (c_hi, big_r, _)) = if s1 < s2 || (s1 == s2 && c1 <= c2) {
        ((c1, s1, t1), (c2, s2, t2))
    } else {
        ((c2, s2, t2), (c1, s1, t1))
    };
    if c_lo > c_hi {
        return 0.0;
    }
    let b = t1.min(t2);
    let mid = (big_r.min(t_r) - r).max(0.0);
    let last = (b - big_r).max(0.0);
    binomial(c_hi, c_lo) as f64
        * factorial(c_lo)
        * factorial(q - c_lo)
        * pow0(r, c_lo)
        * pow0(mid, c_hi - c_lo)
        * pow0(last, q - c_hi)
}

/// Lower-triangular factor of a positive semidefinite matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    dim: usize,
    /// Row-major, lower triangle only.
    l: Vec<f64>,
    pub jitter: f64,
    pub zero_pivots: usize,
}

const JITTER_LEVELS: [f64; 4] = [0.0, 1e-12, 1e-11, 1e-10];

impl CholeskyFactor {
    /// Factorizes a symmetric PSD matrix given row-major.
    ///
    /// Pivots within rounding distance of zero are treated as exact zeros
    /// (rank-deficient directions). A clearly negative pivot triggers a retry
    /// with diagonal jitter `delta * max_diag`, `delta` escalating from 1e-12
    /// to 1e-10; past that the covariance is rejected.
    pub fn new(cov: &[f64], dim: usize) -> Result<Self> {
        if cov.len() != dim * dim {
            return Err(Error::Factorization(format!("expected {dim}x{dim} matrix")));
        }
        let max_diag = (0..dim).map(|i| cov[i * dim + i]).fold(0.0f64, f64::max);
        if max_diag <= 0.0 {
            return Err(Error::Factorization("covariance has no positive variance".into()));
        }
        let mut last_err = String::new();
        for delta in JITTER_LEVELS {
            match Self::try_factor(cov, dim, delta * max_diag, max_diag) {
                Ok((l, zero_pivots)) => {
                    if delta > 0.0 {
                        log::warn!("covariance factorized with relative jitter {delta:e}");
                    }
                    return Ok(Self { dim, l, jitter: delta * max_diag, zero_pivots });
                }
                Err(e) => last_err = e,
            }
        }
        Err(Error::Factorization(format!("not positive semidefinite within jitter budget: {last_err}")))
    }

    fn try_factor(
        cov: &[f64],
        dim: usize,
        jitter: f64,
        max_diag: f64,
    ) -> std::result::Result<(Vec<f64>, usize), String> {
        let tol = 1e-12 * max_diag * dim as f64;
        let mut l = vec![0.0; dim * dim];
        let mut zeros = 0;
        for j in 0..dim {
            let row_j = j * dim;
            let mut d = cov[row_j + j] + jitter;
            d -= l[row_j..row_j + j].iter().map(|v| v * v).sum::<f64>();
            if d < -tol {
                return Err(format!("pivot {j} is {d:e}"));
            }
            if d <= tol {
                zeros += 1;
                continue;
            }
            let root = d.sqrt();
            l[row_j + j] = root;
            for i in (j + 1)..dim {
                let row_i = i * dim;
                let dot: f64 = l[row_i..row_i + j].iter().zip(&l[row_j..row_j + j]).map(|(a, b)| a * b).sum();
                l[row_i + j] = (cov[row_i + j] - dot) / root;
            }
        }
        Ok((l, zeros))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `out = L z`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            let row = &self.l[i * self.dim..i * self.dim + i + 1];
            out[i] = row.iter().zip(z).map(|(a, b)| a * b).sum();
        }
    }

    /// `L L'` entry, for tests.
    pub fn reconstruct(&self, i: usize, j: usize) -> f64 {
        let k = i.min(j) + 1;
        (0..k).map(|m| self.l[i * self.dim + m] * self.l[j * self.dim + m]).sum()
    }
}

/// Zero-mean Gaussian vector with a fixed covariance.
#[derive(Debug, Clone)]
pub struct GaussianField {
    factor: CholeskyFactor,
}

impl GaussianField {
    pub fn new(cov: &[f64], dim: usize) -> Result<Self> {
        Ok(Self { factor: CholeskyFactor::new(cov, dim)? })
    }

    pub fn dim(&self) -> usize {
        self.factor.dim
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// Draws one realization from replication stream `rep` of `seed`.
    pub fn draw(&self, seed: u64, rep: u64, z: &mut [f64], out: &mut [f64]) {
        let mut rng = replication_rng(seed, rep);
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        self.factor.apply(z, out);
    }

    /// `reps` realizations, in replication order.
    pub fn sample(&self, reps: usize, seed: u64) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..reps as u64)
            .into_par_iter()
            .map_init(
                || vec![0.0; d],
                |z, rep| {
                    let mut out = vec![0.0; d];
                    self.draw(seed, rep, z, &mut out);
                    out
                },
            )
            .collect()
    }
}

/// Independent ChaCha stream for replication `rep`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// The `q = 2` field `Q(a, b)` at arbitrary coordinates.
pub fn q2_field(coords: &[(f64, f64)]) -> Result<GaussianField> {
    let d = coords.len();
    let mut cov = vec![0.0; d * d];
    for (i, &(a1, b1)) in coords.iter().enumerate() {
        for (j, &(a2, b2)) in coords.iter().enumerate() {
            cov[i * d + j] = q2_cov(a1, b1, a2, b2);
        }
    }
    GaussianField::new(&cov, d)
}

/// The field `Q_{q,c}(s; [0, t])` at coordinates `(c, s, t)`.
pub fn qc_field(q: u32, coords: &[(u32, f64, f64)]) -> Result<GaussianField> {
    validate_q(q)?;
    let d = coords.len();
    let mut cov = vec![0.0; d * d];
    for (i, &(c1, s1, t1)) in coords.iter().enumerate() {
        for (j, &(c2, s2, t2)) in coords.iter().enumerate() {
            cov[i * d + j] = qc_cov(q, c1, s1, t1, c2, s2, t2);
        }
    }
    GaussianField::new(&cov, d)
}

/// Which limit process a table describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitProcess {
    /// `G(s, t)` built from the `q = 2` field.
    L2,
    /// `G_q(s, t)` built from the `Q_{q,c}` fields.
    Lq(u32),
}

impl LimitProcess {
    /// The process used for norm index `q`.
    pub fn for_q(q: u32) -> Self {
        if q == 2 {
            LimitProcess::L2
        } else {
            LimitProcess::Lq(q)
        }
    }
}

/// Covariance of `G` (or `G_q`) across the grid pairs.
pub fn g_field_covariance(process: LimitProcess, pairs: &[(f64, f64)]) -> Result<Vec<f64>> {
    let d = pairs.len();
    let mut cov = vec![0.0; d * d];
    match process {
        LimitProcess::L2 => {
            // G(s, t) = sum of three Q terms with these (coefficient, a, b).
            let terms = |s: f64, t: f64| {
                [(t * (t - s), 0.0, s), (s * t, s, t), (-s * (t - s), 0.0, t)]
            };
            for i in 0..d {
                let ti = terms(pairs[i].0, pairs[i].1);
                for j in 0..=i {
                    let tj = terms(pairs[j].0, pairs[j].1);
                    let mut v = 0.0;
                    for &(ca, a1, b1) in &ti {
                        for &(cb, a2, b2) in &tj {
                            v += ca * cb * q2_cov(a1, b1, a2, b2);
                        }
                    }
                    cov[i * d + j] = v;
                    cov[j * d + i] = v;
                }
            }
        }
        LimitProcess::Lq(q) => {
            validate_q(q)?;
            let coef = |c: u32, s: f64, t: f64| {
                let sign = if (q - c).is_multiple_of(2) { 1.0 } else { -1.0 };
                sign * binomial(q, c) as f64 * pow0(s, q - c) * pow0(t - s, c)
            };
            for i in 0..d {
                let (s1, t1) = pairs[i];
                for j in 0..=i {
                    let (s2, t2) = pairs[j];
                    let mut v = 0.0;
                    for c1 in 0..=q {
                        let a = coef(c1, s1, t1);
                        for c2 in 0..=q {
                            v += a * coef(c2, s2, t2) * qc_cov(q, c1, s1, t1, c2, s2, t2);
                        }
                    }
                    cov[i * d + j] = v;
                    cov[j * d + i] = v;
                }
            }
        }
    }
    Ok(cov)
}

/// Draws of `sup_{1 <= s <= t <= T} G(s, t) / w(t - 1)`, one vector per boundary.
///
/// All boundaries share the same draws. Replication `i` uses stream `i` of
/// `seed`, so the output does not depend on the thread count.
pub fn simulate_sup(
    process: LimitProcess,
    grid: &GridSpec,
    boundaries: &[BoundaryKind],
    reps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    grid.validate()?;
    if reps == 0 {
        return Err(Error::Config("need at least one replication".into()));
    }
    let pairs = grid.pairs();
    let cov = g_field_covariance(process, &pairs)?;
    let field = GaussianField::new(&cov, pairs.len())?;
    let inv_w: Vec<Vec<f64>> = boundaries
        .iter()
        .map(|&b| pairs.iter().map(|&(_, t)| Ok(1.0 / boundary_w(b, t - 1.0)?)).collect())
        .collect::<Result<_>>()?;
    let d = pairs.len();
    let per_rep: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map_init(
            || (vec![0.0; d], vec![0.0; d]),
            |(z, g), rep| {
                field.draw(seed, rep, z, g);
                // The diagonal s = t contributes G = 0 to every supremum.
                inv_w
                    .iter()
                    .map(|iw| g.iter().zip(iw).map(|(v, w)| v * w).fold(0.0f64, f64::max))
                    .collect()
            },
        )
        .collect();
    Ok((0..boundaries.len()).map(|b| per_rep.iter().map(|r| r[b]).collect()).collect())
}

/// Sup sample of the `q = 2` limit for one boundary.
pub fn simulate_sup_q2(grid: &GridSpec, boundary: BoundaryKind, reps: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(simulate_sup(LimitProcess::L2, grid, &[boundary], reps, seed)?.remove(0))
}

/// Sup sample of the general-q limit for one boundary.
pub fn simulate_sup_qc(
    q: u32,
    grid: &GridSpec,
    boundary: BoundaryKind,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    validate_q(q)?;
    Ok(simulate_sup(LimitProcess::Lq(q), grid, &[boundary], reps, seed)?.remove(0))
}

/// Type-7 (linear interpolation) quantile of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Empirical `(1 - alpha)` quantile of a sup sample.
pub fn critical_value(sample: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if (sample.len() as f64) * alpha.min(1.0 - alpha) < 50.0 {
        return Err(Error::TooFewReplications { reps: sample.len(), alpha });
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, 1.0 - alpha))
}

/// Standard error of the `(1 - alpha)` sample quantile, from the distribution-free
/// order-statistic interval: half its width divided by 1.96.
pub fn quantile_se(sample: &[f64], alpha: f64) -> Result<f64> {
    critical_value(sample, alpha)?;
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let r = sorted.len() as f64;
    let prob = 1.0 - alpha;
    let half = 1.96 * (r * prob * (1.0 - prob)).sqrt();
    let lo = quantile_sorted(&sorted, ((r * prob - half) / (r - 1.0)).clamp(0.0, 1.0));
    let hi = quantile_sorted(&sorted, ((r * prob + half) / (r - 1.0)).clamp(0.0, 1.0));
    Ok((hi - lo) / (2.0 * 1.96))
}

/// Identity of a simulated table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableKey {
    pub q: u32,
    pub horizon: f64,
    pub boundary: BoundaryKind,
    pub g: usize,
    pub reps: usize,
    pub seed: u64,
}

impl TableKey {
    /// Default grid density for `q`: 32 per unit at `q = 2`, 24 otherwise.
    pub fn default_grid(q: u32) -> usize {
        if q == 2 {
            32
        } else {
            24
        }
    }

    pub fn new(q: u32, horizon: f64, boundary: BoundaryKind, seed: u64) -> Self {
        Self { q, horizon, boundary, g: Self::default_grid(q), reps: DEFAULT_REPS, seed }
    }

    pub fn with_grid(mut self, g: usize) -> Self {
        self.g = g;
        self
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.horizon, self.g)
    }

    /// File name used inside a cache directory.
    pub fn file_name(&self) -> String {
        format!(
            "cv_q{}_T{}_{}_g{}_R{}_s{}.json",
            self.q, self.horizon, self.boundary, self.g, self.reps, self.seed
        )
    }

    fn mismatch(&self, other: &TableKey) -> Option<String> {
        let mut diffs = Vec::new();
        if self.q != other.q {
            diffs.push(format!("q {} != {}", other.q, self.q));
        }
        if self.horizon != other.horizon {
            diffs.push(format!("T {} != {}", other.horizon, self.horizon));
        }
        if self.boundary != other.boundary {
            diffs.push(format!("boundary {} != {}", other.boundary, self.boundary));
        }
        if self.g != other.g {
            diffs.push(format!("grid {} != {}", other.g, self.g));
        }
        if self.reps != other.reps {
            diffs.push(format!("reps {} != {}", other.reps, self.reps));
        }
        if self.seed != other.seed {
            diffs.push(format!("seed {} != {}", other.seed, self.seed));
        }
        (!diffs.is_empty()).then(|| diffs.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileEntry {
    pub alpha: f64,
    pub value: f64,
}

/// Simulated critical values of one limit process under one boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueTable {
    pub key: TableKey,
    pub quantiles: Vec<QuantileEntry>,
    pub created_unix: u64,
    pub version: String,
    /// The raw sup sample, kept so other levels can be read off later.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<Vec<f64>>,
}

impl CriticalValueTable {
    /// Simulates the table for `key`, storing [`DEFAULT_ALPHAS`] plus `extra_alphas`.
    pub fn calibrate(key: TableKey, extra_alphas: &[f64]) -> Result<Self> {
        validate_q(key.q)?;
        let grid = key.grid()?;
        let sample = simulate_sup(LimitProcess::for_q(key.q), &grid, &[key.boundary], key.reps, key.seed)?
            .remove(0);
        Self::from_sample(key, sample, extra_alphas)
    }

    /// Simulates tables for several boundaries from one shared set of draws.
    pub fn calibrate_boundaries(
        q: u32,
        grid: &GridSpec,
        boundaries: &[BoundaryKind],
        reps: usize,
        seed: u64,
        extra_alphas: &[f64],
    ) -> Result<Vec<Self>> {
        let samples = simulate_sup(LimitProcess::for_q(q), grid, boundaries, reps, seed)?;
        boundaries
            .iter()
            .zip(samples)
            .map(|(&boundary, sample)| {
                let key = TableKey { q, horizon: grid.horizon, boundary, g: grid.g, reps, seed };
                Self::from_sample(key, sample, extra_alphas)
            })
            .collect()
    }

    pub fn from_sample(key: TableKey, sample: Vec<f64>, extra_alphas: &[f64]) -> Result<Self> {
        let mut alphas: Vec<f64> = DEFAULT_ALPHAS.iter().chain(extra_alphas).copied().collect();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        let mut sorted = sample.clone();
        sorted.sort_by(f64::total_cmp);
        let quantiles = alphas
            .into_iter()
            .filter(|&a| (sorted.len() as f64) * a.min(1.0 - a) >= 50.0)
            .map(|alpha| QuantileEntry { alpha, value: quantile_sorted(&sorted, 1.0 - alpha) })
            .collect();
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(Self { key, quantiles, created_unix, version: LIBRARY_VERSION.to_string(), sample: Some(sample) })
    }

    /// `c_alpha`: read from the stored sample when available, else from the stored levels.
    pub fn value_at(&self, alpha: f64) -> Result<f64> {
        if let Some(sample) = &self.sample {
            return critical_value(sample, alpha);
        }
        self.quantiles
            .iter()
            .find(|e| (e.alpha - alpha).abs() < 1e-12)
            .map(|e| e.value)
            .ok_or_else(|| Error::Config(format!("table has no entry for alpha = {alpha} and no stored sample")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let json = serde_json::to_string(self)
            .map_err(|e| Error::CorruptCache { path: path.to_path_buf(), detail: e.to_string() })?;
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Loads a table, insisting its key equals `expected`.
    pub fn load(path: &Path, expected: &TableKey) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let table: Self = serde_json::from_str(&text)
            .map_err(|e| Error::CorruptCache { path: path.to_path_buf(), detail: e.to_string() })?;
        if let Some(detail) = expected.mismatch(&table.key) {
            return Err(Error::KeyMismatch { path: path.to_path_buf(), detail });
        }
        if table.version != LIBRARY_VERSION {
            log::warn!(
                "cache {} was written by version {} (running {}); key matches, table accepted",
                path.display(),
                table.version,
                LIBRARY_VERSION
            );
        }
        Ok(table)
    }

    /// Loads the table for `key` from `dir`, simulating and storing it when absent.
    pub fn load_or_calibrate(dir: &Path, key: TableKey, extra_alphas: &[f64]) -> Result<(Self, PathBuf)> {
        let path = dir.join(key.file_name());
        if path.exists() {
            return Ok((Self::load(&path, &key)?, path));
        }
        let table = Self::calibrate(key, extra_alphas)?;
        table.save(&path)?;
        Ok((table, path))
    }
}
