//! Data model and the shared CUSUM accumulators.
//!
//! Both monitoring statistics are assembled from the prefix sums
//!
//! ```text
//! B_t = X_1 + ... + X_t          (a p-vector)
//! C_t = X_1'X_1 + ... + X_t'X_t  (a scalar)
//! ```
//!
//! from which every partial inner-product sum over a contiguous block follows:
//!
//! ```text
//! S(a, b) = sum_{a <= i < j <= b} X_i'X_j
//!         = ((B_b - B_{a-1})'(B_b - B_{a-1}) - (C_b - C_{a-1})) / 2
//! ```
//!
//! Time indices are 1-based; `B_0 = 0` and `C_0 = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limitlaw::BoundaryKind;

/// Largest supported norm index.
pub const MAX_Q: u32 = 8;

/// One p-dimensional observation at time `t` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t: usize,
    pub x: Vec<f64>,
}

impl Observation {
    /// Builds an observation, rejecting NaN and infinite coordinates.
    pub fn new(t: usize, x: Vec<f64>) -> Result<Self> {
        if let Some(coord) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t, coord });
        }
        Ok(Self { t, x })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Static configuration of a closed-end monitoring session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Phase-I (training) length.
    pub n: usize,
    /// Dimension of each observation.
    pub p: usize,
    /// Even norm indices to monitor, kept sorted and deduplicated.
    pub q_set: Vec<u32>,
    /// Horizon multiplier: monitoring ends at `floor(n * horizon)`.
    pub horizon: f64,
    /// Global size of the (possibly combined) procedure.
    pub alpha: f64,
    pub boundary: BoundaryKind,
    pub seed: u64,
}

impl MonitorConfig {
    /// Config with the default `q_set = {2, 6}`, `T = 2`, `alpha = 0.1` and boundary T1.
    pub fn new(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            q_set: vec![2, 6],
            horizon: 2.0,
            alpha: 0.1,
            boundary: BoundaryKind::T1,
            seed: 0,
        }
    }

    pub fn with_q_set(mut self, q_set: &[u32]) -> Self {
        let mut q = q_set.to_vec();
        q.sort_unstable();
        q.dedup();
        self.q_set = q;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
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

    /// Last monitored time index, `floor(n * T)`.
    pub fn horizon_len(&self) -> usize {
        horizon_len(self.n, self.horizon)
    }

    pub fn max_q(&self) -> u32 {
        self.q_set.iter().copied().max().unwrap_or(2)
    }

    pub fn min_q(&self) -> u32 {
        self.q_set.iter().copied().min().unwrap_or(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::Config(format!("phase-I length n = {} must be at least 8", self.n)));
        }
        if self.p == 0 {
            return Err(Error::Config("dimension p must be at least 1".into()));
        }
        if self.q_set.is_empty() {
            return Err(Error::Config("q_set must not be empty".into()));
        }
        for &q in &self.q_set {
            validate_q(q)?;
        }
        if self.q_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("q_set must be sorted without duplicates".into()));
        }
        let max_q = self.max_q() as usize;
        if self.n <= 2 * max_q {
            return Err(Error::Config(format!(
                "n = {} must exceed 2 * max(q) = {}",
                self.n,
                2 * max_q
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 1.0) {
            return Err(Error::Config(format!("horizon T = {} must be > 1", self.horizon)));
        }
        if self.horizon_len() <= self.n + max_q + 1 {
            return Err(Error::Config(format!(
                "floor(nT) = {} leaves no monitoring step for q = {}",
                self.horizon_len(),
                max_q
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// `floor(n * horizon)`, tolerant of representation error in `horizon`.
pub fn horizon_len(n: usize, horizon: f64) -> usize {
    (n as f64 * horizon + 1e-9).floor() as usize
}

pub fn validate_q(q: u32) -> Result<()> {
    if q < 2 || !q.is_multiple_of(2) {
        return Err(Error::Config(format!("q = {q} must be an even integer >= 2")));
    }
    if q > MAX_Q {
        return Err(Error::Config(format!("q = {q} exceeds the supported maximum {MAX_Q}")));
    }
    Ok(())
}

/// Running prefix sums `B_t`, `C_t` over the whole closed-end horizon.
#[derive(Debug, Clone)]
pub struct CusumState {
    p: usize,
    capacity: usize,
    t_now: usize,
    /// Row-major `(t_now + 1) x p`, row 0 is `B_0 = 0`.
    b: Vec<f64>,
    /// `C_0 .. C_{t_now}`.
    c: Vec<f64>,
    /// `||B_t||^2`, cached so that `S(1, m)` is O(1).
    b_sq: Vec<f64>,
}

impl CusumState {
    /// Empty state for `p`-dimensional data that may hold at most `capacity` observations.
    pub fn new(p: usize, capacity: usize) -> Self {
        let mut b = Vec::with_capacity((capacity + 1) * p);
        b.resize(p, 0.0);
        let mut c = Vec::with_capacity(capacity + 1);
        c.push(0.0);
        let mut b_sq = Vec::with_capacity(capacity + 1);
        b_sq.push(0.0);
        Self { p, capacity, t_now: 0, b, c, b_sq }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn t_now(&self) -> usize {
        self.t_now
    }

    /// Appends `X_{t_now + 1}`.
    pub fn push(&mut self, obs: &Observation) -> Result<()> {
        if obs.dim() != self.p {
            return Err(Error::Dimension { expected: self.p, got: obs.dim() });
        }
        if obs.t != self.t_now + 1 {
            return Err(Error::TimeIndex { expected: self.t_now + 1, got: obs.t });
        }
        self.push_values(&obs.x)
    }

    /// Appends the next observation without a time stamp check.
    pub fn push_values(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.p {
            return Err(Error::Dimension { expected: self.p, got: x.len() });
        }
        if self.t_now >= self.capacity {
            return Err(Error::HorizonExceeded { horizon: self.capacity });
        }
        let start = self.t_now * self.p;
        let mut energy = 0.0;
        let mut norm = 0.0;
        for (l, &v) in x.iter().enumerate() {
            let next = self.b[start + l] + v;
            self.b.push(next);
            energy += v * v;
            norm += next * next;
        }
        let c_next = self.c[self.t_now] + energy;
        self.c.push(c_next);
        self.b_sq.push(norm);
        self.t_now += 1;
        Ok(())
    }

    /// `B_t` for `0 <= t <= t_now`.
    pub fn prefix(&self, t: usize) -> &[f64] {
        &self.b[t * self.p..(t + 1) * self.p]
    }

    /// `C_t` for `0 <= t <= t_now`.
    pub fn energy(&self, t: usize) -> f64 {
        self.c[t]
    }

    /// `||B_t||^2`.
    pub fn prefix_sq(&self, t: usize) -> f64 {
        self.b_sq[t]
    }

    /// `S(a, b) = sum_{a <= i < j <= b} X_i'X_j`.
    pub fn pair_sum(&self, a: usize, b: usize) -> Result<f64> {
        if a == 0 || a > b || b > self.t_now {
            return Err(Error::Index(format!(
                "pair_sum({a}, {b}) needs 1 <= a <= b <= {}",
                self.t_now
            )));
        }
        Ok(self.pair_sum_unchecked(a, b))
    }

    pub(crate) fn pair_sum_unchecked(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let sq = if a == 1 {
            self.b_sq[b]
        } else {
            let hi = self.prefix(b);
            let lo = self.prefix(a - 1);
            hi.iter().zip(lo).map(|(h, l)| (h - l) * (h - l)).sum()
        };
        0.5 * (sq - (self.c[b] - self.c[a - 1]))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stream(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    fn state_from(data: &[Vec<f64>]) -> CusumState {
        let mut st = CusumState::new(data[0].len(), data.len());
        for (i, x) in data.iter().enumerate() {
            st.push(&Observation::new(i + 1, x.clone()).unwrap()).unwrap();
        }
        st
    }

    fn naive_pair_sum(data: &[Vec<f64>], a: usize, b: usize) -> f64 {
        let mut s = 0.0;
        for i in a..=b {
            for j in (i + 1)..=b {
                s += dot(&data[i - 1], &data[j - 1]);
            }
        }
        s
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn zero_observation_leaves_sums_at_zero() {
        let mut st = CusumState::new(3, 4);
        st.push(&Observation::new(1, vec![0.0; 3]).unwrap()).unwrap();
        assert_eq!(st.prefix(1), &[0.0, 0.0, 0.0]);
        assert_eq!(st.energy(1), 0.0);
    }

    #[test]
    fn opposite_pushes_cancel() {
        let x = vec![1.5, -2.0, 0.25];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let mut st = CusumState::new(3, 2);
        st.push(&Observation::new(1, x.clone()).unwrap()).unwrap();
        st.push(&Observation::new(2, neg).unwrap()).unwrap();
        assert_eq!(st.prefix(2), &[0.0, 0.0, 0.0]);
        assert_eq!(st.energy(2), 2.0 * dot(&x, &x));
    }

    #[test]
    fn prefix_sums_match_naive_loop() {
        let data = random_stream(10, 3, 11);
        let st = state_from(&data);
        for t in 1..=10 {
            for l in 0..3 {
                let naive: f64 = data[..t].iter().map(|x| x[l]).sum();
                assert!(rel_close(st.prefix(t)[l], naive, 1e-12));
            }
            let naive_c: f64 = data[..t].iter().map(|x| dot(x, x)).sum();
            assert!(rel_close(st.energy(t), naive_c, 1e-12));
        }
    }

    #[test]
    fn increments_recover_observations() {
        let data = random_stream(6, 2, 5);
        let st = state_from(&data);
        for t in 1..=6 {
            for l in 0..2 {
                let inc = st.prefix(t)[l] - st.prefix(t - 1)[l];
                assert!((inc - data[t - 1][l]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pair_sum_empty_block_is_zero() {
        let st = state_from(&random_stream(5, 2, 1));
        for a in 1..=5 {
            assert_eq!(st.pair_sum(a, a).unwrap(), 0.0);
        }
    }

    #[test]
    fn pair_sum_of_identical_rows_is_binomial_multiple() {
        let v = vec![1.0, -2.0, 0.5];
        let data = vec![v.clone(); 7];
        let st = state_from(&data);
        let vv = dot(&v, &v);
        for a in 1..=7 {
            for b in a..=7 {
                let len = (b - a + 1) as f64;
                let expected = len * (len - 1.0) / 2.0 * vv;
                assert!(rel_close(st.pair_sum(a, b).unwrap(), expected, 1e-12));
            }
        }
    }

    #[test]
    fn pair_sum_matches_double_loop() {
        let data = random_stream(12, 4, 3);
        let st = state_from(&data);
        for a in 1..=12 {
            for b in a..=12 {
                assert!(rel_close(st.pair_sum(a, b).unwrap(), naive_pair_sum(&data, a, b), 1e-10));
            }
        }
    }

    #[test]
    fn telescoping_on_extension() {
        let data = random_stream(9, 3, 8);
        let st = state_from(&data);
        for a in 1..9 {
            for b in a..9 {
                let extra: f64 = (a..=b).map(|i| dot(&data[i - 1], &data[b])).sum();
                let lhs = st.pair_sum(a, b).unwrap() + extra;
                assert!(rel_close(lhs, st.pair_sum(a, b + 1).unwrap(), 1e-9));
            }
        }
    }

    #[test]
    fn pair_sum_is_permutation_invariant_within_block() {
        let mut data = random_stream(8, 3, 21);
        let st = state_from(&data);
        let before = st.pair_sum(2, 7).unwrap();
        data[1..7].reverse();
        data.swap(2, 4);
        let after = state_from(&data).pair_sum(2, 7).unwrap();
        assert!(rel_close(before, after, 1e-9));
    }

    #[test]
    fn push_rejects_bad_input() {
        let mut st = CusumState::new(2, 2);
        assert!(matches!(
            st.push(&Observation::new(1, vec![1.0]).unwrap()),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            st.push(&Observation::new(2, vec![1.0, 1.0]).unwrap()),
            Err(Error::TimeIndex { .. })
        ));
        st.push(&Observation::new(1, vec![1.0, 1.0]).unwrap()).unwrap();
        st.push(&Observation::new(2, vec![1.0, 1.0]).unwrap()).unwrap();
        assert!(matches!(
            st.push(&Observation::new(3, vec![1.0, 1.0]).unwrap()),
            Err(Error::HorizonExceeded { .. })
        ));
        assert!(st.pair_sum(0, 1).is_err());
        assert!(st.pair_sum(1, 3).is_err());
    }

    #[test]
    fn observation_rejects_non_finite() {
        assert!(matches!(
            Observation::new(1, vec![0.0, f64::NAN]),
            Err(Error::NonFinite { coord: 1, .. })
        ));
        assert!(Observation::new(1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MonitorConfig::new(100, 50).validate().is_ok());
        assert!(MonitorConfig::new(100, 50).with_q_set(&[3]).validate().is_err());
        assert!(MonitorConfig::new(100, 50).with_q_set(&[10]).validate().is_err());
        assert!(MonitorConfig::new(12, 5).validate().is_err());
        assert!(MonitorConfig::new(100, 50).with_horizon(1.0).validate().is_err());
        assert!(MonitorConfig::new(100, 50).with_alpha(1.0).validate().is_err());
        assert!(MonitorConfig::new(20, 5).with_q_set(&[6]).with_horizon(1.3).validate().is_err());
        assert_eq!(MonitorConfig::new(100, 5).with_horizon(1.25).horizon_len(), 125);
    }

    #[test]
    fn storage_is_bounded_by_horizon() {
        let data = random_stream(10, 4, 2);
        let st = state_from(&data);
        assert!(st.b.len() <= (st.capacity() + 1) * st.dim());
        assert!(st.c.len() <= st.capacity() + 1);
    }
}
