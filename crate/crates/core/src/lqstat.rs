//! The L_q-norm monitoring statistic for even `q`.
//!
//! The two-sample kernel sum
//!
//! ```text
//! U(k, m) = sum_l sum*_{i_1..i_q in [1, m]} sum*_{j_1..j_q in [m+1, k]} prod_t (X_{i_t,l} - X_{j_t,l})
//! ```
//!
//! (starred sums run over ordered tuples of distinct indices) expands into
//!
//! ```text
//! U(k, m) = sum_{c=0}^{q} (-1)^{q-c} C(q, c) P(m-c, q-c) P(k-m-q+c, c) S_c(m, k)
//! S_c(m, k) = sum_l B(c, m, l) * M(q-c, [m+1, k], l)
//! ```
//!
//! where `P(a, b) = a! / (a-b)!`, `B(c, t, l)` is the ordered-distinct-tuple
//! product sum of coordinate `l` over `1..=t` and `M(c, [a, b], l)` the same
//! over the window `a..=b`. Adding one index to either table follows
//!
//! ```text
//! B(c, t+1, l) = B(c, t, l) + c * X_{t+1,l} * B(c-1, t, l)
//! ```
//!
//! (the factor `c` counts the slot taken by the new index), so `B` grows in
//! O(q p) per observation and the window table `M` is rebuilt at each `k` by a
//! leftward sweep in O(q p) per break candidate.

use crate::error::{Error, Result};
use crate::l2stat::argmax_first;
use crate::streamcore::{validate_q, Observation};

/// `a! / (a - b)!` in exact integer arithmetic; zero when `0 <= a < b`.
pub fn falling_factorial(a: i64, b: u32) -> Result<u128> {
    if a < 0 {
        return Err(Error::Index(format!("falling factorial with negative argument {a}")));
    }
    let a = a as u128;
    let b = b as u128;
    if b > a {
        return Ok(0);
    }
    let mut acc: u128 = 1;
    for i in 0..b {
        acc = acc
            .checked_mul(a - i)
            .ok_or_else(|| Error::Index(format!("falling factorial P({a}, {b}) overflows")))?;
    }
    Ok(acc)
}

pub(crate) fn binomial(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n as u128 - i) / (i + 1);
    }
    acc
}

/// Ordered-distinct-tuple product sums `B(c, t, l)` for `c = 0..=q`, plus the raw stream.
#[derive(Debug, Clone)]
pub struct ProductSumTables {
    q: usize,
    p: usize,
    capacity: usize,
    t_now: usize,
    /// `[(t * (q + 1) + c) * p + l]`, rows `t = 0..=t_now`.
    b: Vec<f64>,
    /// `[(t - 1) * p + l]`.
    raw: Vec<f64>,
}

/// `M(c, [m, k], l)` for every window start `m` in `m_lo..=k+1` at a fixed `k`.
#[derive(Debug, Clone)]
pub struct WindowTable {
    q: usize,
    p: usize,
    k: usize,
    m_lo: usize,
    /// `[((m - m_lo) * (q + 1) + c) * p + l]`.
    values: Vec<f64>,
}

impl WindowTable {
    /// `M(c, [m, k], l)`; the window `[k+1, k]` is empty.
    pub fn get(&self, c: usize, m: usize, l: usize) -> f64 {
        debug_assert!(m >= self.m_lo && m <= self.k + 1 && c <= self.q);
        self.values[((m - self.m_lo) * (self.q + 1) + c) * self.p + l]
    }

    fn row(&self, m: usize, c: usize) -> &[f64] {
        let start = ((m - self.m_lo) * (self.q + 1) + c) * self.p;
        &self.values[start..start + self.p]
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Per-time-step scan of `U(k, m)` over `m = n+1 ..= k-q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqScan {
    pub q: u32,
    pub k: usize,
    pub n: usize,
    /// `u_values[i]` belongs to `m = n + 1 + i`.
    pub u_values: Vec<f64>,
    pub t_stat: f64,
    pub argmax_m: usize,
    /// Coordinate-level multiply-adds spent on this scan.
    pub ops: u64,
}

impl LqScan {
    pub fn u(&self, m: usize) -> Option<f64> {
        m.checked_sub(self.n + 1).and_then(|i| self.u_values.get(i)).copied()
    }
}

impl ProductSumTables {
    pub fn new(q: u32, p: usize, capacity: usize) -> Result<Self> {
        validate_q(q)?;
        let q = q as usize;
        let mut b = Vec::with_capacity((capacity + 1) * (q + 1) * p);
        b.resize((q + 1) * p, 0.0);
        b[..p].fill(1.0);
        Ok(Self { q, p, capacity, t_now: 0, b, raw: Vec::with_capacity(capacity * p) })
    }

    pub fn q(&self) -> u32 {
        self.q as u32
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn t_now(&self) -> usize {
        self.t_now
    }

    /// `B(c, t, l)` for `t <= t_now`.
    pub fn b(&self, c: usize, t: usize, l: usize) -> f64 {
        self.b[(t * (self.q + 1) + c) * self.p + l]
    }

    fn b_row(&self, c: usize, t: usize) -> &[f64] {
        let start = (t * (self.q + 1) + c) * self.p;
        &self.b[start..start + self.p]
    }

    /// `X_t` as stored.
    pub fn observation(&self, t: usize) -> &[f64] {
        &self.raw[(t - 1) * self.p..t * self.p]
    }

    pub fn extend_obs(&mut self, obs: &Observation) -> Result<()> {
        if obs.t != self.t_now + 1 {
            return Err(Error::TimeIndex { expected: self.t_now + 1, got: obs.t });
        }
        self.extend(&obs.x)
    }

    /// Appends `X_{t_now+1}` and the new column of `B`.
    pub fn extend(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.p {
            return Err(Error::Dimension { expected: self.p, got: x.len() });
        }
        if self.t_now >= self.capacity {
            return Err(Error::HorizonExceeded { horizon: self.capacity });
        }
        let (q, p) = (self.q, self.p);
        let prev = self.t_now * (q + 1) * p;
        self.b.extend_from_slice(&vec![0.0; (q + 1) * p]);
        let (old, new) = self.b.split_at_mut(prev + (q + 1) * p);
        let old = &old[prev..];
        new[..p].fill(1.0);
        for c in 1..=q {
            let cf = c as f64;
            for l in 0..p {
                new[c * p + l] = old[c * p + l] + cf * x[l] * old[(c - 1) * p + l];
            }
        }
        self.raw.extend_from_slice(x);
        self.t_now += 1;
        Ok(())
    }

    /// Builds `M(c, [m, k], l)` for all `m` in `m_lo..=k+1` by sweeping `m` downward from `k`.
    pub fn build_m(&self, k: usize, m_lo: usize) -> Result<WindowTable> {
        if m_lo == 0 || m_lo > k + 1 || k > self.t_now {
            return Err(Error::Index(format!(
                "window table needs 1 <= m_lo <= k + 1 and k <= {} (m_lo = {m_lo}, k = {k})",
                self.t_now
            )));
        }
        let (q, p) = (self.q, self.p);
        let width = (q + 1) * p;
        let rows = k + 2 - m_lo;
        let mut values = vec![0.0; rows * width];
        // Row for the empty window [k+1, k].
        let last = (rows - 1) * width;
        values[last..last + p].fill(1.0);
        for m in (m_lo..=k).rev() {
            let x = self.observation(m);
            let (head, tail) = values.split_at_mut((m + 1 - m_lo) * width);
            let cur = &mut head[(m - m_lo) * width..];
            let next = &tail[..width];
            cur[..p].fill(1.0);
            for c in 1..=q {
                let cf = c as f64;
                for l in 0..p {
                    cur[c * p + l] = next[c * p + l] + cf * x[l] * next[(c - 1) * p + l];
                }
            }
        }
        Ok(WindowTable { q, p, k, m_lo, values })
    }

    fn check_break(&self, m: usize, k: usize) -> Result<()> {
        if m == 0 || m >= k || k > self.t_now {
            return Err(Error::Index(format!(
                "break m = {m} must satisfy 1 <= m < k = {k} <= {}",
                self.t_now
            )));
        }
        Ok(())
    }

    /// `S_c(m, k) = sum_l B(c, m, l) M(q-c, [m+1, k], l)`.
    pub fn s_stat(&self, c: usize, m: usize, k: usize) -> Result<f64> {
        if c > self.q {
            return Err(Error::Index(format!("c = {c} exceeds q = {}", self.q)));
        }
        self.check_break(m, k)?;
        let window = self.build_m(k, m + 1)?;
        Ok(self.s_with(&window, c, m))
    }

    fn s_with(&self, window: &WindowTable, c: usize, m: usize) -> f64 {
        let pre = self.b_row(c, m);
        let post = window.row(m + 1, self.q - c);
        pre.iter().zip(post).map(|(a, b)| a * b).sum()
    }

    /// Coefficients `(-1)^{q-c} C(q, c) P(m-c, q-c) P(k-m-q+c, c)` for `c = 0..=q`.
    pub fn u_coefficients(q: usize, m: usize, k: usize) -> Result<Vec<f64>> {
        let (mi, ki, qi) = (m as i64, k as i64, q as i64);
        (0..=q)
            .map(|c| {
                let ci = c as i64;
                let pre = falling_factorial(mi - ci, (q - c) as u32)?;
                let post = falling_factorial(ki - mi - qi + ci, c as u32)?;
                let mag = binomial(q as u32, c as u32) as f64 * pre as f64 * post as f64;
                Ok(if (q - c).is_multiple_of(2) { mag } else { -mag })
            })
            .collect()
    }

    /// `U(k, m)` through the `S_c` decomposition.
    pub fn u_stat(&self, m: usize, k: usize) -> Result<f64> {
        self.check_break(m, k)?;
        let coef = Self::u_coefficients(self.q, m, k)?;
        let window = self.build_m(k, m + 1)?;
        Ok(self.u_with(&window, &coef, m))
    }

    fn u_with(&self, window: &WindowTable, coef: &[f64], m: usize) -> f64 {
        (0..=self.q).map(|c| coef[c] * self.s_with(window, c, m)).sum()
    }

    /// Scans `m = n+1 ..= k-q` at time `k` and normalizes by `sqrt(n^{3q} * sigma_q_hat)`.
    ///
    /// `sigma_q_hat` estimates `||Sigma||_q^q`. Ties resolve to the smallest `m`.
    pub fn scan(&self, n: usize, k: usize, sigma_q_hat: f64) -> Result<LqScan> {
        if !(sigma_q_hat > 0.0 && sigma_q_hat.is_finite()) {
            return Err(Error::PhaseOne(format!(
                "L{}-norm estimate must be positive, got {sigma_q_hat}",
                self.q
            )));
        }
        let q = self.q;
        if k < n + q + 1 {
            return Err(Error::Index(format!(
                "T_(n,{q})(k) needs k >= n + q + 1 = {}, got {k}",
                n + q + 1
            )));
        }
        if k > self.t_now {
            return Err(Error::Index(format!("k = {k} beyond stored time {}", self.t_now)));
        }
        let window = self.build_m(k, n + 2)?;
        let u_values = (n + 1..=k - q)
            .map(|m| {
                let coef = Self::u_coefficients(q, m, k)?;
                Ok(self.u_with(&window, &coef, m))
            })
            .collect::<Result<Vec<f64>>>()?;
        let (best, max_u) = argmax_first(&u_values);
        let sweep = (k - n - 1) as u64 * (q * self.p) as u64;
        let sums = u_values.len() as u64 * ((q + 1) * self.p) as u64;
        let norm = (3.0 * q as f64 * (n as f64).ln()).exp().sqrt() * sigma_q_hat.sqrt();
        Ok(LqScan {
            q: q as u32,
            k,
            n,
            t_stat: max_u / norm,
            argmax_m: n + 1 + best,
            ops: sweep + sums,
            u_values,
        })
    }
}

/// Reference evaluations by explicit tuple enumeration, for cross-checking.
pub mod oracle {
    use crate::error::{Error, Result};

    /// Visits every ordered tuple of `len` distinct entries of `idx`, with the product of `f`.
    fn tuples(idx: &[usize], len: usize, f: &dyn Fn(usize) -> f64, visit: &mut dyn FnMut(f64)) {
        fn rec(
            idx: &[usize],
            len: usize,
            used: &mut Vec<bool>,
            acc: f64,
            f: &dyn Fn(usize) -> f64,
            visit: &mut dyn FnMut(f64),
        ) {
            if len == 0 {
                visit(acc);
                return;
            }
            for (pos, &i) in idx.iter().enumerate() {
                if used[pos] {
                    continue;
                }
                used[pos] = true;
                rec(idx, len - 1, used, acc * f(i), f, visit);
                used[pos] = false;
            }
        }
        let mut used = vec![false; idx.len()];
        rec(idx, len, &mut used, 1.0, f, visit);
    }

    /// `B(c, t, l)` by enumerating ordered distinct tuples of `1..=t`.
    pub fn b_bruteforce(data: &[Vec<f64>], c: usize, t: usize, l: usize) -> f64 {
        let idx: Vec<usize> = (1..=t).collect();
        let mut total = 0.0;
        tuples(&idx, c, &|i| data[i - 1][l], &mut |v| total += v);
        total
    }

    /// `M(c, [a, b], l)` by enumeration.
    pub fn m_bruteforce(data: &[Vec<f64>], c: usize, a: usize, b: usize, l: usize) -> f64 {
        let idx: Vec<usize> = (a..=b).collect();
        let mut total = 0.0;
        tuples(&idx, c, &|i| data[i - 1][l], &mut |v| total += v);
        total
    }

    /// `S_c(m, k)` by enumeration.
    pub fn s_bruteforce(data: &[Vec<f64>], q: usize, c: usize, m: usize, k: usize) -> f64 {
        let p = data[0].len();
        (0..p)
            .map(|l| m_bruteforce(data, c, 1, m, l) * m_bruteforce(data, q - c, m + 1, k, l))
            .sum()
    }

    /// `U(k, m)` straight from its definition as a sum over ordered distinct
    /// `q`-tuples on both sides of the break. Cost `P(m, q) P(k-m, q) q p`.
    pub fn u_stat_bruteforce(data: &[Vec<f64>], q: usize, m: usize, k: usize) -> Result<f64> {
        if m == 0 || m >= k || k > data.len() || m > 63 || k - m > 63 {
            return Err(Error::Index(format!("brute-force U needs 1 <= m < k <= {}", data.len())));
        }
        let p = data[0].len();
        let mut total = 0.0;
        for l in 0..p {
            let col: Vec<f64> = data[..k].iter().map(|r| r[l]).collect();
            total += paired(&col, q, m, k);
        }
        Ok(total)
    }

    fn paired(col: &[f64], q: usize, m: usize, k: usize) -> f64 {
        fn rec(col: &[f64], left: usize, m: usize, k: usize, ui: u64, uj: u64, acc: f64) -> f64 {
            if left == 0 {
                return acc;
            }
            let mut s = 0.0;
            for i in 1..=m {
                if ui & (1 << i) != 0 {
                    continue;
                }
                for j in (m + 1)..=k {
                    if uj & (1 << (j - m)) != 0 {
                        continue;
                    }
                    let d = col[i - 1] - col[j - 1];
                    s += rec(col, left - 1, m, k, ui | (1 << i), uj | (1 << (j - m)), acc * d);
                }
            }
            s
        }
        rec(col, q, m, k, 0, 0, 1.0)
    }
}
