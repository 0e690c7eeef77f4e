//! Training-block estimators of `||Sigma||_F^2` and `||Sigma||_q^q`.
//!
//! Frobenius norm, fourth-order U-statistic:
//!
//! ```text
//! (1 / (4 C(n,4))) sum_{a<b<c<d} [(X_a - X_b)'(X_c - X_d)]^2
//! ```
//!
//! evaluated in O(n^2 p) through the Gram matrix `A_ij = X_i'X_j`.
//!
//! General even `q`:
//!
//! ```text
//! (1 / (2^q C(n,2q))) sum_{i_1<..<i_q<j_1<..<j_q} ( sum_l prod_k (X_{i_k,l} - X_{j_k,l}) )^2
//! ```
//!
//! which is only feasible exhaustively for tiny `n`; the incomplete version
//! averages the kernel over `N` uniformly sampled index tuples.

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limitlaw::replication_rng;
use crate::lqstat::binomial;
use crate::streamcore::validate_q;

/// Exhaustive enumeration cap for [`lq_norm_bruteforce`].
pub const BRUTEFORCE_LIMIT: u128 = 1_000_000;

/// Default incomplete sample count per training observation.
pub const DEFAULT_SAMPLES_PER_OBS: usize = 50;

fn check_block(data: &[Vec<f64>]) -> Result<usize> {
    let p = data.first().map(Vec::len).unwrap_or(0);
    if p == 0 {
        return Err(Error::PhaseOne("training block is empty".into()));
    }
    for (i, row) in data.iter().enumerate() {
        if row.len() != p {
            return Err(Error::Dimension { expected: p, got: row.len() });
        }
        if let Some(coord) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: i + 1, coord });
        }
    }
    Ok(p)
}

/// Column-centered copy; both estimators are translation invariant.
fn centered(data: &[Vec<f64>], p: usize) -> Vec<Vec<f64>> {
    let n = data.len() as f64;
    let mut mean = vec![0.0; p];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    data.iter().map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect()
}

/// Complete estimator of `||Sigma||_F^2` in O(n^2 p).
pub fn frob_sq_complete(data: &[Vec<f64>]) -> Result<f64> {
    let n = data.len();
    if n < 4 {
        return Err(Error::PhaseOne(format!("Frobenius estimator needs n >= 4, got {n}")));
    }
    let p = check_block(data)?;
    let x = centered(data, p);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(u, w)| u * w).sum();
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    Ok(frob_sq_from_gram(&a, n))
}

/// The quadruple sum expressed through the Gram matrix (0-based indices).
///
/// `[(X_a-X_b)'(X_c-X_d)]^2` expands into four squares, four products sharing
/// one index and two products with disjoint indices. Each family is summed over
/// `a<b<c<d` with counting weights or running sums.
fn frob_sq_from_gram(a: &[f64], n: usize) -> f64 {
    let at = |i: usize, j: usize| a[i * n + j];
    let nn = n as f64;

    // Squares: A_ac^2, A_ad^2, A_bc^2, A_bd^2 with the free indices counted.
    let mut squares = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (j - i - 1) as f64;
            let before = i as f64;
            let after = nn - j as f64 - 1.0;
            let w = gap * after + gap * (gap - 1.0) / 2.0 + before * after + before * gap;
            squares += w * at(i, j).powi(2);
        }
    }

    let mut shared = 0.0;
    // A_ac A_ad: b strictly between a and c.
    for i in 0..n {
        let mut suffix = 0.0;
        for c in (i + 1..n).rev() {
            shared += (c - i - 1) as f64 * at(i, c) * suffix;
            suffix += at(i, c);
        }
    }
    // A_ac A_bc with d after c; A_bc A_bd with a before b.
    for c in 0..n {
        let (mut s, mut sq) = (0.0, 0.0);
        for i in 0..c {
            s += at(i, c);
            sq += at(i, c).powi(2);
        }
        shared += (nn - c as f64 - 1.0) * (s * s - sq) / 2.0;
        let (mut s, mut sq) = (0.0, 0.0);
        for j in (c + 1)..n {
            s += at(c, j);
            sq += at(c, j).powi(2);
        }
        shared += c as f64 * (s * s - sq) / 2.0;
    }
    // A_ad A_bd: c strictly between b and d.
    for d in 0..n {
        let mut prefix = 0.0;
        for b in 0..d {
            shared += (d - b - 1) as f64 * at(b, d) * prefix;
            prefix += at(b, d);
        }
    }

    // Disjoint products, indexed by the inner pair (b, c).
    // left[b][c] = sum_{a<b} A_ac, right[b][c] = sum_{d>c} A_bd,
    // outer[b][c] = sum_{a<b, d>c} A_ad.
    let mut left = vec![0.0; n * n];
    for c in 0..n {
        for b in 1..n {
            left[b * n + c] = left[(b - 1) * n + c] + at(b - 1, c);
        }
    }
    let mut right = vec![0.0; n * n];
    for b in 0..n {
        for c in (0..n.saturating_sub(1)).rev() {
            right[b * n + c] = right[b * n + c + 1] + at(b, c + 1);
        }
    }
    let mut outer = vec![0.0; (n + 1) * (n + 1)];
    // outer[(b) * (n+1) + c] = sum_{a < b} sum_{d > c} A_ad
    for b in 1..=n {
        for c in (0..n).rev() {
            let col = if c + 1 < n { right[(b - 1) * n + c] } else { 0.0 };
            outer[b * (n + 1) + c] = outer[(b - 1) * (n + 1) + c] + col;
        }
    }
    let mut disjoint = 0.0;
    for b in 1..n {
        for c in (b + 1)..n.saturating_sub(1) {
            disjoint += left[b * n + c] * right[b * n + c];
            disjoint += at(b, c) * outer[b * (n + 1) + c];
        }
    }

    let total = squares - 2.0 * shared + 2.0 * disjoint;
    total / (4.0 * binomial(n as u32, 4) as f64)
}

/// Naive quadruple loop over the Frobenius kernel, for cross-checking.
pub fn frob_sq_bruteforce(data: &[Vec<f64>]) -> Result<f64> {
    let n = data.len();
    if n < 4 {
        return Err(Error::PhaseOne(format!("Frobenius estimator needs n >= 4, got {n}")));
    }
    check_block(data)?;
    let mut total = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    let v: f64 = (0..data[0].len())
                        .map(|l| (data[a][l] - data[b][l]) * (data[c][l] - data[d][l]))
                        .sum();
                    total += v * v;
                }
            }
        }
    }
    Ok(total / (4.0 * binomial(n as u32, 4) as f64))
}

/// `(sum_l prod_k (X_{i_k,l} - X_{j_k,l}))^2` for one sorted tuple `i_1<..<i_q<j_1<..<j_q`.
///
/// The double sum over coordinate pairs `(l1, l2)` factorizes into the square
/// of a single sum, so the cost is O(q p).
pub fn lq_kernel(data: &[Vec<f64>], tuple: &[usize]) -> f64 {
    let q = tuple.len() / 2;
    let p = data[0].len();
    let mut s = 0.0;
    for l in 0..p {
        let mut prod = 1.0;
        for k in 0..q {
            prod *= data[tuple[k]][l] - data[tuple[q + k]][l];
        }
        s += prod;
    }
    s * s
}

/// The same kernel as an explicit O(p^2 q) double loop over `(l1, l2)`.
pub fn lq_kernel_naive(data: &[Vec<f64>], tuple: &[usize]) -> f64 {
    let q = tuple.len() / 2;
    let p = data[0].len();
    let mut s = 0.0;
    for l1 in 0..p {
        for l2 in 0..p {
            let mut prod = 1.0;
            for k in 0..q {
                let (i, j) = (tuple[k], tuple[q + k]);
                prod *= (data[i][l1] - data[j][l1]) * (data[i][l2] - data[j][l2]);
            }
            s += prod;
        }
    }
    s
}

/// Visits every increasing `len`-subset of `0..n`.
fn for_each_combination(n: usize, len: usize, mut visit: impl FnMut(&[usize])) {
    if len > n {
        return;
    }
    let mut idx: Vec<usize> = (0..len).collect();
    loop {
        visit(&idx);
        let mut i = len;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - len {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..len {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Average kernel over explicit tuples, divided by `2^q`.
pub fn lq_norm_from_tuples(data: &[Vec<f64>], q: u32, tuples: &[Vec<usize>]) -> Result<f64> {
    validate_q(q)?;
    check_block(data)?;
    if tuples.is_empty() {
        return Err(Error::PhaseOne("no index tuples supplied".into()));
    }
    let x = centered(data, data[0].len());
    let sum: f64 = tuples.iter().map(|t| lq_kernel(&x, t)).sum();
    Ok(sum / (2f64.powi(q as i32) * tuples.len() as f64))
}

/// Exhaustive (complete) general-q estimator for tiny blocks.
pub fn lq_norm_bruteforce(data: &[Vec<f64>], q: u32) -> Result<f64> {
    validate_q(q)?;
    let n = data.len();
    let two_q = 2 * q as usize;
    if n < two_q {
        return Err(Error::PhaseOne(format!("L{q} estimator needs n >= {two_q}, got {n}")));
    }
    let count = binomial(n as u32, two_q as u32);
    if count > BRUTEFORCE_LIMIT {
        return Err(Error::PhaseOne(format!("C({n}, {two_q}) = {count} tuples is too many to enumerate")));
    }
    let p = check_block(data)?;
    let x = centered(data, p);
    let mut sum = 0.0;
    for_each_combination(n, two_q, |t| sum += lq_kernel(&x, t));
    Ok(sum / (2f64.powi(q as i32) * count as f64))
}

/// Tuple `k` of an incomplete estimate: `2q` distinct sorted indices from stream `k` of `seed`.
pub fn sample_tuple(n: usize, q: u32, seed: u64, k: u64) -> Vec<usize> {
    let mut rng = replication_rng(seed, k);
    let mut t = sample_indices(&mut rng, n, 2 * q as usize).into_vec();
    t.sort_unstable();
    t
}

/// Incomplete general-q estimator from `samples` random tuples.
///
/// Tuple `k` is drawn from its own RNG stream and kernel values are summed in
/// tuple order, so the result does not depend on the thread count.
pub fn lq_norm_incomplete(data: &[Vec<f64>], q: u32, samples: usize, seed: u64) -> Result<f64> {
    validate_q(q)?;
    let n = data.len();
    if n < 2 * q as usize {
        return Err(Error::PhaseOne(format!("L{q} estimator needs n >= {}, got {n}", 2 * q)));
    }
    if samples == 0 {
        return Err(Error::PhaseOne("incomplete estimator needs at least one sample".into()));
    }
    let p = check_block(data)?;
    let x = centered(data, p);
    let values: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|k| lq_kernel(&x, &sample_tuple(n, q, seed, k)))
        .collect();
    let sum: f64 = values.iter().sum();
    Ok(sum / (2f64.powi(q as i32) * samples as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorMethod {
    Complete,
    Incomplete { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqEstimate {
    pub q: u32,
    pub value: f64,
    pub method: EstimatorMethod,
}

/// Training-block norm estimates consumed by the monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEstimates {
    pub n_train: usize,
    pub p: usize,
    /// Estimate of `||Sigma||_F^2`.
    pub frob_sq: f64,
    /// Estimates of `||Sigma||_q^q` for every monitored `q >= 4`.
    pub lq: Vec<LqEstimate>,
}

impl NormEstimates {
    /// Estimates every norm needed for `q_set`.
    ///
    /// `q = 2` uses the complete Frobenius estimator; larger `q` use the
    /// incomplete estimator with `samples` tuples (default `50 n`).
    pub fn estimate(data: &[Vec<f64>], q_set: &[u32], samples: Option<usize>, seed: u64) -> Result<Self> {
        let n = data.len();
        let p = check_block(data)?;
        let frob_sq = frob_sq_complete(data)?;
        let samples = samples.unwrap_or(DEFAULT_SAMPLES_PER_OBS * n);
        let mut lq = Vec::new();
        for &q in q_set {
            validate_q(q)?;
            if q == 2 {
                continue;
            }
            // Each q draws from its own seed so adding a q leaves the others unchanged.
            let q_seed = seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(q as u64));
            let value = lq_norm_incomplete(data, q, samples, q_seed)?;
            lq.push(LqEstimate { q, value, method: EstimatorMethod::Incomplete { samples, seed: q_seed } });
        }
        let est = Self { n_train: n, p, frob_sq, lq };
        est.check_positive()?;
        Ok(est)
    }

    /// Rejects nonpositive or non-finite estimates.
    pub fn check_positive(&self) -> Result<()> {
        if !(self.frob_sq > 0.0 && self.frob_sq.is_finite()) {
            return Err(Error::PhaseOne(format!(
                "Frobenius-norm estimate is {}; enlarge the training block",
                self.frob_sq
            )));
        }
        for e in &self.lq {
            if !(e.value > 0.0 && e.value.is_finite()) {
                return Err(Error::PhaseOne(format!(
                    "L{}-norm estimate is {}; enlarge the training block or the tuple sample count",
                    e.q, e.value
                )));
            }
        }
        Ok(())
    }

    /// `||Sigma||_F` estimate.
    pub fn sigma_f(&self) -> f64 {
        self.frob_sq.sqrt()
    }

    /// `||Sigma||_q^q` estimate; `q = 2` maps to the Frobenius estimate.
    pub fn lq(&self, q: u32) -> Option<f64> {
        if q == 2 {
            return Some(self.frob_sq);
        }
        self.lq.iter().find(|e| e.q == q).map(|e| e.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn frobenius_matches_quadruple_loop() {
        for (n, p, seed) in [(4, 2, 1), (5, 3, 2), (9, 3, 3), (13, 4, 4), (20, 1, 5)] {
            let x = block(n, p, seed);
            let fast = frob_sq_complete(&x).unwrap();
            let slow = frob_sq_bruteforce(&x).unwrap();
            assert!(close(fast, slow, 1e-9), "n {n}: {fast} vs {slow}");
        }
    }

    #[test]
    fn frobenius_minimal_block_and_constants() {
        let x = block(4, 3, 9);
        let v: f64 = (0..3).map(|l| (x[0][l] - x[1][l]) * (x[2][l] - x[3][l])).sum();
        assert!(close(frob_sq_complete(&x).unwrap(), v * v / 4.0, 1e-10));
        let same = vec![vec![1.5, -2.0]; 10];
        assert!(frob_sq_complete(&same).unwrap().abs() < 1e-20);
        assert!(frob_sq_complete(&x[..3]).is_err());
    }

    #[test]
    fn kernel_factorizes() {
        let x = block(12, 5, 7);
        for q in [2u32, 4, 6] {
            let t = sample_tuple(12, q, 3, 0);
            assert!(close(lq_kernel(&x, &t), lq_kernel_naive(&x, &t), 1e-10));
        }
    }

    #[test]
    fn bruteforce_matches_rational_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ints: Vec<Vec<i64>> = (0..8).map(|_| (0..2).map(|_| rng.random_range(-4..=4)).collect()).collect();
        let x: Vec<Vec<f64>> = ints.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let mut exact = BigRational::from_integer(0.into());
        let mut count = 0i64;
        for_each_combination(8, 4, |t| {
            let s: i64 = (0..2).map(|l| (ints[t[0]][l] - ints[t[2]][l]) * (ints[t[1]][l] - ints[t[3]][l])).sum();
            exact += BigRational::from_integer((s * s).into());
            count += 1;
        });
        exact /= BigRational::from_integer((4 * count).into());
        let exact: f64 = {
            use num_traits::ToPrimitive;
            exact.to_f64().unwrap()
        };
        assert!(close(lq_norm_bruteforce(&x, 2).unwrap(), exact, 1e-12));
    }

    #[test]
    fn exhaustive_tuples_reproduce_complete_estimator() {
        let x = block(8, 3, 21);
        let mut tuples = Vec::new();
        for_each_combination(8, 4, |t| tuples.push(t.to_vec()));
        assert_eq!(tuples.len(), 70);
        let via_tuples = lq_norm_from_tuples(&x, 2, &tuples).unwrap();
        assert!(close(via_tuples, lq_norm_bruteforce(&x, 2).unwrap(), 1e-12));
    }

    #[test]
    fn q2_general_estimator_differs_from_frobenius_estimator() {
        // Same estimand, different pairing of the four indices.
        let x = block(8, 3, 22);
        let a = lq_norm_bruteforce(&x, 2).unwrap();
        let b = frob_sq_complete(&x).unwrap();
        assert!(!close(a, b, 1e-9), "{a} {b}");
    }

    #[test]
    fn combination_enumeration() {
        let mut seen = Vec::new();
        for_each_combination(5, 3, |t| seen.push(t.to_vec()));
        assert_eq!(seen.len(), 10);
        assert_eq!(seen[0], vec![0, 1, 2]);
        assert_eq!(seen[9], vec![2, 3, 4]);
        let mut single = 0;
        for_each_combination(4, 4, |_| single += 1);
        assert_eq!(single, 1);
    }

    #[test]
    fn incomplete_is_deterministic_and_equivariant() {
        let x = block(30, 4, 5);
        let a = lq_norm_incomplete(&x, 4, 500, 9).unwrap();
        assert_eq!(a.to_bits(), lq_norm_incomplete(&x, 4, 500, 9).unwrap().to_bits());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| lq_norm_incomplete(&x, 4, 500, 9).unwrap());
        assert_eq!(a.to_bits(), b.to_bits());

        let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v * 1.5).collect()).collect();
        let c = lq_norm_incomplete(&scaled, 4, 500, 9).unwrap();
        assert!(close(c, a * 1.5f64.powi(8), 1e-9));

        let shifted: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v + 3.0).collect()).collect();
        assert!(close(lq_norm_incomplete(&shifted, 4, 500, 9).unwrap(), a, 1e-9));
        assert!(close(frob_sq_complete(&shifted).unwrap(), frob_sq_complete(&x).unwrap(), 1e-9));
    }

    #[test]
    fn tuples_are_sorted_and_distinct() {
        for k in 0..50 {
            let t = sample_tuple(20, 6, 1, k);
            assert_eq!(t.len(), 12);
            assert!(t.windows(2).all(|w| w[0] < w[1]));
            assert!(*t.last().unwrap() < 20);
        }
    }

    #[test]
    fn estimates_reject_degenerate_blocks() {
        let same = vec![vec![0.0; 3]; 20];
        assert!(matches!(NormEstimates::estimate(&same, &[2, 6], None, 1), Err(Error::PhaseOne(_))));
        assert!(lq_norm_incomplete(&block(11, 2, 1), 6, 10, 1).is_err());
        assert!(lq_norm_incomplete(&block(12, 2, 1), 6, 0, 1).is_err());
        let est = NormEstimates::estimate(&block(40, 5, 2), &[2, 4], Some(400), 3).unwrap();
        assert_eq!(est.lq(2), Some(est.frob_sq));
        assert!(est.lq(4).unwrap() > 0.0);
        assert!(est.lq(6).is_none());
    }
}
