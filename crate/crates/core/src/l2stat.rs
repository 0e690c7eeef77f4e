//! The L2-norm monitoring statistic.
//!
//! For a candidate break `m` inside the window `1..=k`,
//!
//! ```text
//! G_k(m) = (k-m)(k-m-1) S(1, m) + m(m-1) S(m+1, k) - (m-1)(k-m-1) B_m'(B_k - B_m)
//! ```
//!
//! and the statistic at time `k` is `max_{n+1 <= m <= k-2} G_k(m) / (n^3 * sigma_f)`.
//! Every `G_k(m)` costs one O(p) pass over the stored prefix sums, so one new
//! time step costs O(k p).

use crate::error::{Error, Result};
use crate::streamcore::{dot, CusumState};

/// Per-time-step scan of `G_k(m)` over the trimmed range `m = n+1 ..= k-2`.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Scan {
    pub k: usize,
    /// Phase-I length, so that `g_values[i]` belongs to `m = n + 1 + i`.
    pub n: usize,
    pub g_values: Vec<f64>,
    pub t_stat: f64,
    pub argmax_m: usize,
    /// Coordinate-level multiply-adds spent on this scan.
    pub ops: u64,
}

impl L2Scan {
    pub fn g(&self, m: usize) -> Option<f64> {
        m.checked_sub(self.n + 1).and_then(|i| self.g_values.get(i)).copied()
    }

    pub fn max_g(&self) -> f64 {
        self.g_values[self.argmax_m - self.n - 1]
    }
}

fn check_range(state: &CusumState, n: usize, m: usize, k: usize) -> Result<()> {
    if m < n + 1 || m + 2 > k || k > state.t_now() {
        return Err(Error::Index(format!(
            "G_k(m) needs n+1 <= m <= k-2 and k <= {} (n = {n}, m = {m}, k = {k})",
            state.t_now()
        )));
    }
    Ok(())
}

/// `G_k(m)` from the prefix sums.
pub fn g_stat(state: &CusumState, n: usize, m: usize, k: usize) -> Result<f64> {
    check_range(state, n, m, k)?;
    Ok(g_unchecked(state, m, k))
}

#[inline]
fn g_unchecked(state: &CusumState, m: usize, k: usize) -> f64 {
    let bm = state.prefix(m);
    let bk = state.prefix(k);
    let mut post_sq = 0.0;
    let mut cross = 0.0;
    for (&hi, &lo) in bk.iter().zip(bm) {
        let d = hi - lo;
        post_sq += d * d;
        cross += lo * d;
    }
    let pre = 0.5 * (state.prefix_sq(m) - state.energy(m));
    let post = 0.5 * (post_sq - (state.energy(k) - state.energy(m)));
    let (mf, kf) = (m as f64, k as f64);
    (kf - mf) * (kf - mf - 1.0) * pre + mf * (mf - 1.0) * post - (mf - 1.0) * (kf - mf - 1.0) * cross
}

/// Scans all admissible `m` at time `k` and normalizes the maximum.
///
/// Ties in the maximum resolve to the smallest `m`.
pub fn t2_stat(state: &CusumState, n: usize, k: usize, sigma_f_hat: f64) -> Result<L2Scan> {
    if !(sigma_f_hat > 0.0 && sigma_f_hat.is_finite()) {
        return Err(Error::PhaseOne(format!(
            "Frobenius-norm estimate must be positive, got {sigma_f_hat}"
        )));
    }
    if k < n + 3 {
        return Err(Error::Index(format!("T_(n,2)(k) needs k >= n + 3 = {}, got {k}", n + 3)));
    }
    check_range(state, n, n + 1, k)?;
    let g_values: Vec<f64> = (n + 1..=k - 2).map(|m| g_unchecked(state, m, k)).collect();
    let (best, max_g) = argmax_first(&g_values);
    let nf = n as f64;
    Ok(L2Scan {
        k,
        n,
        ops: (g_values.len() * state.dim()) as u64,
        t_stat: max_g / (nf * nf * nf * sigma_f_hat),
        argmax_m: n + 1 + best,
        g_values,
    })
}

/// Index and value of the first maximum.
pub(crate) fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    (best, values[best])
}

/// Evaluates `G_k(m)` straight from the raw observations with O(k^2 p) loops.
///
/// `data[i]` is `X_{i+1}`. Used to cross-check the prefix-sum route.
pub fn g_stat_bruteforce(data: &[Vec<f64>], n: usize, m: usize, k: usize) -> Result<f64> {
    if m < n + 1 || m + 2 > k || k > data.len() {
        return Err(Error::Index(format!(
            "G_k(m) needs n+1 <= m <= k-2 <= {} (n = {n}, m = {m}, k = {k})",
            data.len().saturating_sub(2)
        )));
    }
    let x = |i: usize| &data[i - 1];
    let mut pre = 0.0;
    for i in 1..=m {
        for j in (i + 1)..=m {
            pre += dot(x(i), x(j));
        }
    }
    let mut post = 0.0;
    for i in (m + 1)..=k {
        for j in (i + 1)..=k {
            post += dot(x(i), x(j));
        }
    }
    let mut cross = 0.0;
    for i in 1..=m {
        for j in (m + 1)..=k {
            cross += dot(x(i), x(j));
        }
    }
    let (mf, kf) = (m as f64, k as f64);
    Ok((kf - mf) * (kf - mf - 1.0) * pre + mf * (mf - 1.0) * post
        - (mf - 1.0) * (kf - mf - 1.0) * cross)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streamcore::Observation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stream(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
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

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    /// Half the ordered-distinct-tuple definition, in exact integer arithmetic.
    fn g_exact(data: &[Vec<i64>], m: usize, k: usize) -> i128 {
        let p = data[0].len();
        let mut total: i128 = 0;
        for l in 0..p {
            for i1 in 1..=m {
                for i2 in 1..=m {
                    if i1 == i2 {
                        continue;
                    }
                    for j1 in (m + 1)..=k {
                        for j2 in (m + 1)..=k {
                            if j1 == j2 {
                                continue;
                            }
                            let a = (data[i1 - 1][l] - data[j1 - 1][l]) as i128;
                            let b = (data[i2 - 1][l] - data[j2 - 1][l]) as i128;
                            total += a * b;
                        }
                    }
                }
            }
        }
        assert_eq!(total % 2, 0);
        total / 2
    }

    #[test]
    fn zero_data_gives_zero() {
        let data = vec![vec![0.0; 3]; 16];
        let st = state_from(&data);
        for k in 11..=16 {
            for m in 9..=k - 2 {
                assert_eq!(g_stat(&st, 8, m, k).unwrap(), 0.0);
                assert_eq!(g_stat_bruteforce(&data, 8, m, k).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn single_nonzero_observation_gives_zero() {
        let mut data = vec![vec![0.0; 2]; 16];
        data[3][1] = 2.5;
        for k in 11..=16 {
            for m in 9..=k - 2 {
                assert_eq!(g_stat_bruteforce(&data, 8, m, k).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn bruteforce_matches_exact_integer_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let data: Vec<Vec<i64>> =
            (0..16).map(|_| (0..2).map(|_| rng.random_range(-5..=5)).collect()).collect();
        let fdata: Vec<Vec<f64>> =
            data.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let st = state_from(&fdata);
        for k in 11..=16 {
            for m in 9..=k - 2 {
                let exact = g_exact(&data, m, k) as f64;
                assert_eq!(g_stat_bruteforce(&fdata, 8, m, k).unwrap(), exact);
                assert!(close(g_stat(&st, 8, m, k).unwrap(), exact, 1e-12));
            }
        }
    }

    #[test]
    fn recursive_matches_bruteforce_on_random_streams() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(8..=12);
            let p = rng.random_range(1..=5);
            let data = stream(2 * n, p, 1000 + seed);
            let st = state_from(&data);
            for k in n + 3..=2 * n {
                for m in n + 1..=k - 2 {
                    let fast = g_stat(&st, n, m, k).unwrap();
                    let slow = g_stat_bruteforce(&data, n, m, k).unwrap();
                    assert!(close(fast, slow, 1e-9), "seed {seed} m {m} k {k}: {fast} vs {slow}");
                }
            }
        }
    }

    #[test]
    fn translation_leaves_g_unchanged() {
        let data = stream(16, 3, 4);
        let shift = [0.7, -1.3, 2.1];
        let shifted: Vec<Vec<f64>> =
            data.iter().map(|r| r.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
        let (a, b) = (state_from(&data), state_from(&shifted));
        for k in 11..=16 {
            for m in 9..=k - 2 {
                let (ga, gb) = (g_stat(&a, 8, m, k).unwrap(), g_stat(&b, 8, m, k).unwrap());
                assert!(close(ga, gb, 1e-9), "m {m} k {k}: {ga} vs {gb}");
            }
        }
    }

    #[test]
    fn single_admissible_break() {
        let data = stream(11, 3, 9);
        let st = state_from(&data);
        let scan = t2_stat(&st, 8, 11, 2.0).unwrap();
        assert_eq!(scan.g_values.len(), 1);
        assert_eq!(scan.argmax_m, 9);
        assert_eq!(scan.t_stat, g_stat(&st, 8, 9, 11).unwrap() / (512.0 * 2.0));
    }

    #[test]
    fn scaling_data_and_norm_leaves_statistic_unchanged() {
        let data = stream(16, 4, 12);
        let lambda = 3.7;
        let scaled: Vec<Vec<f64>> =
            data.iter().map(|r| r.iter().map(|v| v * lambda).collect()).collect();
        let (a, b) = (state_from(&data), state_from(&scaled));
        for k in 11..=16 {
            let sa = t2_stat(&a, 8, k, 1.3).unwrap();
            let sb = t2_stat(&b, 8, k, 1.3 * lambda * lambda).unwrap();
            assert!(close(sa.t_stat, sb.t_stat, 1e-9));
            assert_eq!(sa.argmax_m, sb.argmax_m);
        }
    }

    #[test]
    fn scan_matches_bruteforce_scan() {
        let data = stream(16, 3, 31);
        let st = state_from(&data);
        for k in 11..=16 {
            let scan = t2_stat(&st, 8, k, 0.9).unwrap();
            let brute: Vec<f64> =
                (9..=k - 2).map(|m| g_stat_bruteforce(&data, 8, m, k).unwrap()).collect();
            let (i, g) = argmax_first(&brute);
            assert_eq!(scan.argmax_m, 9 + i);
            assert!(close(scan.t_stat, g / (512.0 * 0.9), 1e-9));
            assert_eq!(scan.ops, ((k - 10) * 3) as u64);
        }
    }

    #[test]
    fn ties_resolve_to_smallest_break() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0, 2.0]), (1, 3.0));
    }

    #[test]
    fn rejects_invalid_arguments() {
        let st = state_from(&stream(16, 2, 1));
        assert!(g_stat(&st, 8, 8, 12).is_err());
        assert!(g_stat(&st, 8, 11, 12).is_err());
        assert!(g_stat(&st, 8, 9, 17).is_err());
        assert!(t2_stat(&st, 8, 10, 1.0).is_err());
        assert!(t2_stat(&st, 8, 12, 0.0).is_err());
        assert!(t2_stat(&st, 8, 12, -1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn scale_equivariance(seed in 0u64..10_000, lambda in 0.1f64..5.0) {
            let data = stream(14, 3, seed);
            let scaled: Vec<Vec<f64>> =
                data.iter().map(|r| r.iter().map(|v| v * lambda).collect()).collect();
            let (a, b) = (state_from(&data), state_from(&scaled));
            for m in 9..=12 {
                let ga = g_stat(&a, 8, m, 14).unwrap();
                let gb = g_stat(&b, 8, m, 14).unwrap();
                prop_assert!(close(ga * lambda * lambda, gb, 1e-9));
            }
        }

        #[test]
        fn within_block_permutation_invariance(seed in 0u64..10_000, m in 9usize..=12) {
            let data = stream(14, 2, seed);
            let g = g_stat(&state_from(&data), 8, m, 14).unwrap();
            let mut permuted = data.clone();
            permuted[..m].reverse();
            permuted[m..].rotate_left(1);
            let gp = g_stat(&state_from(&permuted), 8, m, 14).unwrap();
            prop_assert!(close(g, gp, 1e-9));
        }
    }
}
