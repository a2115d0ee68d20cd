//! Paired significance tests between two systems on the same test set.

use crate::rng::Rng;

/// Exact McNemar test: two-sided binomial test of `b` successes in `b + c`
/// trials at p = 1/2, where `b` counts examples only A gets right and `c`
/// those only B gets right. No disagreement gives p = 1.
pub fn mcnemar(preds_a: &[usize], preds_b: &[usize], golds: &[usize]) -> f64 {
    assert!(preds_a.len() == golds.len() && preds_b.len() == golds.len());
    let mut b = 0u64;
    let mut c = 0u64;
    for ((&pa, &pb), &g) in preds_a.iter().zip(preds_b).zip(golds) {
        match (pa == g, pb == g) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    mcnemar_counts(b, c)
}

pub fn mcnemar_counts(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k = b.min(c);
    // P(X <= k) for X ~ Bin(n, 1/2), summed in log space
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_choose = 0.0;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (ln_choose + ln_half_n).exp();
    }
    (2.0 * tail).min(1.0)
}

/// One-sided paired bootstrap for "A is better than B" under `metric`.
///
/// Resamples example indices with replacement `resamples` times and returns
/// `(#{delta* <= 0} + 1) / (resamples + 1)`.
pub fn bootstrap_test<F>(
    metric: F,
    preds_a: &[usize],
    preds_b: &[usize],
    golds: &[usize],
    resamples: usize,
    seed: u64,
) -> f64
where
    F: Fn(&[usize], &[usize]) -> f64,
{
    let n = golds.len();
    assert!(preds_a.len() == n && preds_b.len() == n && n > 0);
    let mut rng = Rng::new(seed);
    let mut pa = vec![0; n];
    let mut pb = vec![0; n];
    let mut gs = vec![0; n];
    let mut not_better = 0usize;
    for _ in 0..resamples {
        for i in 0..n {
            let j = rng.below(n);
            pa[i] = preds_a[j];
            pb[i] = preds_b[j];
            gs[i] = golds[j];
        }
        if metric(&pa, &gs) - metric(&pb, &gs) <= 0.0 {
            not_better += 1;
        }
    }
    (not_better + 1) as f64 / (resamples + 1) as f64
}
