//! Rank-based hypothesis tests and the special functions behind their
//! asymptotic p-values.
//!
//! Ties get mid-ranks everywhere. All p-values are two-sided.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample is empty")]
    Empty,
    #[error("samples differ in length: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("correlation undefined for constant input")]
    Constant,
    #[error("non-finite value in sample")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    KruskalWallis,
    KolmogorovSmirnov,
    WilcoxonSignedRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: Vec<usize>,
    pub method: TestMethod,
    /// Set when the data carry no information (all values or all
    /// differences identical) and `p_value` is 1 by convention.
    pub degenerate: bool,
    /// `p_value` comes from the exact permutation distribution rather than
    /// an asymptotic approximation.
    #[serde(default)]
    pub exact: bool,
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// 1-based mid-ranks and the sizes of every tie block (including size 1).
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

fn tie_sum(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum()
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Length(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: x.len(),
        });
    }
    check_finite(x)?;
    check_finite(y)?;
    pearson(&midranks(x).0, &midranks(y).0).ok_or(StatsError::Constant)
}

/// Largest pooled sample size for which [`kruskal_wallis`] enumerates the
/// exact permutation distribution. The chi-square approximation is off by
/// up to about 0.1 in p at this size.
pub const KW_EXACT_MAX_N: usize = 10;

/// Fraction of all assignments of the pooled mid-ranks to groups of the
/// given sizes whose `Σ R_g²/n_g` (and hence H) reaches the observed value.
fn kruskal_wallis_exact_p(ranks: &[f64], sizes: &[usize], observed: f64) -> f64 {
    fn rec(
        g: usize,
        remaining: u32,
        acc: f64,
        ranks: &[f64],
        sizes: &[usize],
        observed: f64,
        counts: &mut (u64, u64),
    ) {
        let rank_sum = |mask: u32| -> f64 {
            (0..ranks.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ranks[i])
                .sum()
        };
        if g + 1 == sizes.len() {
            let r = rank_sum(remaining);
            let s = acc + r * r / sizes[g] as f64;
            counts.1 += 1;
            if s >= observed - 1e-9 * observed.abs().max(1.0) {
                counts.0 += 1;
            }
            return;
        }
        // Every submask of `remaining` with the group's size.
        let mut sub = remaining;
        loop {
            if sub.count_ones() as usize == sizes[g] {
                let r = rank_sum(sub);
                rec(
                    g + 1,
                    remaining & !sub,
                    acc + r * r / sizes[g] as f64,
                    ranks,
                    sizes,
                    observed,
                    counts,
                );
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & remaining;
        }
    }
    let all = (1u32 << ranks.len()) - 1;
    let mut counts = (0u64, 0u64);
    rec(0, all, 0.0, ranks, sizes, observed, &mut counts);
    counts.0 as f64 / counts.1 as f64
}

/// Kruskal–Wallis H with tie correction. The p-value is the exact
/// permutation probability for pooled samples of at most
/// [`KW_EXACT_MAX_N`] values and the chi-square approximation with
/// `groups − 1` degrees of freedom beyond that.
pub fn kruskal_wallis(samples: &[&[f64]]) -> Result<TestResult, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: samples.len(),
        });
    }
    if samples.iter().any(|s| s.is_empty()) {
        return Err(StatsError::Empty);
    }
    let pooled: Vec<f64> = samples.iter().flat_map(|s| s.iter().copied()).collect();
    check_finite(&pooled)?;
    let total = pooled.len();
    if total < 3 {
        return Err(StatsError::TooFew {
            needed: 3,
            got: total,
        });
    }
    let n_sizes: Vec<usize> = samples.iter().map(|s| s.len()).collect();
    let (ranks, ties) = midranks(&pooled);
    let nf = total as f64;
    let correction = 1.0 - tie_sum(&ties) / (nf.powi(3) - nf);
    if correction <= 0.0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n: n_sizes,
            method: TestMethod::KruskalWallis,
            degenerate: true,
            exact: false,
        });
    }
    let mut off = 0;
    let mut sum_sq = 0.0;
    for &len in &n_sizes {
        let r: f64 = ranks[off..off + len].iter().sum();
        sum_sq += r * r / len as f64;
        off += len;
    }
    let h = (12.0 / (nf * (nf + 1.0)) * sum_sq - 3.0 * (nf + 1.0)) / correction;
    let h = h.max(0.0);
    let exact = total <= KW_EXACT_MAX_N;
    let p_value = if exact {
        kruskal_wallis_exact_p(&ranks, &n_sizes, sum_sq)
    } else {
        chi2_sf(h, (samples.len() - 1) as f64)
    };
    Ok(TestResult {
        statistic: h,
        p_value,
        n: n_sizes,
        method: TestMethod::KruskalWallis,
        degenerate: false,
        exact,
    })
}

/// Largest gap between the two empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Largest pooled sample size for which [`ks_two_sample`] enumerates every
/// split of the pooled values. Below it the asymptotic p can be off by more
/// than 0.05.
pub const KS_EXACT_MAX_N: usize = 16;

/// Fraction of all splits of `pooled` into sizes `n_a` and the rest whose
/// D reaches the observed value.
fn ks_exact_p(pooled: &[f64], n_a: usize, observed: f64) -> f64 {
    let all = (1u32 << pooled.len()) - 1;
    let (mut hit, mut total) = (0u64, 0u64);
    let (mut a, mut b) = (Vec::with_capacity(n_a), Vec::with_capacity(pooled.len()));
    for mask in 0..=all {
        if mask.count_ones() as usize != n_a {
            continue;
        }
        a.clear();
        b.clear();
        for (i, &v) in pooled.iter().enumerate() {
            if mask >> i & 1 == 1 {
                a.push(v);
            } else {
                b.push(v);
            }
        }
        total += 1;
        if ks_statistic(&a, &b) >= observed - 1e-12 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

/// Two-sample Kolmogorov–Smirnov test. The p-value is exact (over all
/// splits of the pooled sample) up to [`KS_EXACT_MAX_N`] values, otherwise
/// the asymptotic Kolmogorov distribution at `sqrt(n_a n_b / (n_a + n_b)) · D`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    check_finite(a)?;
    check_finite(b)?;
    let d = ks_statistic(a, b);
    let exact = a.len() + b.len() <= KS_EXACT_MAX_N;
    let p_value = if exact {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        ks_exact_p(&pooled, a.len(), d)
    } else {
        let en = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
        kolmogorov_sf(en.sqrt() * d)
    };
    Ok(TestResult {
        statistic: d,
        p_value,
        n: vec![a.len(), b.len()],
        method: TestMethod::KolmogorovSmirnov,
        degenerate: false,
        exact,
    })
}

/// Minimum number of non-zero paired differences the normal approximation
/// is used for.
pub const WILCOXON_MIN_PAIRS: usize = 5;

/// Wilcoxon signed-rank test on `a − b`. Zero differences are dropped;
/// `W = min(W+, W−)`; p from the normal approximation with tie and
/// continuity corrections.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::Length(a.len(), b.len()));
    }
    check_finite(a)?;
    check_finite(b)?;
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n: vec![0],
            method: TestMethod::WilcoxonSignedRank,
            degenerate: true,
            exact: false,
        });
    }
    let n = diffs.len();
    if n < WILCOXON_MIN_PAIRS {
        return Err(StatsError::TooFew {
            needed: WILCOXON_MIN_PAIRS,
            got: n,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let nf = n as f64;
    let w_minus = nf * (nf + 1.0) / 2.0 - w_plus;
    let w = w_plus.min(w_minus);
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_sum(&ties) / 48.0;
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((mean - w).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * normal_sf(z)).min(1.0)
    };
    Ok(TestResult {
        statistic: w,
        p_value,
        n: vec![n],
        method: TestMethod::WilcoxonSignedRank,
        degenerate: false,
        exact: false,
    })
}

// ---------------------------------------------------------------------------
// Special functions

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..10_000 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Chi-square survival function.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(df / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Complementary error function via `erfc(x) = Q(1/2, x²)`.
pub fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        gamma_q(0.5, x * x)
    } else {
        2.0 - gamma_q(0.5, x * x)
    }
}

/// Standard normal survival function `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Small-lambda series for the CDF.
        let pi = std::f64::consts::PI;
        let y = -pi * pi / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| ((2 * k - 1) as f64).powi(2) * y)
            .map(f64::exp)
            .sum();
        1.0 - (2.0 * pi).sqrt() / lambda * s
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        2.0 * s
    };
    p.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn midranks_average_ties() {
        let (r, t) = midranks(&[10.0, 20.0, 10.0, 30.0]);
        assert_eq!(r, vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(t, vec![2, 1, 1]);
    }

    #[test]
    fn spearman_cases() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_abs_diff_eq!(spearman(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(spearman(&x, &neg).unwrap(), -1.0, epsilon = 1e-12);
        // Σd² = 2 → 1 − 6·2 / (5·24).
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        assert_abs_diff_eq!(spearman(&x, &y).unwrap(), 0.8, epsilon = 1e-12);
        assert_eq!(spearman(&x, &[1.0; 5]), Err(StatsError::Constant));
        assert!(matches!(spearman(&[1.0], &[1.0]), Err(StatsError::TooFew { .. })));
    }

    #[test]
    fn kruskal_wallis_cases() {
        let same = [1.0, 2.0, 3.0];
        let r = kruskal_wallis(&[&same, &same]).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p_value, 1.0, epsilon = 1e-12);

        // Rank sums 6 and 15: 12/42·(36/3 + 225/3) − 21 = 27/7.
        let r = kruskal_wallis(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        assert_abs_diff_eq!(r.statistic, 27.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.statistic, 3.857, epsilon = 1e-3);
        // Only the two fully separated splits of 20 reach this H.
        assert!(r.exact);
        assert_abs_diff_eq!(r.p_value, 0.1, epsilon = 1e-12);
        let big: Vec<f64> = (0..12).map(f64::from).collect();
        let r = kruskal_wallis(&[&big[..6], &big[6..]]).unwrap();
        assert!(!r.exact);

        let flat = kruskal_wallis(&[&[2.0, 2.0], &[2.0, 2.0]]).unwrap();
        assert!(flat.degenerate);
        assert_eq!((flat.statistic, flat.p_value), (0.0, 1.0));
        assert!(kruskal_wallis(&[&[1.0, 2.0]]).is_err());
        assert!(kruskal_wallis(&[&[1.0], &[]]).is_err());
        assert!(kruskal_wallis(&[&[1.0], &[2.0]]).is_err());
    }

    #[test]
    fn ks_cases() {
        let a = [0.3, 0.1, 0.9];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_abs_diff_eq!(r.p_value, 1.0, epsilon = 1e-12);
        let r = ks_two_sample(&[0.0; 4], &[1.0; 4]).unwrap();
        assert_eq!(r.statistic, 1.0);
        // Only the observed split and its mirror reach D = 1: 2 of C(8, 4).
        assert!(r.exact);
        assert_abs_diff_eq!(r.p_value, 2.0 / 70.0, epsilon = 1e-12);
        let r = ks_two_sample(&[1.0, 2.0, 3.0, 4.0], &[1.5, 2.5, 3.5, 4.5]).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.25, epsilon = 1e-12);
        assert_eq!(ks_two_sample(&[], &[1.0]), Err(StatsError::Empty));
    }

    #[test]
    fn wilcoxon_cases() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = wilcoxon_signed_rank(&a, &a).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);

        let b: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value < 0.05);

        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[2.0, 3.0]),
            Err(StatsError::TooFew { .. })
        ));
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0], &[2.0, 3.0]),
            Err(StatsError::Length(1, 2))
        ));
    }

    #[test]
    fn special_function_spot_values() {
        assert_abs_diff_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-12);
        // chi2 with 2 dof: sf = exp(-x/2).
        assert_abs_diff_eq!(chi2_sf(3.0, 2.0), (-1.5f64).exp(), epsilon = 1e-13);
        assert_abs_diff_eq!(normal_sf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_sf(1.959963984540054), 0.025, epsilon = 1e-12);
        // Kolmogorov: P(K > 1.36) ≈ 0.0505, the 5% critical value.
        assert_abs_diff_eq!(kolmogorov_sf(1.3580986393225505), 0.05, epsilon = 1e-9);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn kolmogorov_branches_agree_at_the_switch() {
        let lo = {
            let pi = std::f64::consts::PI;
            let l: f64 = 1.18;
            let y = -pi * pi / (8.0 * l * l);
            let s: f64 = (1..=20).map(|k| (((2 * k - 1) as f64).powi(2) * y).exp()).sum();
            1.0 - (2.0 * pi).sqrt() / l * s
        };
        assert_abs_diff_eq!(lo, kolmogorov_sf(1.18), epsilon = 1e-12);
    }
}
