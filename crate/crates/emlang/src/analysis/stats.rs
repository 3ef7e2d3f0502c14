//! Two-sample significance tests and the special functions they need.
//!
//! Welch's unequal-variance t-test is the default; a Mann–Whitney U test
//! (normal approximation with tie correction) is the swappable alternative.
//! The Student-t CDF is evaluated through the regularised incomplete beta
//! function; reference values in the tests are frozen from SciPy.

use alloc::vec::Vec;

use crate::fmath;

/// Sample mean.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n−1 denominator); 0 for fewer than 2 values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    fmath::sqrt(ss / (values.len() - 1) as f64)
}

/// Percentile with linear interpolation between order statistics
/// (rank = p/100 · (n−1)).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty sample");
    assert!((0.0..=100.0).contains(&p));
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN samples"));
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Which two-sample test the verdict engine runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TestKind {
    Welch,
    MannWhitney,
}

/// Two-sided test outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sided two-sample test of location difference.
pub fn two_sample_test(kind: TestKind, a: &[f64], b: &[f64]) -> TestResult {
    match kind {
        TestKind::Welch => welch_t_test(a, b),
        TestKind::MannWhitney => mann_whitney_u(a, b),
    }
}

/// Welch's unequal-variance t-test, two-sided. Degenerate zero-variance
/// samples short-circuit: equal means give p = 1, distinct means p = 0.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> TestResult {
    assert!(a.len() >= 2 && b.len() >= 2, "need ≥ 2 samples per side");
    let (ma, mb) = (mean(a), mean(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (sample_sd(a), sample_sd(b));
    let (va, vb) = (sa * sa, sb * sb);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return TestResult {
            statistic: 0.0,
            p_value: if ma == mb { 1.0 } else { 0.0 },
        };
    }
    let t = (ma - mb) / fmath::sqrt(se2);
    // Welch–Satterthwaite degrees of freedom
    let df = se2 * se2
        / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    let p = 2.0 * (1.0 - student_t_cdf(fmath::abs(t), df));
    TestResult {
        statistic: t,
        p_value: p.clamp(0.0, 1.0),
    }
}

/// Mann–Whitney U, two-sided, normal approximation with tie correction and
/// continuity correction (SciPy's `method="asymptotic"`).
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> TestResult {
    assert!(!a.is_empty() && !b.is_empty());
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;

    // rank the pooled sample, mean ranks on ties
    let mut pooled: Vec<(f64, usize)> = a
        .iter()
        .map(|&v| (v, 0usize))
        .chain(b.iter().map(|&v| (v, 1usize)))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("non-NaN samples"));
    let n = pooled.len();
    let mut ranks = alloc::vec![0.0f64; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for r in ranks.iter_mut().take(j + 1).skip(i) {
            *r = avg_rank;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let r1: f64 = pooled
        .iter()
        .zip(&ranks)
        .filter(|((_, side), _)| *side == 0)
        .map(|(_, &r)| r)
        .sum();
    let u1 = r1 - n1 * (n1 + 1.0) / 2.0;
    let u = u1.min(n1 * n2 - u1);

    let mu = n1 * n2 / 2.0;
    let nf = n as f64;
    let sigma2 = n1 * n2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if sigma2 <= 0.0 {
        return TestResult {
            statistic: u,
            p_value: 1.0,
        };
    }
    // continuity correction towards the mean
    let z = (u - mu + 0.5) / fmath::sqrt(sigma2);
    let p = (2.0 * normal_cdf(z)).clamp(0.0, 1.0);
    TestResult {
        statistic: u,
        p_value: p,
    }
}

/// Standard normal CDF via erfc.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * fmath::erfc(-z / core::f64::consts::SQRT_2)
}

/// CDF of Student's t distribution with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    let x = df / (df + t * t);
    let tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// ln Γ(x) by Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = core::f64::consts::PI;
        return fmath::ln(pi / fmath::abs(libm::sin(pi * x))) - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * fmath::ln(2.0 * core::f64::consts::PI) + (x + 0.5) * fmath::ln(t) - t + fmath::ln(acc)
}

/// Regularised incomplete beta function `I_x(a, b)` via Lentz's continued
/// fraction.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * fmath::ln(x) + b * fmath::ln(1.0 - x);
    let front = fmath::exp(ln_front);
    // use the symmetry that converges fastest
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - fmath::exp(
            ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
                + b * fmath::ln(1.0 - x)
                + a * fmath::ln(x),
        ) * beta_cf(b, a, 1.0 - x)
            / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if fmath::abs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if fmath::abs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if fmath::abs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if fmath::abs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if fmath::abs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if fmath::abs(del - 1.0) < EPS {
            break;
        }
    }
    h
}
