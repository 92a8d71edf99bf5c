//! Paired two-sided Student t-test and percent-improvement summaries.
//!
//! The t tail probability goes through the regularized incomplete beta
//! function, evaluated with a modified Lentz continued fraction.

use serde::Serialize;
use thiserror::Error;

const CF_TOLERANCE: f64 = 1e-12;
const CF_MAX_ITER: usize = 300;
const TINY: f64 = 1e-300;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("paired sample needs equal lengths >= 2 (got {a} and {b})")]
    BadSample { a: usize, b: usize },
    #[error("all paired differences are identical; t is undefined")]
    DegenerateDifferences,
    #[error("baseline mean must be positive")]
    ZeroBaseline,
    #[error("incomplete beta arguments out of domain: a={a}, b={b}, x={x}")]
    Domain { a: f64, b: f64, x: f64 },
}

/// Lanczos approximation (g = 7, n = 9) of `ln Γ(x)` for `x > 0`.
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
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_TOLERANCE {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64, StatsError> {
    if !(a > 0.0 && b > 0.0 && (0.0..=1.0).contains(&x)) {
        return Err(StatsError::Domain { a, b, x });
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The continued fraction converges fast for x < (a + 1) / (a + b + 2); use symmetry otherwise.
    Ok(if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    })
}

/// `P(|T| >= |t|)` for Student t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x).expect("x in [0, 1]").clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub labels: Vec<String>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_two_sided: f64,
    pub mean_improvement_pct: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Differences are `a - b`.
pub fn paired_t_test(sample: &PairedSample) -> Result<TestResult, StatsError> {
    let (a, b) = (&sample.a, &sample.b);
    if a.len() != b.len() || a.len() < 2 {
        return Err(StatsError::BadSample { a: a.len(), b: b.len() });
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let var = d.iter().map(|x| (x - md).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(StatsError::DegenerateDifferences);
    }
    let t = md / (var.sqrt() / (n as f64).sqrt());
    let df = n - 1;
    let improvement = percent_improvement(a, b).unwrap_or(f64::NAN);
    Ok(TestResult { t_statistic: t, degrees_of_freedom: df, p_two_sided: student_t_two_sided(t, df as f64), mean_improvement_pct: improvement })
}

/// `100 × (mean(a) − mean(b)) / mean(a)`: positive when `b` is lower than the baseline `a`.
pub fn percent_improvement(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let ma = mean(a);
    if ma.is_nan() || ma <= 0.0 {
        return Err(StatsError::ZeroBaseline);
    }
    Ok(100.0 * (ma - mean(b)) / ma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(d: &[f64]) -> PairedSample {
        PairedSample { labels: vec![], a: d.to_vec(), b: vec![0.0; d.len()] }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_reference_values() {
        // Reference values from scipy.special.betainc.
        assert!((regularized_incomplete_beta(2.5, 0.5, 0.3).unwrap() - 0.018927124071945658).abs() < 1e-12);
        assert!((regularized_incomplete_beta(1.0, 1.0, 0.4).unwrap() - 0.4).abs() < 1e-14);
        assert!((regularized_incomplete_beta(0.5, 0.5, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!(regularized_incomplete_beta(0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn t_test_on_one_two_three() {
        let r = paired_t_test(&sample(&[1.0, 2.0, 3.0])).unwrap();
        assert!((r.t_statistic - 3.4641016151377544).abs() < 1e-12);
        assert_eq!(r.degrees_of_freedom, 2);
        assert!((r.p_two_sided - 0.07417990022744853).abs() < 1e-10);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let s = PairedSample { labels: vec![], a: vec![1.0, 2.0], b: vec![1.0, 2.0] };
        assert_eq!(paired_t_test(&s), Err(StatsError::DegenerateDifferences));
    }

    #[test]
    fn negation_flips_t_only() {
        let p = paired_t_test(&sample(&[1.0, 2.5, 0.5, 4.0])).unwrap();
        let n = paired_t_test(&sample(&[-1.0, -2.5, -0.5, -4.0])).unwrap();
        assert_eq!(p.t_statistic, -n.t_statistic);
        assert_eq!(p.p_two_sided, n.p_two_sided);
    }

    #[test]
    fn short_samples_rejected() {
        assert!(matches!(paired_t_test(&sample(&[1.0])), Err(StatsError::BadSample { .. })));
    }

    #[test]
    fn improvement_percentages() {
        assert!((percent_improvement(&[100.0], &[66.0]).unwrap() - 34.0).abs() < 1e-12);
        assert_eq!(percent_improvement(&[5.0, 7.0], &[5.0, 7.0]).unwrap(), 0.0);
        let p = percent_improvement(&[26246.0], &[22818.0]).unwrap();
        assert!((p - 13.061038).abs() < 1e-5);
        assert_eq!(percent_improvement(&[0.0], &[1.0]), Err(StatsError::ZeroBaseline));
    }
}
