//! Log-gamma, the regularized incomplete gamma function and the χ² quantile.

use crate::error::{Error, Result};

const MAX_ITER: usize = 500;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// Quantile solve stops once the bracket is narrower than this.
const QUANTILE_TOL: f64 = 1e-12;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x) and its complement Q(a, x).
///
/// Series for `x < a + 1`, Lentz continued fraction for Q otherwise.
pub fn gamma_inc_pq(a: f64, x: f64) -> (f64, f64) {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    let log_prefactor = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        let p = (log_prefactor.exp() * sum).min(1.0);
        (p, 1.0 - p)
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
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
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        let q = (log_prefactor.exp() * h).min(1.0);
        (1.0 - q, q)
    }
}

pub fn gamma_inc_lower(a: f64, x: f64) -> f64 {
    gamma_inc_pq(a, x).0
}

/// χ² CDF with `dof` degrees of freedom.
pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    gamma_inc_lower(dof as f64 / 2.0, x / 2.0)
}

/// Inverse χ² CDF: the `x` with `P(dof/2, x/2) = level`.
///
/// Bracketed bisection on the monotone CDF, so the result is monotone in
/// `level` and accurate to well below 1e-8 absolute.
pub fn chi2_quantile(level: f64, dof: usize) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::LevelOutOfRange(level));
    }
    if dof == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let a = dof as f64 / 2.0;
    // Compare in whichever tail keeps precision.
    let below = |x: f64| {
        let (p, q) = gamma_inc_pq(a, x / 2.0);
        if level <= 0.5 {
            p < level
        } else {
            q > 1.0 - level
        }
    };

    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while below(hi) {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::LevelOutOfRange(level));
        }
    }
    while hi - lo > QUANTILE_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use statrs::function::gamma as sgamma;

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-10, "n={n}");
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn incomplete_gamma_closed_forms() {
        // P(1, x) = 1 - e^{-x}
        for x in [0.01f64, 0.5, 1.5, 4.0, 30.0] {
            assert!((gamma_inc_lower(1.0, x) - (1.0 - (-x).exp())).abs() < 1e-14);
        }
        // P(3, x) = 1 - e^{-x}(1 + x + x^2/2)
        for x in [0.2f64, 3.0, 9.0] {
            let want = 1.0 - (-x).exp() * (1.0 + x + x * x / 2.0);
            assert!((gamma_inc_lower(3.0, x) - want).abs() < 1e-14);
        }
        assert_eq!(gamma_inc_pq(2.0, 0.0), (0.0, 1.0));
    }

    #[test]
    fn incomplete_gamma_matches_statrs() {
        for a in [0.5, 1.0, 2.5, 3.0, 10.0, 50.0] {
            for x in [1e-3, 0.3, 1.0, 2.9, 5.32, 12.0, 60.0] {
                let want = sgamma::gamma_lr(a, x);
                assert!((gamma_inc_lower(a, x) - want).abs() < 1e-12, "a={a} x={x}");
            }
        }
    }

    #[test]
    fn quantile_reference_values() {
        assert!((chi2_quantile(0.9, 6).unwrap() - 10.644_640_675_668_42).abs() < 1e-8);
        // chi2(2) is exponential with mean 2
        assert!((chi2_quantile(0.5, 2).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-9);
        let tiny = chi2_quantile(1e-12, 3).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-6);
    }

    #[test]
    fn quantile_matches_statrs() {
        for dof in [1usize, 2, 3, 6, 10, 40] {
            let d = ChiSquared::new(dof as f64).unwrap();
            for level in [0.01, 0.1, 0.5, 0.9, 0.95, 0.999] {
                let want = d.inverse_cdf(level);
                let got = chi2_quantile(level, dof).unwrap();
                assert!((got - want).abs() < 1e-6 * want.max(1.0), "dof={dof} level={level}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn quantile_rejects_bad_levels() {
        for l in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(chi2_quantile(l, 6), Err(Error::LevelOutOfRange(_))));
        }
    }

    proptest! {
        #[test]
        fn quantile_round_trips(level in 1e-6f64..0.999_999, dof in 1usize..30) {
            let q = chi2_quantile(level, dof).unwrap();
            prop_assert!((chi2_cdf(q, dof) - level).abs() < 1e-7);
        }

        #[test]
        fn quantile_monotone(a in 0.001f64..0.998, gap in 1e-4f64..0.001, dof in 1usize..20) {
            let b = a + gap;
            prop_assert!(chi2_quantile(a, dof).unwrap() < chi2_quantile(b, dof).unwrap());
            prop_assert!(chi2_quantile(a, dof).unwrap() < chi2_quantile(a, dof + 1).unwrap());
        }
    }
}
