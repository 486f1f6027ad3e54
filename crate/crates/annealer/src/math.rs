//! Log-space numeric kernels shared by every module.

use crate::error::{Error, Result};

/// log(sum_i exp(v[i])), stable under the usual max-shift identity.
///
/// `-inf` entries are legal and contribute zero mass; an all-`-inf` input
/// returns `-inf`. NaN anywhere is a contract violation. Subtracting the max
/// keeps every exponent <= 0, so the sum can neither overflow nor lose the
/// dominant term.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("log_sum_exp on empty slice"));
    }
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if v.is_nan() {
            return Err(Error::contract("log_sum_exp received NaN"));
        }
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if max == f64::INFINITY {
        return Err(Error::contract("log_sum_exp received +inf"));
    }
    let mut sum = 0.0;
    for &v in values {
        sum += (v - max).exp();
    }
    Ok(max + sum.ln())
}

pub fn mean(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance; zero for a single observation.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_err(values: &[f64]) -> f64 {
    (variance(values) / values.len() as f64).sqrt()
}

/// Compensated (Kahan) summation, used by tests as an extended-precision
/// oracle and by the quadrature engine where many small terms accumulate.
pub fn kahan_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_equal_zeros() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn neg_inf_is_absorbed() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]).unwrap(), 0.0);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn empty_input_errors() {
        assert!(matches!(log_sum_exp(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn nan_rejected() {
        assert!(log_sum_exp(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn huge_values_do_not_overflow() {
        let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        let v = log_sum_exp(&[-1000.0, -1000.0]).unwrap();
        assert!((v - (-1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    // Values small enough that direct summation of exp() is exact; the
    // compensated direct sum is the independent oracle.
    #[test]
    fn matches_compensated_direct_sum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20240901);
        let logs: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>().ln()).collect();
        let direct = kahan_sum(&logs.iter().map(|&v| v.exp()).collect::<Vec<_>>()).ln();
        let lse = log_sum_exp(&logs).unwrap();
        assert!(
            (lse - direct).abs() < 1e-12,
            "lse={lse} direct={direct}"
        );
    }

    proptest! {
        // Shift equivariance: lse(v + c) = lse(v) + c.
        #[test]
        fn shift_equivariance(
            v in proptest::collection::vec(-300.0f64..300.0, 1..64),
            c in -200.0f64..200.0,
        ) {
            let base = log_sum_exp(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let got = log_sum_exp(&shifted).unwrap();
            prop_assert!((got - (base + c)).abs() <= 1e-9 * (1.0 + base.abs() + c.abs()));
        }

        // lse dominates the max and exceeds it by at most ln(n).
        #[test]
        fn bounded_by_max_plus_log_n(
            v in proptest::collection::vec(-300.0f64..300.0, 1..64),
        ) {
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let got = log_sum_exp(&v).unwrap();
            prop_assert!(got >= m - 1e-12);
            prop_assert!(got <= m + (v.len() as f64).ln() + 1e-12);
        }
    }
}
