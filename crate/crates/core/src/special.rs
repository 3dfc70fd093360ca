/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Digamma function for positive arguments: upward recurrence to `x >= 10`,
/// then the asymptotic Bernoulli series.
pub fn digamma(x: f64) -> f64 {
    assert!(x > 0.0, "digamma is only implemented for x > 0, got {x}");
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/12 - 1/(120 x^2) + 1/(252 x^4) - 1/(240 x^6) + 1/(132 x^8) - 691/(32760 x^10)
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    acc + x.ln() - 0.5 * inv - tail
}

/// `E[ln s^2]` for `s^2 ~ chi^2_nu / nu`.
pub fn expected_log_scaled_chi2(nu: f64) -> f64 {
    digamma(nu / 2.0) + std::f64::consts::LN_2 - nu.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn known_values() {
        assert_relative_eq!(digamma(1.0), -EULER_GAMMA, max_relative = 1e-14);
        assert_relative_eq!(digamma(2.0), 1.0 - EULER_GAMMA, max_relative = 1e-14);
        assert_relative_eq!(
            digamma(0.5),
            -EULER_GAMMA - 2.0 * std::f64::consts::LN_2,
            max_relative = 1e-14
        );
        assert_relative_eq!(digamma(5.0), 1.506_117_668_431_800_5, max_relative = 1e-14);
        assert_relative_eq!(digamma(20.0), 2.970_523_992_242_149, max_relative = 1e-14);
        assert_relative_eq!(digamma(0.2), -5.289_039_896_592_188, max_relative = 1e-13);
        assert_relative_eq!(
            digamma(123.4),
            4.811_373_775_116_277_5,
            max_relative = 1e-14
        );
    }

    #[test]
    fn recurrence_holds() {
        for k in 1..200 {
            let x = k as f64 * 0.173;
            assert_relative_eq!(
                digamma(x + 1.0),
                digamma(x) + 1.0 / x,
                max_relative = 1e-12,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn half_integer_closed_form() {
        // psi(m + 1/2) = -gamma - 2 ln 2 + sum_{k=1}^{m} 2 / (2k - 1)
        let mut expected = -EULER_GAMMA - 2.0 * std::f64::consts::LN_2;
        for m in 1..30 {
            expected += 2.0 / (2.0 * m as f64 - 1.0);
            assert_relative_eq!(digamma(m as f64 + 0.5), expected, max_relative = 1e-13);
        }
    }

    #[test]
    fn integer_closed_form() {
        // psi(m) = -gamma + H_{m-1}
        let mut harmonic = 0.0;
        for m in 1..50 {
            assert_relative_eq!(
                digamma(m as f64),
                harmonic - EULER_GAMMA,
                max_relative = 1e-13,
                epsilon = 1e-15
            );
            harmonic += 1.0 / m as f64;
        }
    }

    #[test]
    fn log_chi2_mean_limits() {
        assert_relative_eq!(
            expected_log_scaled_chi2(2.0),
            -EULER_GAMMA,
            max_relative = 1e-14
        );
        // E ln s^2 -> 0 as nu grows.
        assert!(expected_log_scaled_chi2(1e6).abs() < 2e-6);
    }
}
