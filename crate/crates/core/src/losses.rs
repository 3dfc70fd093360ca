//! Invariant losses for coefficient and covariance decisions.
//!
//! All three are evaluated in the `p`-dimensional diagonal parameterization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Design, ParameterPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mahalanobis-type loss on coefficients.
    Beta,
    /// Relative quadratic loss on the diagonal covariance.
    Quad,
    /// Likelihood (Stein-type) loss on the diagonal covariance.
    Lik,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Beta => "beta",
            LossKind::Quad => "quad",
            LossKind::Lik => "lik",
        }
    }

    pub fn is_covariance(self) -> bool {
        !matches!(self, LossKind::Beta)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(LossKind::Beta),
            "quad" => Ok(LossKind::Quad),
            "lik" => Ok(LossKind::Lik),
            other => Err(Error::Parse(format!(
                "unknown loss `{other}` (expected beta, quad or lik)"
            ))),
        }
    }
}

/// `(d - beta)' xp' Sigma_p^{-1} xp (d - beta)`.
pub fn loss_beta(design: &Design, d: &[f64], theta: &ParameterPoint) -> Result<f64> {
    design.check_p(d)?;
    let xd = design.xp_mul(d)?;
    let xb = design.xp_mul(theta.beta())?;
    Ok(xd
        .iter()
        .zip(&xb)
        .zip(theta.sigma2())
        .map(|((u, v), s)| (u - v).powi(2) / s)
        .sum())
}

fn ratios(d: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    if d.len() != sigma.len() {
        return Err(Error::DimensionMismatch {
            expected: sigma.len(),
            got: d.len(),
        });
    }
    for v in [d, sigma] {
        if let Some(index) = v.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::NonPositive {
                index,
                value: v[index],
            });
        }
    }
    Ok(d.iter().zip(sigma).map(|(x, s)| x / s).collect())
}

/// `sum_i (D_i / sigma_i^2 - 1)^2`.
pub fn loss_quad(d: &[f64], sigma: &[f64]) -> Result<f64> {
    Ok(ratios(d, sigma)?.iter().map(|r| (r - 1.0).powi(2)).sum())
}

/// `sum_i (r_i - ln r_i - 1)` with `r_i = D_i / sigma_i^2`.
pub fn loss_lik(d: &[f64], sigma: &[f64]) -> Result<f64> {
    Ok(ratios(d, sigma)?.iter().map(|r| r - r.ln() - 1.0).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{induce_decision_beta, induce_decision_cov, induce_param};
    use crate::rng::{random_design, random_parameter, random_transform, substream};
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn parse_names() {
        for kind in [LossKind::Beta, LossKind::Quad, LossKind::Lik] {
            assert_eq!(kind.name().parse::<LossKind>().unwrap(), kind);
        }
        assert!("stein".parse::<LossKind>().is_err());
        assert_eq!(serde_json::to_string(&LossKind::Quad).unwrap(), "\"quad\"");
    }

    #[test]
    fn beta_loss_values() {
        let d = Design::new(vec![vec![1.0]], vec![2]).unwrap();
        let theta = ParameterPoint::new(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(loss_beta(&d, &[1.0], &theta).unwrap(), 0.0);
        assert_eq!(loss_beta(&d, &[3.0], &theta).unwrap(), 4.0);

        // xp = [[1,0],[1,1]], Sigma = diag(1, 4), d - beta = (1, 1): xp(d-beta) = (1, 2).
        let d = Design::new(vec![vec![1.0, 0.0], vec![1.0, 1.0]], vec![1, 3]).unwrap();
        let theta = ParameterPoint::new(vec![0.0, 0.0], vec![1.0, 4.0]).unwrap();
        assert_eq!(loss_beta(&d, &[1.0, 1.0], &theta).unwrap(), 2.0);
    }

    #[test]
    fn quad_loss_values() {
        assert_eq!(loss_quad(&[1.5, 2.0], &[1.5, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_quad(&[2.0, 2.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(loss_quad(&[2.0, 3.0], &[1.0, 1.0]).unwrap(), 5.0);
        // Not symmetric: (2-1)^2 = 1 versus (1/2 - 1)^2 = 1/4.
        assert_eq!(loss_quad(&[2.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(loss_quad(&[1.0], &[2.0]).unwrap(), 0.25);
        assert!(matches!(
            loss_quad(&[0.0], &[1.0]),
            Err(Error::NonPositive { .. })
        ));
        assert!(matches!(
            loss_quad(&[1.0], &[-1.0]),
            Err(Error::NonPositive { .. })
        ));
    }

    #[test]
    fn lik_loss_values() {
        assert_eq!(loss_lik(&[3.0, 0.2], &[3.0, 0.2]).unwrap(), 0.0);
        assert_relative_eq!(
            loss_lik(&[2.0], &[1.0]).unwrap(),
            1.0 - 2f64.ln(),
            max_relative = 1e-15
        );
        assert_relative_eq!(loss_lik(&[2.0], &[1.0]).unwrap(), 0.306853, epsilon = 1e-6);
        assert_relative_eq!(
            loss_lik(&[0.5], &[1.0]).unwrap(),
            2f64.ln() - 0.5,
            max_relative = 1e-15
        );
        assert_relative_eq!(loss_lik(&[0.5], &[1.0]).unwrap(), 0.193147, epsilon = 1e-6);
        assert_ne!(
            loss_lik(&[2.0], &[1.0]).unwrap(),
            loss_lik(&[1.0], &[2.0]).unwrap()
        );
        assert!(loss_lik(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn losses_are_nonnegative() {
        let mut rng = substream(9, 0);
        for _ in 0..1000 {
            let d: Vec<f64> = (0..3)
                .map(|_| rng.random_range(-3.0..3.0f64).exp())
                .collect();
            let s: Vec<f64> = (0..3)
                .map(|_| rng.random_range(-3.0..3.0f64).exp())
                .collect();
            assert!(loss_quad(&d, &s).unwrap() > 0.0);
            assert!(loss_lik(&d, &s).unwrap() > 0.0);
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn losses_are_invariant() {
        let mut rng = substream(10, 0);
        for _ in 0..1000 {
            let design = random_design(&mut rng, 4, 1, 4);
            let p = design.p();
            let g = random_transform(&mut rng, p);
            let theta = random_parameter(&mut rng, p);
            let moved = induce_param(&design, &g, &theta).unwrap();

            let d: Vec<f64> = (0..p).map(|_| rng.random_range(-4.0..4.0)).collect();
            let gd = induce_decision_beta(&design, &g, &d).unwrap();
            let before = loss_beta(&design, &d, &theta).unwrap();
            let after = loss_beta(&design, &gd, &moved).unwrap();
            assert!(rel(before, after) < 1e-10, "{before} vs {after}");

            let dd: Vec<f64> = (0..p)
                .map(|_| rng.random_range(-2.0..2.0f64).exp())
                .collect();
            let gdd = induce_decision_cov(&g, &dd).unwrap();
            for f in [loss_quad, loss_lik] {
                let before = f(&dd, theta.sigma2()).unwrap();
                let after = f(&gdd, moved.sigma2()).unwrap();
                assert!(rel(before, after) < 1e-10, "{before} vs {after}");
            }
        }
    }
}
