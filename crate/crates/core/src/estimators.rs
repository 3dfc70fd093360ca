//! Equivariant estimators of the coefficients and the diagonal covariance.
//!
//! Coefficient estimators have the form
//! `ols(y) + xp^{-1} (s0(y) * omega(z))`, where `z` is the maximal invariant
//! and `s0` is a scale statistic of the replicated tail. Covariance
//! estimators have the form `H * S^2` with `S^2` the per-population unbiased
//! variances.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::groups::{maximal_invariant, MaximalInvariant};
use crate::model::{sufficient_stats, Design, ResponseVector};

/// Function of the maximal invariant returning one value per population.
pub type InvariantFn = Arc<dyn Fn(&MaximalInvariant) -> Vec<f64> + Send + Sync>;

/// Invariant weight function `omega(z)` for the coefficient family.
#[derive(Clone)]
pub enum OmegaSpec {
    Zero,
    Constant(Vec<f64>),
    Custom { f: InvariantFn, bound: f64 },
}

impl fmt::Debug for OmegaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OmegaSpec::Zero => f.write_str("Zero"),
            OmegaSpec::Constant(w) => f.debug_tuple("Constant").field(w).finish(),
            OmegaSpec::Custom { bound, .. } => f
                .debug_struct("Custom")
                .field("bound", bound)
                .finish_non_exhaustive(),
        }
    }
}

impl OmegaSpec {
    pub fn zero() -> Self {
        OmegaSpec::Zero
    }

    pub fn constant(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("omega[{i}] is not finite")));
        }
        Ok(OmegaSpec::Constant(w))
    }

    /// Custom weight function; every output entry must stay within `bound`
    /// in absolute value, checked on each evaluation.
    pub fn custom<F>(bound: f64, f: F) -> Result<Self>
    where
        F: Fn(&MaximalInvariant) -> Vec<f64> + Send + Sync + 'static,
    {
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "omega bound {bound} must be finite"
            )));
        }
        Ok(OmegaSpec::Custom {
            f: Arc::new(f),
            bound,
        })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            OmegaSpec::Zero => true,
            OmegaSpec::Constant(w) => w.iter().all(|v| *v == 0.0),
            OmegaSpec::Custom { .. } => false,
        }
    }

    pub fn eval(&self, p: usize, z: &MaximalInvariant) -> Result<Vec<f64>> {
        let (w, bound) = match self {
            OmegaSpec::Zero => return Ok(vec![0.0; p]),
            OmegaSpec::Constant(w) => (w.clone(), f64::INFINITY),
            OmegaSpec::Custom { f, bound } => (f(z), *bound),
        };
        if w.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: w.len(),
            });
        }
        if let Some(index) = w.iter().position(|v| !(v.abs() <= bound)) {
            return Err(Error::OmegaOutOfBounds {
                index,
                value: w[index],
                bound,
            });
        }
        Ok(w)
    }
}

/// Multipliers `H` applied to the sample variances.
#[derive(Clone)]
pub enum CovWeights {
    /// `(n_i - 1) / (n_i + 1)`, optimal under the quadratic loss.
    Shrinkage,
    /// All ones, optimal under the likelihood loss.
    Unit,
    Constant(Vec<f64>),
    Custom(InvariantFn),
}

impl fmt::Debug for CovWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovWeights::Shrinkage => f.write_str("Shrinkage"),
            CovWeights::Unit => f.write_str("Unit"),
            CovWeights::Constant(h) => f.debug_tuple("Constant").field(h).finish(),
            CovWeights::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl CovWeights {
    pub fn constant(h: Vec<f64>) -> Result<Self> {
        if let Some(index) = h.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::NonPositive {
                index,
                value: h[index],
            });
        }
        Ok(CovWeights::Constant(h))
    }

    /// Whether the weights ignore the maximal invariant.
    pub fn is_constant(&self) -> bool {
        !matches!(self, CovWeights::Custom(_))
    }

    pub fn resolve(&self, design: &Design, y: Option<&ResponseVector>) -> Result<Vec<f64>> {
        let p = design.p();
        let h = match self {
            CovWeights::Shrinkage => shrinkage_weights(design)?,
            CovWeights::Unit => vec![1.0; p],
            CovWeights::Constant(h) => h.clone(),
            CovWeights::Custom(f) => {
                let y = y.ok_or_else(|| {
                    Error::InvalidParameter("data-dependent weights need a response".into())
                })?;
                f(&maximal_invariant(design, y)?)
            }
        };
        if h.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: h.len(),
            });
        }
        if let Some(index) = h.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::NonPositive {
                index,
                value: h[index],
            });
        }
        Ok(h)
    }
}

/// Least squares, computed as `xp^{-1}` applied to the block means.
pub fn ols_beta(design: &Design, y: &ResponseVector) -> Result<Vec<f64>> {
    let stats = sufficient_stats(design, y)?;
    design.xp_solve(&stats.means)
}

fn require_tail(design: &Design) -> Result<()> {
    if design.is_tail_replicated() {
        Ok(())
    } else {
        Err(Error::WrongShape(format!(
            "expected p - 1 singleton populations and one replicated tail, got reps {:?}",
            design.reps()
        )))
    }
}

/// Zero except in the last entry, which holds the standard deviation of the
/// replicated tail. It scales by `c_p` under the group.
pub fn s0_scale(design: &Design, y: &ResponseVector) -> Result<Vec<f64>> {
    require_tail(design)?;
    let stats = sufficient_stats(design, y)?;
    let p = design.p();
    let mut out = vec![0.0; p];
    out[p - 1] = stats.variances[p - 1]
        .expect("tail block has at least two observations")
        .sqrt();
    Ok(out)
}

/// Member of the characterized family of equivariant coefficient estimators.
pub fn equivariant_beta(
    design: &Design,
    y: &ResponseVector,
    omega: &OmegaSpec,
) -> Result<Vec<f64>> {
    require_tail(design)?;
    let base = ols_beta(design, y)?;
    if omega.is_zero() {
        return Ok(base);
    }
    let z = maximal_invariant(design, y)?;
    let w = omega.eval(design.p(), &z)?;
    let s0 = s0_scale(design, y)?;
    let shift: Vec<f64> = s0.iter().zip(&w).map(|(s, w)| s * w).collect();
    let correction = design.xp_solve(&shift)?;
    Ok(base.iter().zip(&correction).map(|(b, c)| b + c).collect())
}

/// `W = diag((n_i - 1) / (n_i + 1))`.
pub fn shrinkage_weights(design: &Design) -> Result<Vec<f64>> {
    design
        .reps()
        .iter()
        .enumerate()
        .map(|(block, &n)| {
            if n < 2 {
                Err(Error::NotEstimable { block })
            } else {
                Ok((n as f64 - 1.0) / (n as f64 + 1.0))
            }
        })
        .collect()
}

/// `H * S^2`. Entries are zero where a block has no spread.
pub fn cov_estimate(design: &Design, y: &ResponseVector, weights: &CovWeights) -> Result<Vec<f64>> {
    let s2 = sufficient_stats(design, y)?.all_variances()?;
    let h = weights.resolve(design, Some(y))?;
    Ok(h.iter().zip(&s2).map(|(h, s)| h * s).collect())
}

/// What an estimator targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Beta,
    Cov,
}

/// An estimator selectable by name:
/// `ols`, `equivariant:omega=<spec>`, `cov:W`, `cov:I`, `cov:h=<vector>`.
#[derive(Debug, Clone)]
pub enum Estimator {
    Ols,
    Equivariant(OmegaSpec),
    Cov(CovWeights),
}

impl Estimator {
    pub fn target(&self) -> Target {
        match self {
            Estimator::Ols | Estimator::Equivariant(_) => Target::Beta,
            Estimator::Cov(_) => Target::Cov,
        }
    }

    pub fn estimate(&self, design: &Design, y: &ResponseVector) -> Result<Vec<f64>> {
        match self {
            Estimator::Ols => ols_beta(design, y),
            Estimator::Equivariant(omega) => equivariant_beta(design, y, omega),
            Estimator::Cov(weights) => cov_estimate(design, y, weights),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            Estimator::Ols => f.write_str("ols"),
            Estimator::Equivariant(OmegaSpec::Zero) => f.write_str("equivariant:omega=zero"),
            Estimator::Equivariant(OmegaSpec::Constant(w)) => {
                write!(f, "equivariant:omega={}", join(w))
            }
            Estimator::Equivariant(OmegaSpec::Custom { .. }) => {
                f.write_str("equivariant:omega=custom")
            }
            Estimator::Cov(CovWeights::Shrinkage) => f.write_str("cov:W"),
            Estimator::Cov(CovWeights::Unit) => f.write_str("cov:I"),
            Estimator::Cov(CovWeights::Constant(h)) => write!(f, "cov:h={}", join(h)),
            Estimator::Cov(CovWeights::Custom(_)) => f.write_str("cov:custom"),
        }
    }
}

pub(crate) fn parse_vector(text: &str) -> Result<Vec<f64>> {
    let inner = text.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number `{}`: {e}", part.trim())))
        })
        .collect()
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "ols" {
            return Ok(Estimator::Ols);
        }
        if let Some(spec) = s.strip_prefix("equivariant:omega=") {
            return match spec.trim() {
                "zero" | "0" => Ok(Estimator::Equivariant(OmegaSpec::Zero)),
                other => Ok(Estimator::Equivariant(OmegaSpec::constant(parse_vector(
                    other,
                )?)?)),
            };
        }
        match s {
            "cov:W" => return Ok(Estimator::Cov(CovWeights::Shrinkage)),
            "cov:I" => return Ok(Estimator::Cov(CovWeights::Unit)),
            _ => {}
        }
        if let Some(spec) = s.strip_prefix("cov:h=") {
            return Ok(Estimator::Cov(CovWeights::constant(parse_vector(spec)?)?));
        }
        Err(Error::Parse(format!(
            "unknown estimator `{s}` (expected ols, equivariant:omega=<spec>, cov:W, cov:I or cov:h=<vector>)"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{apply_sample, induce_decision_beta, induce_decision_cov};
    use crate::model::sample_response;
    use crate::rng::{
        random_design, random_parameter, random_tail_design, random_transform, substream,
    };
    use nalgebra::{DMatrix, DVector};

    fn lower_tail() -> Design {
        Design::new(vec![vec![1.0, 0.0], vec![1.0, 1.0]], vec![1, 3]).unwrap()
    }

    fn eye_tail() -> Design {
        Design::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 3]).unwrap()
    }

    /// Least squares through the normal equations on the fully expanded
    /// `n x p` regressor matrix.
    fn normal_equations(design: &Design, y: &ResponseVector) -> Vec<f64> {
        let p = design.p();
        let mut rows = Vec::new();
        for (i, &r) in design.reps().iter().enumerate() {
            for _ in 0..r {
                rows.extend((0..p).map(|j| design.xp()[(i, j)]));
            }
        }
        let x = DMatrix::from_row_slice(design.n(), p, &rows);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * DVector::from_column_slice(y.values());
        xtx.lu().solve(&xty).unwrap().as_slice().to_vec()
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = a.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
            / scale
    }

    #[test]
    fn ols_small_examples() {
        let y = ResponseVector::new(&eye_tail(), vec![1.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(ols_beta(&eye_tail(), &y).unwrap(), vec![1.0, 4.0]);
        assert!(max_rel(&normal_equations(&eye_tail(), &y), &[1.0, 4.0]) < 1e-14);

        let d = lower_tail();
        let y = ResponseVector::new(&d, vec![1.0, 2.0, 4.0, 6.0]).unwrap();
        assert!(max_rel(&ols_beta(&d, &y).unwrap(), &[1.0, 3.0]) < 1e-15);
        assert!(max_rel(&normal_equations(&d, &y), &[1.0, 3.0]) < 1e-14);
    }

    #[test]
    fn ols_interpolates_noise_free_data() {
        let d = Design::new(
            vec![
                vec![1.0, 0.5, 0.0],
                vec![0.2, 1.0, 0.3],
                vec![0.0, -0.4, 1.0],
            ],
            vec![2, 1, 3],
        )
        .unwrap();
        let beta = [1.5, -2.0, 0.25];
        let y = ResponseVector::new(&d, d.expand(&d.xp_mul(&beta).unwrap()).unwrap()).unwrap();
        assert!(max_rel(&ols_beta(&d, &y).unwrap(), &beta) < 1e-14);
    }

    #[test]
    fn ols_matches_normal_equations() {
        let mut rng = substream(21, 0);
        for k in 0..500 {
            let d = random_design(&mut rng, 5, 1, 6);
            let theta = random_parameter(&mut rng, d.p());
            let y = sample_response(&d, &theta, 21, k).unwrap();
            let a = ols_beta(&d, &y).unwrap();
            let b = normal_equations(&d, &y);
            assert!(max_rel(&a, &b) < 1e-10, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn s0_scale_uses_tail_standard_deviation() {
        let d = eye_tail();
        let y = ResponseVector::new(&d, vec![9.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(s0_scale(&d, &y).unwrap(), vec![0.0, 2.0]);
        let y = ResponseVector::new(&d, vec![9.0, 3.0, 3.0, 3.0]).unwrap();
        assert_eq!(s0_scale(&d, &y).unwrap(), vec![0.0, 0.0]);
        let even = Design::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![2, 2]).unwrap();
        let y = ResponseVector::new(&even, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(s0_scale(&even, &y), Err(Error::WrongShape(_))));
    }

    #[test]
    fn equivariant_family_members() {
        let d = eye_tail();
        let y = ResponseVector::new(&d, vec![9.0, 2.0, 4.0, 6.0]).unwrap();
        let ols = ols_beta(&d, &y).unwrap();
        assert_eq!(equivariant_beta(&d, &y, &OmegaSpec::zero()).unwrap(), ols);
        let shifted =
            equivariant_beta(&d, &y, &OmegaSpec::constant(vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(shifted, vec![ols[0], ols[1] + 2.0]);

        // Zero omega never needs the maximal invariant, so ties are fine.
        let tied = ResponseVector::new(&d, vec![1.0, 3.0, 5.0, 3.0]).unwrap();
        assert!(equivariant_beta(&d, &tied, &OmegaSpec::zero()).is_ok());
        assert!(matches!(
            equivariant_beta(&d, &tied, &OmegaSpec::constant(vec![0.0, 1.0]).unwrap()),
            Err(Error::DegenerateBlock { block: 1 })
        ));
    }

    #[test]
    fn custom_omega_is_bounded() {
        let d = eye_tail();
        let y = ResponseVector::new(&d, vec![9.0, 2.0, 4.0, 7.0]).unwrap();
        let ok = OmegaSpec::custom(1.0, |z| {
            let r = z.blocks[0].ratios[0];
            vec![0.0, r.tanh()]
        })
        .unwrap();
        assert!(equivariant_beta(&d, &y, &ok).is_ok());
        let wild = OmegaSpec::custom(0.1, |_| vec![0.0, 5.0]).unwrap();
        assert!(matches!(
            equivariant_beta(&d, &y, &wild),
            Err(Error::OmegaOutOfBounds { index: 1, .. })
        ));
    }

    #[test]
    fn distinct_constant_omegas_give_distinct_estimates() {
        let d = lower_tail();
        let y = ResponseVector::new(&d, vec![0.3, 1.0, -0.5, 2.0]).unwrap();
        let mut seen: Vec<Vec<f64>> = Vec::new();
        for w in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let est =
                equivariant_beta(&d, &y, &OmegaSpec::constant(vec![0.0, w]).unwrap()).unwrap();
            assert!(seen.iter().all(|other| other != &est));
            seen.push(est);
        }
    }

    #[test]
    fn shrinkage_weight_values() {
        let d = Design::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![3, 5]).unwrap();
        assert_eq!(shrinkage_weights(&d).unwrap(), vec![0.5, 4.0 / 6.0]);
        let d = Design::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![2, 2]).unwrap();
        assert_eq!(shrinkage_weights(&d).unwrap(), vec![1.0 / 3.0, 1.0 / 3.0]);
        let d = Design::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 4]).unwrap();
        assert!(matches!(
            shrinkage_weights(&d),
            Err(Error::NotEstimable { block: 0 })
        ));
    }

    #[test]
    fn covariance_estimates() {
        let d = Design::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![3, 3]).unwrap();
        // Block variances 4 and 9.
        let y = ResponseVector::new(&d, vec![0.0, 2.0, 4.0, 1.0, 4.0, 7.0]).unwrap();
        assert_eq!(
            cov_estimate(&d, &y, &CovWeights::Shrinkage).unwrap(),
            vec![2.0, 4.5]
        );
        assert_eq!(
            cov_estimate(&d, &y, &CovWeights::Unit).unwrap(),
            vec![4.0, 9.0]
        );
        assert_eq!(
            cov_estimate(&d, &y, &CovWeights::constant(vec![0.25, 2.0]).unwrap()).unwrap(),
            vec![1.0, 18.0]
        );
        assert!(CovWeights::constant(vec![0.0, 1.0]).is_err());
        let y = ResponseVector::new(&lower_tail(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(
            cov_estimate(&lower_tail(), &y, &CovWeights::Unit),
            Err(Error::NotEstimable { block: 0 })
        ));
    }

    #[test]
    fn parse_estimators() {
        assert!(matches!(
            "ols".parse::<Estimator>().unwrap(),
            Estimator::Ols
        ));
        assert!(matches!(
            "equivariant:omega=zero".parse::<Estimator>().unwrap(),
            Estimator::Equivariant(OmegaSpec::Zero)
        ));
        match "equivariant:omega=[0, 1.5]".parse::<Estimator>().unwrap() {
            Estimator::Equivariant(OmegaSpec::Constant(w)) => assert_eq!(w, vec![0.0, 1.5]),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            "cov:W".parse::<Estimator>().unwrap(),
            Estimator::Cov(CovWeights::Shrinkage)
        ));
        assert!(matches!(
            "cov:I".parse::<Estimator>().unwrap(),
            Estimator::Cov(CovWeights::Unit)
        ));
        match "cov:h=0.5,0.25".parse::<Estimator>().unwrap() {
            Estimator::Cov(CovWeights::Constant(h)) => assert_eq!(h, vec![0.5, 0.25]),
            other => panic!("{other:?}"),
        }
        for bad in ["mle", "cov:h=-1", "cov:h=a,b", "equivariant:omega="] {
            assert!(bad.parse::<Estimator>().is_err(), "{bad}");
        }
        for text in [
            "ols",
            "cov:W",
            "cov:I",
            "cov:h=0.5,2",
            "equivariant:omega=0,1",
        ] {
            assert_eq!(text.parse::<Estimator>().unwrap().to_string(), text);
        }
    }

    #[test]
    fn estimators_are_equivariant() {
        let mut rng = substream(22, 0);
        for k in 0..1000u64 {
            let d = random_tail_design(&mut rng, 4, 7);
            let p = d.p();
            let g = random_transform(&mut rng, p);
            let theta = random_parameter(&mut rng, p);
            let y = sample_response(&d, &theta, 22, k).unwrap();
            let gy = apply_sample(&d, &g, &y).unwrap();

            let lhs = ols_beta(&d, &gy).unwrap();
            let rhs = induce_decision_beta(&d, &g, &ols_beta(&d, &y).unwrap()).unwrap();
            assert!(max_rel(&lhs, &rhs) < 1e-10);

            let w: Vec<f64> = (0..p).map(|i| (i as f64 - 1.0) * 0.7).collect();
            let omega = OmegaSpec::constant(w).unwrap();
            let lhs = equivariant_beta(&d, &gy, &omega).unwrap();
            let rhs =
                induce_decision_beta(&d, &g, &equivariant_beta(&d, &y, &omega).unwrap()).unwrap();
            assert!(max_rel(&lhs, &rhs) < 1e-10);
        }
        for k in 0..500u64 {
            let d = random_design(&mut rng, 4, 2, 6);
            let g = random_transform(&mut rng, d.p());
            let theta = random_parameter(&mut rng, d.p());
            let y = sample_response(&d, &theta, 23, k).unwrap();
            let gy = apply_sample(&d, &g, &y).unwrap();
            for weights in [CovWeights::Shrinkage, CovWeights::Unit] {
                let lhs = cov_estimate(&d, &gy, &weights).unwrap();
                let rhs =
                    induce_decision_cov(&g, &cov_estimate(&d, &y, &weights).unwrap()).unwrap();
                assert!(max_rel(&lhs, &rhs) < 1e-10);
            }
        }
    }
}
