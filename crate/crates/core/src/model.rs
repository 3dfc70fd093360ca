//! Replicated fixed-X designs and the multi-population normal model.
//!
//! A design holds `p` linearly independent covariate rows, one per
//! population, and a replication count for each. Observations are stored in
//! contiguous population blocks, so the full `n x p` regressor matrix is
//! `K * xp` where `K` repeats row `i` exactly `reps[i]` times. Nothing of
//! size `n x n` or `n x p` is ever materialized; diagonal objects are kept as
//! `p`-vectors and broadcast with [`Design::expand`].

use std::ops::Range;

use nalgebra::{DMatrix, DVector, LU};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// Largest accepted condition number of the population matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct Design {
    xp: DMatrix<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    reps: Vec<usize>,
    boundaries: Vec<usize>,
    condition: f64,
}

impl Design {
    /// Validate and build a design from population rows and replication
    /// counts.
    pub fn new(xp: Vec<Vec<f64>>, reps: Vec<usize>) -> Result<Self> {
        let p = xp.len();
        if p == 0 {
            return Err(Error::WrongShape("population matrix is empty".into()));
        }
        if let Some(row) = xp.iter().find(|row| row.len() != p) {
            return Err(Error::WrongShape(format!(
                "population matrix must be square: {p} rows but a row of length {}",
                row.len()
            )));
        }
        if reps.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: reps.len(),
            });
        }
        if xp.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::SingularDesign {
                condition: f64::INFINITY,
            });
        }
        if let Some(i) = reps.iter().position(|&r| r == 0) {
            return Err(Error::BadReplication(format!(
                "population {i} has zero replicates"
            )));
        }
        let n: usize = reps.iter().sum();
        if n < p + 1 {
            return Err(Error::BadReplication(format!(
                "n = {n} observations but at least p + 1 = {} are required",
                p + 1
            )));
        }

        let xp = DMatrix::from_fn(p, p, |i, j| xp[i][j]);
        let sv = xp.clone().singular_values();
        let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &s| {
            (hi.max(s), lo.min(s))
        });
        let condition = if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularDesign { condition });
        }

        let mut boundaries = Vec::with_capacity(p + 1);
        boundaries.push(0);
        let mut acc = 0;
        for &r in &reps {
            acc += r;
            boundaries.push(acc);
        }

        let lu = xp.clone().lu();
        Ok(Self {
            xp,
            lu,
            reps,
            boundaries,
            condition,
        })
    }

    /// Model with `p - 1` singleton populations and one final population of
    /// size `n - p + 1`.
    pub fn with_replicated_tail(xp: Vec<Vec<f64>>, n: usize) -> Result<Self> {
        let p = xp.len();
        if n < p + 1 {
            return Err(Error::BadReplication(format!(
                "n = {n} observations but at least p + 1 = {} are required",
                p + 1
            )));
        }
        let mut reps = vec![1; p];
        reps[p - 1] = n - p + 1;
        Self::new(xp, reps)
    }

    pub fn p(&self) -> usize {
        self.reps.len()
    }

    pub fn n(&self) -> usize {
        self.boundaries[self.p()]
    }

    pub fn reps(&self) -> &[usize] {
        &self.reps
    }

    /// `N_0 = 0, N_i = n_1 + ... + n_i`.
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn block(&self, i: usize) -> Range<usize> {
        self.boundaries[i]..self.boundaries[i + 1]
    }

    pub fn blocks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.boundaries.windows(2).map(|w| w[0]..w[1])
    }

    pub fn xp(&self) -> &DMatrix<f64> {
        &self.xp
    }

    /// Ratio of extreme singular values of the population matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// True for the layout with one observation in each of the first `p - 1`
    /// populations and all remaining ones in the last.
    pub fn is_tail_replicated(&self) -> bool {
        let p = self.p();
        self.reps[..p - 1].iter().all(|&r| r == 1) && self.reps[p - 1] >= 2
    }

    pub(crate) fn check_p(&self, v: &[f64]) -> Result<()> {
        if v.len() == self.p() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.p(),
                got: v.len(),
            })
        }
    }

    /// Entry `i` of `v` repeated `reps[i]` times, in block order (`K v`).
    pub fn expand(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_p(v)?;
        let mut out = Vec::with_capacity(self.n());
        for (&x, &r) in v.iter().zip(&self.reps) {
            out.extend(std::iter::repeat_n(x, r));
        }
        Ok(out)
    }

    /// `xp * v`.
    pub fn xp_mul(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_p(v)?;
        Ok((&self.xp * DVector::from_column_slice(v))
            .as_slice()
            .to_vec())
    }

    /// `xp^{-1} v`, by LU solve.
    pub fn xp_solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_p(v)?;
        let sol = self
            .lu
            .solve(&DVector::from_column_slice(v))
            .ok_or(Error::SingularDesign {
                condition: f64::INFINITY,
            })?;
        Ok(sol.as_slice().to_vec())
    }
}

/// Coefficients and per-population variances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterPoint {
    beta: Vec<f64>,
    sigma2: Vec<f64>,
}

impl ParameterPoint {
    pub fn new(beta: Vec<f64>, sigma2: Vec<f64>) -> Result<Self> {
        if beta.len() != sigma2.len() {
            return Err(Error::DimensionMismatch {
                expected: beta.len(),
                got: sigma2.len(),
            });
        }
        if let Some(i) = beta.iter().position(|b| !b.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "beta[{i}] = {} is not finite",
                beta[i]
            )));
        }
        if let Some(i) = sigma2.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "sigma2[{i}] = {} must be positive and finite",
                sigma2[i]
            )));
        }
        Ok(Self { beta, sigma2 })
    }

    /// `(0, I_p)`, the reference point used by all risk oracles.
    pub fn standard(p: usize) -> Self {
        Self {
            beta: vec![0.0; p],
            sigma2: vec![1.0; p],
        }
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub(crate) fn check_design(&self, design: &Design) -> Result<()> {
        design.check_p(&self.beta)
    }
}

/// Observed responses laid out in the design's block order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseVector(Vec<f64>);

impl ResponseVector {
    pub fn new(design: &Design, values: Vec<f64>) -> Result<Self> {
        if values.len() != design.n() {
            return Err(Error::DimensionMismatch {
                expected: design.n(),
                got: values.len(),
            });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub(crate) fn check_design(&self, design: &Design) -> Result<()> {
        if self.0.len() == design.n() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: design.n(),
                got: self.0.len(),
            })
        }
    }
}

/// Per-population block means and unbiased variances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficientStats {
    pub means: Vec<f64>,
    /// `None` for populations observed once.
    pub variances: Vec<Option<f64>>,
    pub reps: Vec<usize>,
}

impl SufficientStats {
    /// Variances of all populations, or `NotEstimable` naming the first
    /// singleton block.
    pub fn all_variances(&self) -> Result<Vec<f64>> {
        self.variances
            .iter()
            .enumerate()
            .map(|(block, v)| v.ok_or(Error::NotEstimable { block }))
            .collect()
    }
}

pub fn sufficient_stats(design: &Design, y: &ResponseVector) -> Result<SufficientStats> {
    y.check_design(design)?;
    let y = y.values();
    let mut means = Vec::with_capacity(design.p());
    let mut variances = Vec::with_capacity(design.p());
    for block in design.blocks() {
        let obs = &y[block];
        let k = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / k;
        means.push(mean);
        variances.push(if obs.len() >= 2 {
            Some(obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0))
        } else {
            None
        });
    }
    Ok(SufficientStats {
        means,
        variances,
        reps: design.reps().to_vec(),
    })
}

/// Draw number `index` of the response stream for `seed`: a pure function of
/// `(design, theta, seed, index)`.
pub fn sample_response(
    design: &Design,
    theta: &ParameterPoint,
    seed: u64,
    index: u64,
) -> Result<ResponseVector> {
    theta.check_design(design)?;
    let mean = design.expand(&design.xp_mul(theta.beta())?)?;
    let sd = design.expand(&theta.sigma2().iter().map(|s| s.sqrt()).collect::<Vec<_>>())?;
    let mut rng = substream(seed, index);
    let values = mean
        .iter()
        .zip(&sd)
        .map(|(m, s)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            m + s * z
        })
        .collect();
    Ok(ResponseVector(values))
}

/// The first `count` draws of the response stream for `seed`.
pub fn sample_responses<'a>(
    design: &'a Design,
    theta: &'a ParameterPoint,
    seed: u64,
    count: usize,
) -> Result<impl Iterator<Item = ResponseVector> + 'a> {
    theta.check_design(design)?;
    Ok((0..count as u64)
        .map(move |i| sample_response(design, theta, seed, i).expect("inputs validated above")))
}

/// JSON document `{"xp": [[...]], "reps": [...], "beta": [...], "sigma2": [...]}`.
/// The parameter fields default to the standard point when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub xp: Vec<Vec<f64>>,
    pub reps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<Vec<f64>>,
}

impl ModelDoc {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn design(&self) -> Result<Design> {
        Design::new(self.xp.clone(), self.reps.clone())
    }

    pub fn theta(&self) -> Result<ParameterPoint> {
        let p = self.xp.len();
        ParameterPoint::new(
            self.beta.clone().unwrap_or_else(|| vec![0.0; p]),
            self.sigma2.clone().unwrap_or_else(|| vec![1.0; p]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn design(xp: &[&[f64]], reps: &[usize]) -> Design {
        Design::new(xp.iter().map(|r| r.to_vec()).collect(), reps.to_vec()).unwrap()
    }

    #[test]
    fn builds_tail_design() {
        let d = design(&[&[1.0, 0.0], &[1.0, 1.0]], &[1, 3]);
        assert_eq!(d.n(), 4);
        assert_eq!(d.boundaries(), &[0, 1, 4]);
        assert!(d.is_tail_replicated());
        assert_eq!(d.block(1), 1..4);
    }

    #[test]
    fn too_few_observations_rejected() {
        let err = Design::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 1]).unwrap_err();
        assert!(matches!(err, Error::BadReplication(_)));
        let err = Design::new(vec![vec![1.0]], vec![0]).unwrap_err();
        assert!(matches!(err, Error::BadReplication(_)));
    }

    #[test]
    fn singular_rows_rejected() {
        let err = Design::new(vec![vec![1.0, 1.0], vec![2.0, 2.0]], vec![2, 2]).unwrap_err();
        assert!(matches!(err, Error::SingularDesign { .. }));
        let err =
            Design::new(vec![vec![1.0, 1.0], vec![1.0, 1.0 + 1e-14]], vec![2, 2]).unwrap_err();
        assert!(matches!(err, Error::SingularDesign { .. }));
    }

    #[test]
    fn non_square_rejected() {
        let err = Design::new(vec![vec![1.0, 0.0]], vec![3]).unwrap_err();
        assert!(matches!(err, Error::WrongShape(_)));
    }

    #[test]
    fn expand_repeats_blocks() {
        let d = design(&[&[1.0, 0.0], &[1.0, 1.0]], &[1, 3]);
        assert_eq!(d.expand(&[5.0, 7.0]).unwrap(), vec![5.0, 7.0, 7.0, 7.0]);
        let d = design(&[&[1.0, 0.0], &[0.0, 1.0]], &[2, 2]);
        assert_eq!(d.expand(&[0.0, 0.0]).unwrap(), vec![0.0; 4]);
        let d = design(
            &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]],
            &[1, 1, 2],
        );
        assert_eq!(
            d.expand(&[1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 2.0, 3.0, 3.0]
        );
        assert!(matches!(
            d.expand(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 1
            })
        ));
    }

    #[test]
    fn stats_of_small_sample() {
        let d = design(&[&[1.0, 0.0], &[1.0, 1.0]], &[1, 3]);
        let y = ResponseVector::new(&d, vec![1.0, 2.0, 4.0, 6.0]).unwrap();
        let s = sufficient_stats(&d, &y).unwrap();
        assert_eq!(s.means, vec![1.0, 4.0]);
        // ((2-4)^2 + 0^2 + 2^2) / 2
        assert_eq!(s.variances, vec![None, Some(4.0)]);
        assert!(matches!(
            s.all_variances(),
            Err(Error::NotEstimable { block: 0 })
        ));
    }

    #[test]
    fn stats_of_constant_blocks() {
        let d = design(&[&[1.0, 0.0], &[0.0, 1.0]], &[2, 2]);
        let y = ResponseVector::new(&d, vec![3.5, 3.5, -1.25, -1.25]).unwrap();
        let s = sufficient_stats(&d, &y).unwrap();
        assert_eq!(s.means, vec![3.5, -1.25]);
        assert_eq!(s.variances, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn tail_design_means_match_ybar() {
        // Means of a tail-replicated design are (Y_1, ..., Y_{p-1}, mean of tail).
        let d = Design::with_replicated_tail(
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.5, 1.0, 0.0],
                vec![0.0, 0.3, 1.0],
            ],
            6,
        )
        .unwrap();
        let y = ResponseVector::new(&d, vec![0.5, -2.0, 1.0, 2.0, 3.0, 6.0]).unwrap();
        let s = sufficient_stats(&d, &y).unwrap();
        assert_eq!(s.means, vec![0.5, -2.0, 3.0]);
    }

    #[test]
    fn zero_variance_parameter_rejected() {
        assert!(matches!(
            ParameterPoint::new(vec![0.0, 0.0], vec![1.0, 0.0]),
            Err(Error::InvalidParameter(_))
        ));
        assert!(ParameterPoint::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = design(&[&[1.0, 0.0], &[1.0, 1.0]], &[2, 3]);
        let theta = ParameterPoint::new(vec![1.0, -1.0], vec![0.5, 2.0]).unwrap();
        let a = sample_response(&d, &theta, 42, 17).unwrap();
        let b = sample_response(&d, &theta, 42, 17).unwrap();
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let c = sample_response(&d, &theta, 42, 18).unwrap();
        assert_ne!(a, c);
        let streamed: Vec<_> = sample_responses(&d, &theta, 42, 20).unwrap().collect();
        assert_eq!(streamed[17], a);
    }

    #[test]
    fn standard_model_moments() {
        let d = design(&[&[1.0, 0.0], &[1.0, 1.0]], &[1, 3]);
        let theta = ParameterPoint::standard(2);
        let draws = 100_000usize;
        let mut sum = vec![0.0; d.n()];
        let mut sumsq = vec![0.0; d.n()];
        for y in sample_responses(&d, &theta, 2024, draws).unwrap() {
            for (k, v) in y.values().iter().enumerate() {
                sum[k] += v;
                sumsq[k] += v * v;
            }
        }
        let r = draws as f64;
        for k in 0..d.n() {
            let mean = sum[k] / r;
            assert!(mean.abs() < 4.0 / r.sqrt(), "coordinate {k}: mean {mean}");
            // Var of the sample second moment of N(0,1) is 2 / r.
            let var = sumsq[k] / r - mean * mean;
            assert!(
                (var - 1.0).abs() < 4.0 * (2.0 / r).sqrt(),
                "coordinate {k}: var {var}"
            );
        }
    }

    #[test]
    fn shifted_model_moments() {
        let d = design(&[&[1.0, 0.0], &[1.0, 1.0]], &[2, 3]);
        let theta = ParameterPoint::new(vec![2.0, -1.0], vec![4.0, 0.25]).unwrap();
        let mean = d.expand(&d.xp_mul(theta.beta()).unwrap()).unwrap();
        let var = d.expand(theta.sigma2()).unwrap();
        let draws = 50_000usize;
        let r = draws as f64;
        let mut sum = vec![0.0; d.n()];
        let mut sumsq = vec![0.0; d.n()];
        for y in sample_responses(&d, &theta, 5, draws).unwrap() {
            for (k, v) in y.values().iter().enumerate() {
                sum[k] += v;
                sumsq[k] += (v - mean[k]).powi(2);
            }
        }
        for k in 0..d.n() {
            let m = sum[k] / r;
            assert!((m - mean[k]).abs() < 4.0 * (var[k] / r).sqrt());
            let v = sumsq[k] / r;
            assert!((v - var[k]).abs() < 4.0 * var[k] * (2.0 / r).sqrt());
        }
    }

    #[test]
    fn model_doc_round_trip() {
        let doc = ModelDoc::from_json(
            r#"{"xp": [[1, 0], [1, 1]], "reps": [1, 3], "beta": [1, 2], "sigma2": [1, 4]}"#,
        )
        .unwrap();
        let d = doc.design().unwrap();
        assert_eq!(d.n(), 4);
        let theta = doc.theta().unwrap();
        assert_eq!(theta.sigma2(), &[1.0, 4.0]);
        let bare = ModelDoc::from_json(r#"{"xp": [[1]], "reps": [3]}"#).unwrap();
        assert_eq!(bare.theta().unwrap(), ParameterPoint::standard(1));
        assert!(ModelDoc::from_json(r#"{"xp": 1}"#).is_err());
    }

    proptest! {
        #[test]
        fn expand_is_linear(
            reps in proptest::collection::vec(1usize..5, 1..5),
            seed in any::<u64>(),
            scale in -10.0f64..10.0,
        ) {
            let p = reps.len();
            let mut reps = reps;
            reps[p - 1] += 1;
            let xp: Vec<Vec<f64>> = (0..p)
                .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect();
            let d = Design::new(xp, reps).unwrap();
            let mut rng = substream(seed, 0);
            let u: Vec<f64> = (0..p).map(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)).collect();
            let v: Vec<f64> = (0..p).map(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)).collect();
            let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
            let eu = d.expand(&u).unwrap();
            let ev = d.expand(&v).unwrap();
            let esum = d.expand(&sum).unwrap();
            for k in 0..d.n() {
                prop_assert_eq!(esum[k], eu[k] + ev[k]);
            }
            let scaled: Vec<f64> = u.iter().map(|a| scale * a).collect();
            let escaled = d.expand(&scaled).unwrap();
            for k in 0..d.n() {
                prop_assert_eq!(escaled[k], scale * eu[k]);
            }
        }
    }
}
