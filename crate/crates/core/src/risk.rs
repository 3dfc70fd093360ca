//! Monte Carlo risk evaluation and analytic risk oracles.
//!
//! Replicate `i` of a run with seed `s` always uses response stream `(s, i)`.
//! Replicates are grouped into fixed chunks of [`CHUNK`] indices; each chunk
//! is reduced with compensated summation and the chunk summaries are merged
//! in index order. The result is therefore bit-identical for any rayon
//! thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{shrinkage_weights, Estimator, Target};
use crate::groups::{apply_sample, induce_decision_beta, induce_decision_cov, transport};
use crate::losses::{loss_beta, loss_lik, loss_quad, LossKind};
use crate::model::{sample_response, sufficient_stats, Design, ParameterPoint, ResponseVector};
use crate::rng::{derive_seed, random_parameter, random_transform, substream};
use crate::special::expected_log_scaled_chi2;
use crate::verify::relative_deviation;

pub const CHUNK: u64 = 1024;

/// Acceptance band half-width, in standard errors.
pub const SE_BAND: f64 = 4.0;

/// Tolerance on relative deviations in exact-identity checks.
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub mean_loss: f64,
    pub std_error: f64,
    pub replicates: u64,
    pub seed: u64,
}

impl RiskEstimate {
    /// `|mean - target| <= SE_BAND * std_error`.
    pub fn covers(&self, target: f64) -> bool {
        (self.mean_loss - target).abs() <= SE_BAND * self.std_error
    }

    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean_loss - target) / self.std_error
    }
}

/// Standard error of a difference of two independent estimates.
pub fn combined_se(a: &RiskEstimate, b: &RiskEstimate) -> f64 {
    a.std_error.hypot(b.std_error)
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

/// Neumaier-compensated sum.
fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl Moments {
    fn from_slice(values: &[f64]) -> Self {
        let n = values.len() as u64;
        if n == 0 {
            return Self {
                n,
                mean: 0.0,
                m2: 0.0,
            };
        }
        let mean = compensated_sum(values.iter().copied()) / n as f64;
        let m2 = compensated_sum(values.iter().map(|v| (v - mean).powi(2)));
        Self { n, mean, m2 }
    }

    fn merge(self, other: Self) -> Self {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        Self {
            n,
            mean: self.mean + delta * w,
            m2: self.m2 + other.m2 + delta * delta * self.n as f64 * w,
        }
    }

    fn estimate(self, seed: u64) -> RiskEstimate {
        let n = self.n as f64;
        RiskEstimate {
            mean_loss: self.mean,
            std_error: (self.m2 / (n - 1.0)).sqrt() / n.sqrt(),
            replicates: self.n,
            seed,
        }
    }
}

struct ChunkOutcome {
    moments: Vec<Moments>,
    failed: usize,
    first_error: Option<Error>,
}

/// Mean and standard error of each of the `width` outputs of `f` over
/// replicate indices `0..replicates`.
pub fn mc_expectations<F>(
    replicates: u64,
    seed: u64,
    width: usize,
    f: F,
) -> Result<Vec<RiskEstimate>>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    if replicates < 2 {
        return Err(Error::InvalidParameter(format!(
            "at least two replicates are required, got {replicates}"
        )));
    }
    let chunks = replicates.div_ceil(CHUNK);
    let outcomes: Vec<ChunkOutcome> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(replicates);
            let mut columns = vec![Vec::with_capacity((hi - lo) as usize); width];
            let mut failed = 0;
            let mut first_error = None;
            for i in lo..hi {
                match f(i) {
                    Ok(values) => {
                        debug_assert_eq!(values.len(), width);
                        for (col, v) in columns.iter_mut().zip(values) {
                            col.push(v);
                        }
                    }
                    Err(e) => {
                        failed += 1;
                        first_error.get_or_insert(e);
                    }
                }
            }
            ChunkOutcome {
                moments: columns.iter().map(|c| Moments::from_slice(c)).collect(),
                failed,
                first_error,
            }
        })
        .collect();

    let failed: usize = outcomes.iter().map(|o| o.failed).sum();
    if failed > 0 {
        let first = outcomes
            .iter()
            .find_map(|o| o.first_error.as_ref())
            .map(|e| e.to_string())
            .unwrap_or_default();
        return Err(Error::DegenerateReplicates {
            failed,
            replicates: replicates as usize,
            first,
        });
    }

    let mut total = vec![
        Moments {
            n: 0,
            mean: 0.0,
            m2: 0.0
        };
        width
    ];
    for outcome in &outcomes {
        for (acc, m) in total.iter_mut().zip(&outcome.moments) {
            *acc = acc.merge(*m);
        }
    }
    Ok(total.into_iter().map(|m| m.estimate(seed)).collect())
}

/// Scalar form of [`mc_expectations`].
pub fn mc_expectation<F>(replicates: u64, seed: u64, f: F) -> Result<RiskEstimate>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    Ok(mc_expectations(replicates, seed, 1, |i| f(i).map(|v| vec![v]))?[0])
}

fn check_pair(estimator: &Estimator, loss: LossKind) -> Result<()> {
    let ok = match estimator.target() {
        Target::Beta => loss == LossKind::Beta,
        Target::Cov => loss.is_covariance(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::IncompatiblePair {
            estimator: estimator.to_string(),
            loss: loss.to_string(),
        })
    }
}

/// Loss of decision `d` at `theta`.
pub fn score(design: &Design, loss: LossKind, d: &[f64], theta: &ParameterPoint) -> Result<f64> {
    match loss {
        LossKind::Beta => loss_beta(design, d, theta),
        LossKind::Quad => loss_quad(d, theta.sigma2()),
        LossKind::Lik => {
            if let Some(block) = d.iter().position(|v| *v == 0.0) {
                return Err(Error::ZeroVariance { block });
            }
            loss_lik(d, theta.sigma2())
        }
    }
}

/// Monte Carlo risk of `estimator` under `loss` at `theta`.
pub fn mc_risk(
    design: &Design,
    estimator: &Estimator,
    loss: LossKind,
    theta: &ParameterPoint,
    replicates: u64,
    seed: u64,
) -> Result<RiskEstimate> {
    check_pair(estimator, loss)?;
    design.check_p(theta.beta())?;
    mc_expectation(replicates, seed, |i| {
        let y = sample_response(design, theta, seed, i)?;
        let d = estimator.estimate(design, &y)?;
        score(design, loss, &d, theta)
    })
}

fn require_tail(design: &Design) -> Result<()> {
    if design.is_tail_replicated() {
        Ok(())
    } else {
        Err(Error::WrongShape(format!(
            "analytic coefficient risk needs p - 1 singleton populations and one replicated tail, got reps {:?}",
            design.reps()
        )))
    }
}

/// Constant risk of least squares under the coefficient loss:
/// `(p - 1) + 1 / (n - p + 1)`.
pub fn analytic_risk_beta(design: &Design) -> Result<f64> {
    require_tail(design)?;
    let p = design.p() as f64;
    let n = design.n() as f64;
    Ok((p - 1.0) + 1.0 / (n - p + 1.0))
}

/// Risk of the equivariant coefficient estimator with constant `omega`:
/// the least squares risk plus `omega_p^2`. Only the last entry of `omega`
/// acts, since the scale statistic vanishes elsewhere.
pub fn analytic_risk_beta_family(design: &Design, omega: &[f64]) -> Result<f64> {
    design.check_p(omega)?;
    let last = omega[omega.len() - 1];
    Ok(analytic_risk_beta(design)? + last * last)
}

fn check_nu(nu: u64) -> Result<f64> {
    if nu == 0 {
        Err(Error::InvalidParameter(
            "degrees of freedom must be at least 1".into(),
        ))
    } else {
        Ok(nu as f64)
    }
}

/// Per-population quadratic-loss risk of `h * s^2` with `nu` degrees of
/// freedom: `h^2 (nu + 2) / nu - 2 h + 1`.
pub fn analytic_risk_quad(h: f64, nu: u64) -> Result<f64> {
    let nu = check_nu(nu)?;
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "weight {h} must be non-negative"
        )));
    }
    Ok(h * h * (nu + 2.0) / nu - 2.0 * h + 1.0)
}

/// Minimizer `nu / (nu + 2)` of [`analytic_risk_quad`].
pub fn quad_optimal_weight(nu: u64) -> Result<f64> {
    let nu = check_nu(nu)?;
    Ok(nu / (nu + 2.0))
}

/// Minimal per-population likelihood-loss risk, attained by `s^2`:
/// `ln nu - ln 2 - digamma(nu / 2)`.
pub fn analytic_risk_lik(nu: u64) -> Result<f64> {
    let nu = check_nu(nu)?;
    Ok(-expected_log_scaled_chi2(nu))
}

/// Per-population likelihood-loss risk of `h * s^2`.
pub fn analytic_risk_lik_weighted(h: f64, nu: u64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "weight {h} must be positive"
        )));
    }
    Ok(h - h.ln() - 1.0 + analytic_risk_lik(nu)?)
}

/// Total risk of `H * S^2` under a covariance loss.
pub fn analytic_risk_cov(design: &Design, loss: LossKind, h: &[f64]) -> Result<f64> {
    design.check_p(h)?;
    design
        .reps()
        .iter()
        .zip(h)
        .enumerate()
        .map(|(block, (&n, &h))| {
            let nu = (n as u64).checked_sub(1).filter(|nu| *nu > 0);
            let nu = nu.ok_or(Error::NotEstimable { block })?;
            match loss {
                LossKind::Quad => analytic_risk_quad(h, nu),
                LossKind::Lik => analytic_risk_lik_weighted(h, nu),
                LossKind::Beta => Err(Error::IncompatiblePair {
                    estimator: "covariance".into(),
                    loss: loss.to_string(),
                }),
            }
        })
        .sum()
}

/// Analytic risk of `estimator` under `loss`, where one is known.
pub fn analytic_risk(design: &Design, estimator: &Estimator, loss: LossKind) -> Option<f64> {
    use crate::estimators::{CovWeights, OmegaSpec};
    check_pair(estimator, loss).ok()?;
    match estimator {
        Estimator::Ols | Estimator::Equivariant(OmegaSpec::Zero) => analytic_risk_beta(design).ok(),
        Estimator::Equivariant(OmegaSpec::Constant(w)) => analytic_risk_beta_family(design, w).ok(),
        Estimator::Cov(
            w @ (CovWeights::Shrinkage | CovWeights::Unit | CovWeights::Constant(_)),
        ) => {
            let h = w.resolve(design, None).ok()?;
            analytic_risk_cov(design, loss, &h).ok()
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub loss: LossKind,
    pub grid: Vec<f64>,
    /// Risk of `h * S^2` summed over populations, one entry per grid point.
    pub total: Vec<RiskEstimate>,
    /// `per_population[j][g]`: contribution of population `j` at grid point `g`.
    pub per_population: Vec<Vec<RiskEstimate>>,
    pub argmin_total: usize,
    pub argmin: Vec<usize>,
}

fn argmin(estimates: &[RiskEstimate]) -> usize {
    estimates.iter().enumerate().fold(0, |best, (i, e)| {
        if e.mean_loss < estimates[best].mean_loss {
            i
        } else {
            best
        }
    })
}

impl SweepResult {
    /// Largest spacing to a neighbour of grid point `g`.
    pub fn local_step(&self, g: usize) -> f64 {
        let left = if g > 0 {
            self.grid[g] - self.grid[g - 1]
        } else {
            0.0
        };
        let right = if g + 1 < self.grid.len() {
            self.grid[g + 1] - self.grid[g]
        } else {
            0.0
        };
        left.max(right)
    }

    /// Whether each population's argmin lies within one grid step of its
    /// target weight.
    pub fn argmin_within_one_step(&self, targets: &[f64]) -> Vec<bool> {
        self.argmin
            .iter()
            .zip(targets)
            .map(|(&g, &t)| (self.grid[g] - t).abs() <= self.local_step(g) * (1.0 + 1e-9))
            .collect()
    }
}

/// Risk-optimal weights per population: `W` for the quadratic loss, ones for
/// the likelihood loss.
pub fn optimal_weights(design: &Design, loss: LossKind) -> Result<Vec<f64>> {
    match loss {
        LossKind::Quad => shrinkage_weights(design),
        LossKind::Lik => {
            shrinkage_weights(design)?;
            Ok(vec![1.0; design.p()])
        }
        LossKind::Beta => Err(Error::IncompatiblePair {
            estimator: "covariance".into(),
            loss: loss.to_string(),
        }),
    }
}

/// Monte Carlo risk of `h * S^2` over a grid of constant weights `h`, using
/// the same draws at every grid point.
pub fn dominance_sweep(
    design: &Design,
    loss: LossKind,
    h_grid: &[f64],
    theta: &ParameterPoint,
    replicates: u64,
    seed: u64,
) -> Result<SweepResult> {
    if !loss.is_covariance() {
        return Err(Error::IncompatiblePair {
            estimator: "cov:h".into(),
            loss: loss.to_string(),
        });
    }
    shrinkage_weights(design)?;
    design.check_p(theta.beta())?;
    if h_grid.is_empty() {
        return Err(Error::InvalidParameter("weight grid is empty".into()));
    }
    if let Some(i) = h_grid.iter().position(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "grid point {} must be positive",
            h_grid[i]
        )));
    }
    if h_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "weight grid must be strictly increasing".into(),
        ));
    }

    let p = design.p();
    let stride = p + 1;
    let width = h_grid.len() * stride;
    let sigma2 = theta.sigma2();
    let estimates = mc_expectations(replicates, seed, width, |i| {
        let y = sample_response(design, theta, seed, i)?;
        let s2 = sufficient_stats(design, &y)?.all_variances()?;
        if loss == LossKind::Lik {
            if let Some(block) = s2.iter().position(|v| *v == 0.0) {
                return Err(Error::ZeroVariance { block });
            }
        }
        let mut out = Vec::with_capacity(width);
        for &h in h_grid {
            let terms: Vec<f64> = s2
                .iter()
                .zip(sigma2)
                .map(|(s, sig)| {
                    let r = h * s / sig;
                    match loss {
                        LossKind::Quad => (r - 1.0).powi(2),
                        _ => r - r.ln() - 1.0,
                    }
                })
                .collect();
            out.push(terms.iter().sum());
            out.extend(terms);
        }
        Ok(out)
    })?;

    let total: Vec<RiskEstimate> = (0..h_grid.len()).map(|g| estimates[g * stride]).collect();
    let per_population: Vec<Vec<RiskEstimate>> = (0..p)
        .map(|j| {
            (0..h_grid.len())
                .map(|g| estimates[g * stride + 1 + j])
                .collect()
        })
        .collect();
    Ok(SweepResult {
        loss,
        grid: h_grid.to_vec(),
        argmin_total: argmin(&total),
        argmin: per_population.iter().map(|e| argmin(e)).collect(),
        total,
        per_population,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OrbitReport {
    pub estimates: Vec<RiskEstimate>,
    /// Largest pairwise `|r_i - r_j| / hypot(se_i, se_j)`.
    pub max_pairwise_z: f64,
    pub pass: bool,
}

/// Risk at every point of `thetas`. Draws for `thetas[k]` are the draws for
/// `thetas[0]` moved by the group element transporting `thetas[0]` to
/// `thetas[k]`, so all points share common random numbers.
pub fn orbit_constancy_check(
    design: &Design,
    estimator: &Estimator,
    loss: LossKind,
    thetas: &[ParameterPoint],
    replicates: u64,
    seed: u64,
) -> Result<OrbitReport> {
    check_pair(estimator, loss)?;
    let reference = thetas
        .first()
        .ok_or_else(|| Error::InvalidParameter("no parameter points supplied".into()))?;
    let transforms = thetas
        .iter()
        .map(|theta| transport(design, reference, theta))
        .collect::<Result<Vec<_>>>()?;

    let estimates = mc_expectations(replicates, seed, thetas.len(), |i| {
        let base = sample_response(design, reference, seed, i)?;
        thetas
            .iter()
            .zip(&transforms)
            .map(|(theta, g)| {
                let y = apply_sample(design, g, &base)?;
                let d = estimator.estimate(design, &y)?;
                score(design, loss, &d, theta)
            })
            .collect()
    })?;

    let mut max_z = 0.0f64;
    for (i, a) in estimates.iter().enumerate() {
        for b in &estimates[i + 1..] {
            let diff = (a.mean_loss - b.mean_loss).abs();
            let se = combined_se(a, b);
            let z = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            max_z = max_z.max(z);
        }
    }
    Ok(OrbitReport {
        estimates,
        max_pairwise_z: max_z,
        pass: max_z <= SE_BAND,
    })
}

/// `thetas[0] = (0, I)` followed by `count` random points.
pub fn standard_and_random_points(p: usize, count: usize, seed: u64) -> Vec<ParameterPoint> {
    let mut rng = substream(derive_seed(seed, "orbit-points"), 0);
    std::iter::once(ParameterPoint::standard(p))
        .chain((0..count).map(|_| random_parameter(&mut rng, p)))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceReport {
    pub estimator: String,
    pub checked: usize,
    pub resampled: usize,
    pub max_deviation: f64,
    pub pass: bool,
}

const MAX_RETRIES: u64 = 8;

fn is_degenerate(e: &Error) -> bool {
    matches!(
        e,
        Error::DegenerateBlock { .. } | Error::ZeroVariance { .. } | Error::NonPositive { .. }
    )
}

/// Largest relative deviation between `delta(g(y))` and the induced action
/// of `g` on `delta(y)` over random transforms and responses.
pub fn equivariance_check(
    design: &Design,
    estimator: &Estimator,
    transform_count: usize,
    sample_count: usize,
    seed: u64,
) -> Result<EquivarianceReport> {
    let p = design.p();
    let g_seed = derive_seed(seed, "equivariance-transforms");
    let y_seed = derive_seed(seed, "equivariance-samples");
    let mut max_dev = 0.0f64;
    let mut checked = 0;
    let mut resampled = 0;
    for t in 0..transform_count {
        let g = random_transform(&mut substream(g_seed, t as u64), p);
        for s in 0..sample_count {
            let pair = (t * sample_count + s) as u64;
            let theta = random_parameter(&mut substream(y_seed, pair), p);
            let mut attempt = 0;
            let deviation = loop {
                let y = sample_response(
                    design,
                    &theta,
                    y_seed,
                    pair * MAX_RETRIES + attempt + (1 << 40),
                )?;
                match equivariance_deviation(design, estimator, &g, &y) {
                    Ok(dev) => break dev,
                    Err(e) if is_degenerate(&e) && attempt + 1 < MAX_RETRIES => {
                        attempt += 1;
                        resampled += 1;
                    }
                    Err(e) => return Err(e),
                }
            };
            max_dev = max_dev.max(deviation);
            checked += 1;
        }
    }
    Ok(EquivarianceReport {
        estimator: estimator.to_string(),
        checked,
        resampled,
        max_deviation: max_dev,
        pass: max_dev <= IDENTITY_TOL,
    })
}

fn equivariance_deviation(
    design: &Design,
    estimator: &Estimator,
    g: &crate::groups::SampleTransform,
    y: &ResponseVector,
) -> Result<f64> {
    let gy = apply_sample(design, g, y)?;
    let moved = estimator.estimate(design, &gy)?;
    let base = estimator.estimate(design, y)?;
    let induced = match estimator.target() {
        Target::Beta => induce_decision_beta(design, g, &base)?,
        Target::Cov => induce_decision_cov(g, &base)?,
    };
    Ok(relative_deviation(&moved, &induced))
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationEntry {
    pub coefficient: usize,
    pub population: usize,
    pub correlation: f64,
    /// Large-sample standard error of a null correlation, `1 / sqrt(R)`.
    pub std_error: f64,
}

/// Sample correlations at `(0, I)` between least-squares coefficients and
/// the per-population sample variances.
pub fn ols_variance_correlation(
    design: &Design,
    replicates: u64,
    seed: u64,
) -> Result<Vec<CorrelationEntry>> {
    let theta = ParameterPoint::standard(design.p());
    let populations: Vec<usize> = (0..design.p()).filter(|&j| design.reps()[j] >= 2).collect();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let y = sample_response(design, &theta, seed, i)?;
            let stats = sufficient_stats(design, &y)?;
            let beta = design.xp_solve(&stats.means)?;
            let s2 = populations
                .iter()
                .map(|&j| stats.variances[j].unwrap_or(0.0))
                .collect();
            Ok((beta, s2))
        })
        .collect::<Result<_>>()?;
    let r = replicates as f64;
    let mut out = Vec::new();
    for k in 0..design.p() {
        let b: Vec<f64> = rows.iter().map(|row| row.0[k]).collect();
        for (q, &j) in populations.iter().enumerate() {
            let s: Vec<f64> = rows.iter().map(|row| row.1[q]).collect();
            let mb = compensated_sum(b.iter().copied()) / r;
            let ms = compensated_sum(s.iter().copied()) / r;
            let cov = compensated_sum(b.iter().zip(&s).map(|(x, y)| (x - mb) * (y - ms)));
            let vb = compensated_sum(b.iter().map(|x| (x - mb).powi(2)));
            let vs = compensated_sum(s.iter().map(|y| (y - ms).powi(2)));
            out.push(CorrelationEntry {
                coefficient: k,
                population: j,
                correlation: cov / (vb * vs).sqrt(),
                std_error: 1.0 / r.sqrt(),
            });
        }
    }
    Ok(out)
}
