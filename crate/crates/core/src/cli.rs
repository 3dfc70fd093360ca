//! Batch front-end: `estimate`, `risk`, `sweep` and `verify`.
//!
//! Exit status is 0 when every verdict passes, 1 when a verification fails
//! and 2 for configuration, parse or I/O errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::estimators::{ols_beta, CovWeights, Estimator, OmegaSpec, Target};
use crate::losses::LossKind;
use crate::model::{sufficient_stats, Design, ModelDoc, ParameterPoint, ResponseVector};
use crate::report::{self, RiskRow};
use crate::risk::{
    analytic_risk, dominance_sweep, equivariance_check, mc_risk, optimal_weights,
    orbit_constancy_check, standard_and_random_points, IDENTITY_TOL, SE_BAND,
};
use crate::verify::{algebra_suites, CheckVerdict};

pub const MIN_REPLICATES: u64 = 100;
const ALGEBRA_CASES: usize = 1000;
const EQUIVARIANCE_TRANSFORMS: usize = 40;
const EQUIVARIANCE_SAMPLES: usize = 25;

#[derive(Debug, Parser)]
#[command(
    name = "equivar",
    version,
    about = "Equivariant estimation and risk verification for replicated fixed-X normal linear models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; a built-in default is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured number of Monte Carlo replicates.
    #[arg(long, global = true)]
    replicates: Option<u64>,

    /// Output directory for CSV and JSON reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Estimate coefficients and variances from the configured data.
    Estimate,
    /// Monte Carlo risk of the configured estimator against its analytic value.
    Risk,
    /// Risk of h * S^2 over a grid of weights.
    Sweep,
    /// Run the group, invariance, equivariance and orbit-constancy suites.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Risk => "risk",
            Command::Sweep => "sweep",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaDoc {
    pub beta: Vec<f64>,
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Points(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        match self {
            GridSpec::Points(v) => Ok(v.clone()),
            GridSpec::Range { start, stop, step } => {
                if !(*step > 0.0) || !(stop >= start) {
                    return Err(Error::Parse(format!(
                        "grid range needs step > 0 and stop >= start, got {start}..{stop} by {step}"
                    )));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize;
                Ok((0..=count).map(|k| start + step * k as f64).collect())
            }
        }
    }
}

/// JSON run configuration. The model fields (`xp`, `reps`, `beta`,
/// `sigma2`) sit at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelDoc,
    /// Parameter points for the orbit-constancy suite; the standard point
    /// plus `orbit_points` random ones when omitted.
    #[serde(default)]
    pub thetas: Option<Vec<ThetaDoc>>,
    #[serde(default = "default_orbit_points")]
    pub orbit_points: usize,
    #[serde(default)]
    pub estimator: Option<String>,
    #[serde(default)]
    pub loss: Option<LossKind>,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Observed responses for `estimate`, in block order.
    #[serde(default)]
    pub data: Option<Vec<f64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_orbit_points() -> usize {
    10
}

fn default_replicates() -> u64 {
    100_000
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Two-population design with one singleton and a tail of three.
    pub fn builtin() -> Self {
        Self {
            model: ModelDoc {
                xp: vec![vec![1.0, 0.0], vec![1.0, 1.0]],
                reps: vec![1, 3],
                beta: None,
                sigma2: None,
            },
            thetas: None,
            orbit_points: default_orbit_points(),
            estimator: Some("ols".into()),
            loss: Some(LossKind::Beta),
            replicates: default_replicates(),
            seed: Some(20_240_501),
            grid: Some(GridSpec::Range {
                start: 0.1,
                stop: 1.5,
                step: 0.05,
            }),
            data: None,
            out: None,
        }
    }
}

struct Resolved {
    config: RunConfig,
    explicit: bool,
    seed: u64,
    replicates: u64,
    out: PathBuf,
}

fn resolve(cli: &Cli) -> Result<Resolved> {
    let (config, explicit) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            (RunConfig::from_json(&text)?, true)
        }
        None => (RunConfig::builtin(), false),
    };
    let seed = cli.seed.or(config.seed).ok_or_else(|| {
        Error::Parse("no seed given: set `seed` in the config or pass --seed".into())
    })?;
    let replicates = cli.replicates.unwrap_or(config.replicates);
    if replicates < MIN_REPLICATES {
        return Err(Error::Parse(format!(
            "replicates = {replicates} is below the minimum of {MIN_REPLICATES}"
        )));
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    Ok(Resolved {
        config,
        explicit,
        seed,
        replicates,
        out,
    })
}

fn metadata(command: Command) -> serde_json::Value {
    let generated = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    json!({
        "tool": "equivar",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "generated_unix": generated,
    })
}

fn verdict_str(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Estimator and loss from the config, each defaulting from the other.
fn estimator_and_loss(config: &RunConfig) -> Result<(Estimator, LossKind)> {
    let estimator: Option<Estimator> = config.estimator.as_deref().map(str::parse).transpose()?;
    match (estimator, config.loss) {
        (Some(e), Some(l)) => Ok((e, l)),
        (Some(e), None) => {
            let loss = match &e {
                Estimator::Ols | Estimator::Equivariant(_) => LossKind::Beta,
                Estimator::Cov(CovWeights::Unit) => LossKind::Lik,
                Estimator::Cov(_) => LossKind::Quad,
            };
            Ok((e, loss))
        }
        (None, Some(l)) => {
            let e = match l {
                LossKind::Beta => Estimator::Ols,
                LossKind::Quad => Estimator::Cov(CovWeights::Shrinkage),
                LossKind::Lik => Estimator::Cov(CovWeights::Unit),
            };
            Ok((e, l))
        }
        (None, None) => Ok((Estimator::Ols, LossKind::Beta)),
    }
}

/// Run the command line `args` (including the program name). Returns the
/// process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    2
                }
            };
        }
    };
    let resolved = match resolve(&cli) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let outcome = match cli.command {
        Command::Estimate => cmd_estimate(&resolved, out),
        Command::Risk => cmd_risk(&resolved, out),
        Command::Sweep => cmd_sweep(&resolved, out),
        Command::Verify => cmd_verify(&resolved, out),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: "<stdout>".into(),
        message: e.to_string(),
    }
}

fn cmd_estimate(r: &Resolved, out: &mut dyn Write) -> Result<bool> {
    let design = r.config.model.design()?;
    let data = r
        .config
        .data
        .clone()
        .ok_or_else(|| Error::Parse("`estimate` needs a `data` array of responses".into()))?;
    let y = ResponseVector::new(&design, data)?;
    let configured: Option<Estimator> =
        r.config.estimator.as_deref().map(str::parse).transpose()?;

    let beta_estimator = match &configured {
        Some(e) if e.target() == Target::Beta => e.clone(),
        _ => Estimator::Ols,
    };
    let beta = beta_estimator.estimate(&design, &y)?;
    writeln!(out, "beta ({beta_estimator}): {}", fmt_vec(&beta)).map_err(io_err)?;

    let stats = sufficient_stats(&design, &y)?;
    let cov_estimator = match &configured {
        Some(e) if e.target() == Target::Cov => Some(e.clone()),
        _ if design.reps().iter().all(|&n| n >= 2) => Some(Estimator::Cov(CovWeights::Unit)),
        _ => None,
    };
    let sigma2 = match &cov_estimator {
        Some(e) => {
            let s = e.estimate(&design, &y)?;
            writeln!(out, "sigma2 ({e}): {}", fmt_vec(&s)).map_err(io_err)?;
            Some(s)
        }
        None => {
            writeln!(out, "sigma2: not estimable (some population observed once)")
                .map_err(io_err)?;
            None
        }
    };

    report::ensure_dir(&r.out)?;
    report::write_json(
        &r.out.join("estimate.json"),
        &json!({
            "beta_estimator": beta_estimator.to_string(),
            "beta": beta,
            "cov_estimator": cov_estimator.map(|e| e.to_string()),
            "sigma2": sigma2,
            "means": stats.means,
            "variances": stats.variances,
            "metadata": metadata(Command::Estimate),
        }),
    )?;
    Ok(true)
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn cmd_risk(r: &Resolved, out: &mut dyn Write) -> Result<bool> {
    let design = r.config.model.design()?;
    let theta = r.config.model.theta()?;
    let (estimator, loss) = estimator_and_loss(&r.config)?;
    let est = mc_risk(&design, &estimator, loss, &theta, r.replicates, r.seed)?;
    let analytic = analytic_risk(&design, &estimator, loss);
    let (verdict, pass) = match analytic {
        Some(a) => {
            let ok = est.covers(a);
            (verdict_str(ok), ok)
        }
        None => ("NO_ORACLE", true),
    };
    writeln!(
        out,
        "{verdict} risk {estimator}/{loss}: mean_loss={} std_error={} analytic={}",
        est.mean_loss,
        est.std_error,
        analytic.map_or("n/a".to_string(), |a| a.to_string())
    )
    .map_err(io_err)?;

    report::ensure_dir(&r.out)?;
    report::write_csv(&r.out.join("risk.csv"), &[RiskRow::new("all", None, &est)])?;
    report::write_json(
        &r.out.join("risk.json"),
        &json!({
            "estimator": estimator.to_string(),
            "loss": loss,
            "theta": theta,
            "mean_loss": est.mean_loss,
            "std_error": est.std_error,
            "replicates": est.replicates,
            "seed": est.seed,
            "analytic": analytic,
            "z_score": analytic.map(|a| est.z_score(a)),
            "band_se": SE_BAND,
            "verdict": verdict,
            "metadata": metadata(Command::Risk),
        }),
    )?;
    Ok(pass)
}

fn cmd_sweep(r: &Resolved, out: &mut dyn Write) -> Result<bool> {
    // Without a config the sweep runs on two populations of three.
    let (design, loss) = if r.explicit {
        (
            r.config.model.design()?,
            r.config.loss.unwrap_or(LossKind::Quad),
        )
    } else {
        (replicated_builtin()?, LossKind::Quad)
    };
    let theta = match (&r.config.model.beta, &r.config.model.sigma2) {
        (None, None) => ParameterPoint::standard(design.p()),
        _ => r.config.model.theta()?,
    };
    let grid = r
        .config
        .grid
        .clone()
        .unwrap_or(GridSpec::Range {
            start: 0.1,
            stop: 1.5,
            step: 0.05,
        })
        .points()?;
    let sweep = dominance_sweep(&design, loss, &grid, &theta, r.replicates, r.seed)?;
    let targets = optimal_weights(&design, loss)?;
    let within = sweep.argmin_within_one_step(&targets);
    let pass = within.iter().all(|ok| *ok);

    for (j, (&g, ok)) in sweep.argmin.iter().zip(&within).enumerate() {
        writeln!(
            out,
            "{} population {j}: argmin h={} (optimal {})",
            verdict_str(*ok),
            sweep.grid[g],
            targets[j]
        )
        .map_err(io_err)?;
    }

    report::ensure_dir(&r.out)?;
    report::write_csv(&r.out.join("sweep.csv"), &report::sweep_total_rows(&sweep))?;
    report::write_csv(
        &r.out.join("sweep_by_population.csv"),
        &report::sweep_population_rows(&sweep),
    )?;
    let populations: Vec<_> = sweep
        .argmin
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            json!({
                "population": j,
                "argmin_h": sweep.grid[g],
                "optimal_h": targets[j],
                "grid_step": sweep.local_step(g),
                "verdict": verdict_str(within[j]),
            })
        })
        .collect();
    report::write_json(
        &r.out.join("sweep.json"),
        &json!({
            "loss": loss,
            "grid_points": sweep.grid.len(),
            "replicates": r.replicates,
            "seed": r.seed,
            "argmin_total_h": sweep.grid[sweep.argmin_total],
            "populations": populations,
            "verdict": verdict_str(pass),
            "metadata": metadata(Command::Sweep),
        }),
    )?;
    Ok(pass)
}

#[derive(Debug, Clone, Serialize)]
struct SuiteVerdict {
    name: String,
    pass: bool,
    detail: serde_json::Value,
}

impl From<CheckVerdict> for SuiteVerdict {
    fn from(v: CheckVerdict) -> Self {
        Self {
            name: v.name.clone(),
            pass: v.pass,
            detail: serde_json::to_value(&v).expect("verdict serializes"),
        }
    }
}

fn replicated_builtin() -> Result<Design> {
    Design::new(vec![vec![1.0, 0.0], vec![1.0, 1.0]], vec![3, 3])
}

fn verify_designs(r: &Resolved) -> Result<Vec<(String, Design)>> {
    if r.explicit {
        return Ok(vec![("config".into(), r.config.model.design()?)]);
    }
    Ok(vec![
        ("tail".into(), r.config.model.design()?),
        ("replicated".into(), replicated_builtin()?),
    ])
}

fn orbit_points(r: &Resolved, design: &Design) -> Result<Vec<ParameterPoint>> {
    match &r.config.thetas {
        Some(list) => list
            .iter()
            .map(|t| ParameterPoint::new(t.beta.clone(), t.sigma2.clone()))
            .collect(),
        None => Ok(standard_and_random_points(
            design.p(),
            r.config.orbit_points,
            r.seed,
        )),
    }
}

fn cmd_verify(r: &Resolved, out: &mut dyn Write) -> Result<bool> {
    let mut suites: Vec<SuiteVerdict> = algebra_suites(ALGEBRA_CASES, r.seed)?
        .into_iter()
        .map(SuiteVerdict::from)
        .collect();

    for (label, design) in verify_designs(r)? {
        let replicated = design.reps().iter().all(|&n| n >= 2);
        let mut estimators = vec![(Estimator::Ols, LossKind::Beta)];
        if design.is_tail_replicated() {
            let mut omega = vec![0.0; design.p()];
            omega[design.p() - 1] = 1.0;
            estimators.push((
                Estimator::Equivariant(OmegaSpec::constant(omega)?),
                LossKind::Beta,
            ));
        }
        if replicated {
            estimators.push((Estimator::Cov(CovWeights::Shrinkage), LossKind::Quad));
            estimators.push((Estimator::Cov(CovWeights::Unit), LossKind::Lik));
        }

        for (estimator, _) in &estimators {
            let rep = equivariance_check(
                &design,
                estimator,
                EQUIVARIANCE_TRANSFORMS,
                EQUIVARIANCE_SAMPLES,
                r.seed,
            )?;
            suites.push(SuiteVerdict {
                name: format!("equivariance.{label}.{estimator}"),
                pass: rep.pass,
                detail: json!({
                    "checked": rep.checked,
                    "resampled": rep.resampled,
                    "max_deviation": rep.max_deviation,
                    "tolerance": IDENTITY_TOL,
                }),
            });
        }

        let thetas = orbit_points(r, &design)?;
        for (estimator, loss) in estimators
            .iter()
            .filter(|(e, _)| matches!(e, Estimator::Ols | Estimator::Cov(CovWeights::Shrinkage)))
        {
            let rep =
                orbit_constancy_check(&design, estimator, *loss, &thetas, r.replicates, r.seed)?;
            suites.push(SuiteVerdict {
                name: format!("orbit_constancy.{label}.{estimator}.{loss}"),
                pass: rep.pass,
                detail: json!({
                    "points": rep.estimates.len(),
                    "max_pairwise_z": rep.max_pairwise_z,
                    "band_se": SE_BAND,
                    "mean_loss": rep.estimates.iter().map(|e| e.mean_loss).collect::<Vec<_>>(),
                    "std_error": rep.estimates.iter().map(|e| e.std_error).collect::<Vec<_>>(),
                    "analytic": analytic_risk(&design, estimator, *loss),
                }),
            });
        }
    }

    for s in &suites {
        writeln!(out, "{} {}", verdict_str(s.pass), s.name).map_err(io_err)?;
    }
    let pass = suites.iter().all(|s| s.pass);
    writeln!(out, "{}: {} suites", verdict_str(pass), suites.len()).map_err(io_err)?;

    report::ensure_dir(&r.out)?;
    report::write_json(
        &r.out.join("verify.json"),
        &json!({
            "seed": r.seed,
            "replicates": r.replicates,
            "suites": suites,
            "verdict": verdict_str(pass),
            "metadata": metadata(Command::Verify),
        }),
    )?;
    Ok(pass)
}

/// Load a run configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text)
}

/// Least-squares estimate for an in-memory model document and data vector.
pub fn quick_estimate(doc: &ModelDoc, data: Vec<f64>) -> Result<Vec<f64>> {
    let design = doc.design()?;
    let y = ResponseVector::new(&design, data)?;
    ols_beta(&design, &y)
}
