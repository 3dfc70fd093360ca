//! The per-population location-scale group acting on responses, and the
//! actions it induces on parameters and decisions.
//!
//! An element is a pair `(c, a)` of `p`-vectors with `c > 0`, acting on a
//! response vector as `y -> expand(c) * y + expand(a)`. Composition and
//! inversion are computed directly on the pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Design, ParameterPoint, ResponseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform")]
pub struct SampleTransform {
    c: Vec<f64>,
    a: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTransform {
    c: Vec<f64>,
    a: Vec<f64>,
}

impl TryFrom<RawTransform> for SampleTransform {
    type Error = Error;

    fn try_from(raw: RawTransform) -> Result<Self> {
        Self::new(raw.c, raw.a)
    }
}

impl SampleTransform {
    pub fn new(c: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        if c.len() != a.len() {
            return Err(Error::DimensionMismatch {
                expected: c.len(),
                got: a.len(),
            });
        }
        if let Some(i) = c.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidTransform(format!(
                "scale c[{i}] = {} must be positive and finite",
                c[i]
            )));
        }
        if let Some(i) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform(format!(
                "shift a[{i}] = {} must be finite",
                a[i]
            )));
        }
        Ok(Self { c, a })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            c: vec![1.0; p],
            a: vec![0.0; p],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn p(&self) -> usize {
        self.c.len()
    }

    fn check_p(&self, p: usize) -> Result<()> {
        if self.p() == p {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: p,
                got: self.p(),
            })
        }
    }
}

/// `g2 . g1`, i.e. apply `g1` first: `(c2 c1, c2 a1 + a2)`.
pub fn compose(g2: &SampleTransform, g1: &SampleTransform) -> Result<SampleTransform> {
    g1.check_p(g2.p())?;
    let c = g2.c.iter().zip(&g1.c).map(|(x, y)| x * y).collect();
    let a =
        g2.c.iter()
            .zip(&g1.a)
            .zip(&g2.a)
            .map(|((c2, a1), a2)| c2 * a1 + a2)
            .collect();
    Ok(SampleTransform { c, a })
}

/// `(1/c, -a/c)`.
pub fn inverse(g: &SampleTransform) -> SampleTransform {
    SampleTransform {
        c: g.c.iter().map(|c| 1.0 / c).collect(),
        a: g.c.iter().zip(&g.a).map(|(c, a)| -a / c).collect(),
    }
}

pub fn apply_sample(
    design: &Design,
    g: &SampleTransform,
    y: &ResponseVector,
) -> Result<ResponseVector> {
    g.check_p(design.p())?;
    y.check_design(design)?;
    let mut out = y.values().to_vec();
    for (i, block) in design.blocks().enumerate() {
        for v in &mut out[block] {
            *v = g.c[i] * *v + g.a[i];
        }
    }
    Ok(ResponseVector::from_raw(out))
}

/// Induced action on parameters:
/// `beta -> xp^{-1} (c * (xp beta) + a)`, `sigma2 -> c^2 * sigma2`.
pub fn induce_param(
    design: &Design,
    g: &SampleTransform,
    theta: &ParameterPoint,
) -> Result<ParameterPoint> {
    theta.check_design(design)?;
    let beta = induce_decision_beta(design, g, theta.beta())?;
    let sigma2 =
        g.c.iter()
            .zip(theta.sigma2())
            .map(|(c, s)| c * c * s)
            .collect();
    ParameterPoint::new(beta, sigma2)
}

/// Induced action on coefficient decisions, `d -> xp^{-1} (c * (xp d) + a)`.
pub fn induce_decision_beta(design: &Design, g: &SampleTransform, d: &[f64]) -> Result<Vec<f64>> {
    g.check_p(design.p())?;
    let xd = design.xp_mul(d)?;
    let moved: Vec<f64> = xd
        .iter()
        .zip(&g.c)
        .zip(&g.a)
        .map(|((x, c), a)| c * x + a)
        .collect();
    design.xp_solve(&moved)
}

/// Induced action on diagonal covariance decisions, `D -> c^2 * D`.
pub fn induce_decision_cov(g: &SampleTransform, d: &[f64]) -> Result<Vec<f64>> {
    g.check_p(d.len())?;
    if let Some(index) = d.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::NonPositive {
            index,
            value: d[index],
        });
    }
    Ok(g.c.iter().zip(d).map(|(c, v)| c * c * v).collect())
}

/// Group element whose induced action carries `theta1` to `theta2`:
/// `c = sqrt(sigma2_2 / sigma2_1)`, `a = xp beta2 - c * (xp beta1)`.
pub fn transport(
    design: &Design,
    theta1: &ParameterPoint,
    theta2: &ParameterPoint,
) -> Result<SampleTransform> {
    theta1.check_design(design)?;
    theta2.check_design(design)?;
    let c: Vec<f64> = theta2
        .sigma2()
        .iter()
        .zip(theta1.sigma2())
        .map(|(s2, s1)| s2.sqrt() / s1.sqrt())
        .collect();
    let x1 = design.xp_mul(theta1.beta())?;
    let x2 = design.xp_mul(theta2.beta())?;
    let a = x2
        .iter()
        .zip(&x1)
        .zip(&c)
        .map(|((u2, u1), c)| u2 - c * u1)
        .collect();
    SampleTransform::new(c, a)
}

/// Maximal invariant of one replicated block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockInvariant {
    pub block: usize,
    /// `(Y_j - Y_first) / (Y_last - Y_first)` for the interior observations.
    pub ratios: Vec<f64>,
    /// Sign of `Y_last - Y_first`.
    pub sign: i8,
}

/// Maximal invariant of a response vector: one entry for every population
/// with at least two observations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaximalInvariant {
    pub blocks: Vec<BlockInvariant>,
}

impl MaximalInvariant {
    pub fn for_block(&self, block: usize) -> Option<&BlockInvariant> {
        self.blocks.iter().find(|b| b.block == block)
    }
}

pub fn maximal_invariant(design: &Design, y: &ResponseVector) -> Result<MaximalInvariant> {
    y.check_design(design)?;
    let y = y.values();
    let mut blocks = Vec::new();
    for (i, range) in design.blocks().enumerate() {
        let obs = &y[range];
        if obs.len() < 2 {
            continue;
        }
        let first = obs[0];
        let last = obs[obs.len() - 1];
        let span = last - first;
        if span == 0.0 {
            return Err(Error::DegenerateBlock { block: i });
        }
        let ratios = obs[1..obs.len() - 1]
            .iter()
            .map(|v| (v - first) / span)
            .collect();
        blocks.push(BlockInvariant {
            block: i,
            ratios,
            sign: if span > 0.0 { 1 } else { -1 },
        });
    }
    Ok(MaximalInvariant { blocks })
}
