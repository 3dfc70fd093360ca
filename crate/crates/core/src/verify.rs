//! Randomized identity checks for the group structure, the loss invariance
//! and the maximal invariant. Each suite reports the worst relative
//! deviation it saw against a fixed tolerance.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::groups::{
    apply_sample, compose, induce_decision_beta, induce_decision_cov, induce_param, inverse,
    maximal_invariant, transport, SampleTransform,
};
use crate::losses::{loss_beta, loss_lik, loss_quad};
use crate::model::{sample_response, Design, ResponseVector};
use crate::rng::{derive_seed, random_design, random_parameter, random_transform, substream};

/// Tolerance for group and homomorphism laws.
pub const GROUP_TOL: f64 = 1e-12;
/// Tolerance for loss invariance, transitivity and maximal invariance.
pub const INVARIANCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct CheckVerdict {
    pub name: String,
    pub cases: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckVerdict {
    fn new(name: &str, cases: usize, max_deviation: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            cases,
            max_deviation,
            tolerance,
            pass: max_deviation <= tolerance,
        }
    }
}

/// `max |a_i - b_i| / max(1, |a|_inf, |b|_inf)`.
pub fn relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let scale = a.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

fn scalar_deviation(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn pair_deviation(g: &SampleTransform, h: &SampleTransform) -> f64 {
    relative_deviation(g.c(), h.c()).max(relative_deviation(g.a(), h.a()))
}

fn random_response<R: Rng>(rng: &mut R, design: &Design) -> ResponseVector {
    let values = (0..design.n())
        .map(|_| rng.random_range(-10.0..10.0))
        .collect();
    ResponseVector::new(design, values).expect("length matches design")
}

#[derive(Default)]
struct Worst(f64);

impl Worst {
    fn see(&mut self, dev: f64) {
        if !(dev <= self.0) {
            self.0 = if dev.is_nan() { f64::INFINITY } else { dev };
        }
    }
}

/// Closure, associativity, identity and inverse on random elements, checked
/// both on the `(c, a)` pairs and through their action on random responses;
/// plus the homomorphism law for the three induced actions.
pub fn group_law_suite(cases: usize, seed: u64) -> Result<Vec<CheckVerdict>> {
    let seed = derive_seed(seed, "group-laws");
    let (mut closure, mut assoc, mut ident, mut inv) = (
        Worst::default(),
        Worst::default(),
        Worst::default(),
        Worst::default(),
    );
    let (mut hom_param, mut hom_beta, mut hom_cov) =
        (Worst::default(), Worst::default(), Worst::default());
    for k in 0..cases {
        let mut rng = substream(seed, k as u64);
        let design = random_design(&mut rng, 4, 1, 4);
        let p = design.p();
        let g1 = random_transform(&mut rng, p);
        let g2 = random_transform(&mut rng, p);
        let g3 = random_transform(&mut rng, p);
        let y = random_response(&mut rng, &design);
        let e = SampleTransform::identity(p);

        let g21 = compose(&g2, &g1)?;
        let seq = apply_sample(&design, &g2, &apply_sample(&design, &g1, &y)?)?;
        closure.see(relative_deviation(
            apply_sample(&design, &g21, &y)?.values(),
            seq.values(),
        ));

        let left = compose(&compose(&g3, &g2)?, &g1)?;
        let right = compose(&g3, &g21)?;
        assoc.see(pair_deviation(&left, &right));
        assoc.see(relative_deviation(
            apply_sample(&design, &left, &y)?.values(),
            apply_sample(&design, &right, &y)?.values(),
        ));

        ident.see(pair_deviation(&compose(&e, &g1)?, &g1));
        ident.see(pair_deviation(&compose(&g1, &e)?, &g1));
        ident.see(relative_deviation(
            apply_sample(&design, &e, &y)?.values(),
            y.values(),
        ));

        let gi = inverse(&g1);
        inv.see(pair_deviation(&compose(&gi, &g1)?, &e));
        inv.see(pair_deviation(&compose(&g1, &gi)?, &e));
        inv.see(relative_deviation(
            apply_sample(&design, &gi, &apply_sample(&design, &g1, &y)?)?.values(),
            y.values(),
        ));

        let theta = random_parameter(&mut rng, p);
        let once = induce_param(&design, &g21, &theta)?;
        let twice = induce_param(&design, &g2, &induce_param(&design, &g1, &theta)?)?;
        hom_param.see(relative_deviation(once.beta(), twice.beta()));
        hom_param.see(relative_deviation(once.sigma2(), twice.sigma2()));

        let d: Vec<f64> = (0..p).map(|_| rng.random_range(-4.0..4.0)).collect();
        hom_beta.see(relative_deviation(
            &induce_decision_beta(&design, &g21, &d)?,
            &induce_decision_beta(&design, &g2, &induce_decision_beta(&design, &g1, &d)?)?,
        ));

        let dd: Vec<f64> = (0..p)
            .map(|_| rng.random_range(-2.0..2.0f64).exp())
            .collect();
        hom_cov.see(relative_deviation(
            &induce_decision_cov(&g21, &dd)?,
            &induce_decision_cov(&g2, &induce_decision_cov(&g1, &dd)?)?,
        ));
    }
    Ok(vec![
        CheckVerdict::new("group.closure", cases, closure.0, GROUP_TOL),
        CheckVerdict::new("group.associativity", cases, assoc.0, GROUP_TOL),
        CheckVerdict::new("group.identity", cases, ident.0, GROUP_TOL),
        CheckVerdict::new("group.inverse", cases, inv.0, GROUP_TOL),
        CheckVerdict::new("homomorphism.parameter", cases, hom_param.0, GROUP_TOL),
        CheckVerdict::new("homomorphism.decision_beta", cases, hom_beta.0, GROUP_TOL),
        CheckVerdict::new("homomorphism.decision_cov", cases, hom_cov.0, GROUP_TOL),
    ])
}

/// `L(d, theta) = L(g~(d), g-(theta))` for the three losses.
pub fn loss_invariance_suite(cases: usize, seed: u64) -> Result<Vec<CheckVerdict>> {
    let seed = derive_seed(seed, "loss-invariance");
    let (mut beta, mut quad, mut lik) = (Worst::default(), Worst::default(), Worst::default());
    for k in 0..cases {
        let mut rng = substream(seed, k as u64);
        let design = random_design(&mut rng, 4, 1, 4);
        let p = design.p();
        let g = random_transform(&mut rng, p);
        let theta = random_parameter(&mut rng, p);
        let moved = induce_param(&design, &g, &theta)?;

        let d: Vec<f64> = (0..p).map(|_| rng.random_range(-4.0..4.0)).collect();
        let gd = induce_decision_beta(&design, &g, &d)?;
        beta.see(scalar_deviation(
            loss_beta(&design, &d, &theta)?,
            loss_beta(&design, &gd, &moved)?,
        ));

        let dd: Vec<f64> = (0..p)
            .map(|_| rng.random_range(-2.0..2.0f64).exp())
            .collect();
        let gdd = induce_decision_cov(&g, &dd)?;
        quad.see(scalar_deviation(
            loss_quad(&dd, theta.sigma2())?,
            loss_quad(&gdd, moved.sigma2())?,
        ));
        lik.see(scalar_deviation(
            loss_lik(&dd, theta.sigma2())?,
            loss_lik(&gdd, moved.sigma2())?,
        ));
    }
    Ok(vec![
        CheckVerdict::new("loss_invariance.beta", cases, beta.0, INVARIANCE_TOL),
        CheckVerdict::new("loss_invariance.quad", cases, quad.0, INVARIANCE_TOL),
        CheckVerdict::new("loss_invariance.lik", cases, lik.0, INVARIANCE_TOL),
    ])
}

/// `g-(theta1) = theta2` for `g = transport(theta1, theta2)`.
pub fn transitivity_suite(cases: usize, seed: u64) -> Result<CheckVerdict> {
    let seed = derive_seed(seed, "transitivity");
    let mut worst = Worst::default();
    for k in 0..cases {
        let mut rng = substream(seed, k as u64);
        let design = random_design(&mut rng, 4, 1, 4);
        let th1 = random_parameter(&mut rng, design.p());
        let th2 = random_parameter(&mut rng, design.p());
        let landed = induce_param(&design, &transport(&design, &th1, &th2)?, &th1)?;
        worst.see(relative_deviation(landed.beta(), th2.beta()));
        worst.see(relative_deviation(landed.sigma2(), th2.sigma2()));
    }
    Ok(CheckVerdict::new(
        "transitivity",
        cases,
        worst.0,
        INVARIANCE_TOL,
    ))
}

/// `z(g(y)) = z(y)` on model draws from random designs with replicated
/// populations.
pub fn maximal_invariance_suite(cases: usize, seed: u64) -> Result<CheckVerdict> {
    let seed = derive_seed(seed, "maximal-invariance");
    let mut worst = Worst::default();
    let mut checked = 0;
    let mut draw = 0u64;
    while checked < cases {
        let mut rng = substream(seed, draw);
        draw += 1;
        let design = random_design(&mut rng, 4, 1, 6);
        let g = random_transform(&mut rng, design.p());
        let theta = random_parameter(&mut rng, design.p());
        let y = sample_response(&design, &theta, seed, draw + (1 << 40))?;
        let Ok(z) = maximal_invariant(&design, &y) else {
            continue;
        };
        let gz = maximal_invariant(&design, &apply_sample(&design, &g, &y)?)?;
        if z.blocks.len() != gz.blocks.len() {
            worst.see(f64::INFINITY);
        }
        for (a, b) in z.blocks.iter().zip(&gz.blocks) {
            if a.sign != b.sign || a.block != b.block {
                worst.see(f64::INFINITY);
            }
            for (x, y) in a.ratios.iter().zip(&b.ratios) {
                worst.see((x - y).abs() / x.abs().max(y.abs()).max(1.0));
            }
        }
        checked += 1;
    }
    Ok(CheckVerdict::new(
        "maximal_invariance",
        cases,
        worst.0,
        INVARIANCE_TOL,
    ))
}

/// All algebraic suites with `cases` random instances each.
pub fn algebra_suites(cases: usize, seed: u64) -> Result<Vec<CheckVerdict>> {
    let mut out = group_law_suite(cases, seed)?;
    out.extend(loss_invariance_suite(cases, seed)?);
    out.push(transitivity_suite(cases, seed)?);
    out.push(maximal_invariance_suite(cases, seed)?);
    Ok(out)
}
