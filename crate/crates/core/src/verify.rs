//! Property suites behind `selftrig verify`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::casestudies::CaseStudy;
use crate::dynamics::{ErrorExtendedSystem, FrozenError, VectorField};
use crate::error::Result;
use crate::homogeneity::{infer_degree_function, rho, verify_commutation};
use crate::integrator::{integrate, IntegratorOptions};
use crate::linbound::{MaximizeOptions, StateRegion};
use crate::polyhom::{check_phi_related, lift_invariant_set, MarginFn};
use crate::triggers::{event_oracle_time, validate_against_oracle, TriggerPolicy};
use crate::util::{halton, norm, scaled};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// States sampled from the region with a Halton sequence.
pub fn region_samples(region: &dyn StateRegion, count: usize, offset: u64) -> Vec<Vec<f64>> {
    (0..count as u64).map(|i| region.from_unit(&halton(i + offset, region.seed_dim()))).collect()
}

/// Run every property check that applies to `cs`.
pub fn suite(cs: &CaseStudy, opts: &MaximizeOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let io = IntegratorOptions::with_tolerances(1e-11, 1e-13);
    let sys = ErrorExtendedSystem::new(cs.model.closed_loop.clone());
    let bound = cs.default_tau_bound(opts)?;
    let policy = cs.self_trigger_policy(bound)?;
    out.extend(soundness_checks(cs, &sys, &policy, bound, &io)?);
    if cs.xi.is_some() {
        out.extend(homogeneous_checks(cs, &sys, &io)?);
    }
    if cs.homogenized.is_some() {
        out.extend(polynomial_checks(cs, &io)?);
    }
    Ok(out)
}

fn soundness_checks(
    cs: &CaseStudy,
    sys: &ErrorExtendedSystem,
    policy: &TriggerPolicy,
    bound: f64,
    io: &IntegratorOptions,
) -> Result<Vec<CheckResult>> {
    let region = cs.omega()?;
    let states: Vec<Vec<f64>> = region_samples(&region, 200, 1).into_iter().filter(|x| norm(x) > 1e-9).collect();
    let horizon = 10.0 * bound.max(policy.tau_max);
    let rep = validate_against_oracle(policy, sys, &states, cs.c(), horizon, io)?;
    let mut out = vec![CheckResult::new(
        "self-trigger lower-bounds the event oracle",
        rep.violations == 0,
        format!("{} states, {} violations, min margin {:e}", rep.checked, rep.violations, rep.min_margin),
    )];
    let inflated = cs.self_trigger_policy(100.0 * bound)?;
    let rep = validate_against_oracle(&inflated, sys, &states, cs.c(), horizon, io)?;
    out.push(CheckResult::new(
        "inflated bound is caught",
        rep.violations > 0,
        format!("{} violations with 100x bound", rep.violations),
    ));
    Ok(out)
}

fn homogeneous_checks(cs: &CaseStudy, sys: &ErrorExtendedSystem, io: &IntegratorOptions) -> Result<Vec<CheckResult>> {
    let dil = cs.dilation.clone().expect("homogeneous case");
    let xi = cs.xi.clone().expect("homogeneous case");
    let n = cs.dim();
    let x_field: Arc<dyn VectorField> = Arc::new(FrozenError::new(cs.model.closed_loop.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pts: Vec<Vec<f64>> = Vec::new();
    while pts.len() < 50 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        if norm(&x) > 0.1 {
            pts.push(x);
        }
    }
    let mut out = Vec::new();

    let inferred = infer_degree_function(Arc::new(dil.clone()), x_field.clone(), &pts);
    let (ok, detail) = match &inferred {
        Ok(f) => {
            let err = pts.iter().map(|p| (f.eval(p) - xi.eval(p)).abs()).fold(0.0, f64::max);
            (err <= 1e-6, format!("max |xi_inferred - xi| = {err:e}"))
        }
        Err(e) => (false, e.to_string()),
    };
    out.push(CheckResult::new("bracket degree matches declared xi", ok, detail));

    let mut worst = 0.0f64;
    for (k, p) in pts.iter().take(20).enumerate() {
        let s = -2.0 + 4.0 * (k as f64 + 0.5) / 20.0;
        let x = scaled(p, 0.5);
        worst = worst.max(verify_commutation(x_field.as_ref(), &dil, &xi, &x, s, 0.05, io)?);
    }
    out.push(CheckResult::new(
        "flow commutation for |s| <= 2",
        worst <= 1e-6,
        format!("max residual {worst:e}"),
    ));

    let mut worst = 0.0f64;
    for (k, p) in pts.iter().take(20).enumerate() {
        let s = -1.5 + 3.0 * (k as f64 + 0.5) / 20.0;
        let a = event_oracle_time(sys, p, cs.c(), 10.0, io)?;
        let b = event_oracle_time(sys, &dil.flow(p, s), cs.c(), 10.0, io)?;
        if let (Some(a), Some(b)) = (a, b) {
            worst = worst.max(rel(b * rho(&xi, &dil, p, s)?.exp(), a));
        }
    }
    out.push(CheckResult::new(
        "event-oracle scaling law within 2%",
        worst <= 0.02,
        format!("max relative error {worst:e}"),
    ));

    if cs.id == "jet-engine" {
        let policy = cs.self_trigger_policy(1.0)?;
        let mut worst = 0.0f64;
        for p in &pts {
            worst = worst.max(rel(policy.raw_time(sys, p, io)?, cs.jet_closed_form(1.0, p)));
        }
        out.push(CheckResult::new(
            "closed-form time map matches quadrature",
            worst <= 1e-8,
            format!("max relative error {worst:e}"),
        ));
    }
    Ok(out)
}

fn polynomial_checks(cs: &CaseStudy, io: &IntegratorOptions) -> Result<Vec<CheckResult>> {
    let hs = cs.homogenized.clone().expect("polynomial case");
    let n = cs.dim();
    let l = hs.l();
    let mut out = Vec::new();
    let exact = hs.field().poly().monomials().all(|m| m.degree() == l);
    out.push(CheckResult::new("homogenized monomials have degree l", exact, format!("l = {l}")));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut phi, mut ratio, mut wdrift) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut z0 = x.clone();
        z0.extend(x.iter().map(|v| 0.01 * v * rng.random_range(-1.0..1.0)));
        let r = check_phi_related(&hs, &z0, 0.01, io)?;
        phi = phi.max(r.residual / norm(&z0).max(1.0));
        ratio = ratio.max(r.ratio_residual);
        let y = integrate(&hs.extended(), &hs.phi(&z0), 0.0, 0.01, io)?.final_state();
        wdrift = wdrift.max((y[n] - 1.0).abs()).max(y[2 * n + 1].abs());
    }
    out.push(CheckResult::new("phi-relatedness", phi <= 1e-7, format!("max residual {phi:e}")));
    out.push(CheckResult::new("ratio transport", ratio <= 1e-8, format!("max |eta_Z - eta_Y| {ratio:e}")));
    out.push(CheckResult::new("w and e_w stay constant", wdrift <= 1e-12, format!("max drift {wdrift:e}")));

    let zsys = hs.original_extended();
    let ysys = hs.extended();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lambda = rng.random_range(0.1..2.0);
        let t = event_oracle_time(&zsys, &x, cs.c(), 10.0, io)?;
        let mut y = scaled(&x, lambda);
        y.push(lambda);
        let tl = event_oracle_time(&ysys, &y, cs.c(), 10.0 / lambda.powi(l as i32 - 1), io)?;
        if let (Some(t), Some(tl)) = (t, tl) {
            worst = worst.max(rel(tl * lambda.powi(l as i32 - 1), t));
        }
    }
    out.push(CheckResult::new("time map identity", worst <= 1e-6, format!("max relative error {worst:e}")));

    // x + e is constant under Z, so {V(x + e) <= V(x0)} is invariant.
    let v = cs.certificate.v.clone();
    let level = cs.certificate.omega_level;
    let base: MarginFn = Arc::new(move |x: &[f64], e: &[f64]| {
        let s: Vec<f64> = x.iter().zip(e).map(|(a, b)| a + b).collect();
        level - v.eval(&s)
    });
    let mut min_margin = f64::INFINITY;
    for k in 0..100 {
        let lambda = 0.05 + 0.9 * (k as f64 + 0.5) / 100.0;
        let set = lift_invariant_set(base.clone(), lambda)?;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let traj = integrate(&ysys, &hs.lift(&x, &vec![0.0; n], lambda), 0.0, 0.1, io)?;
        for t in traj.mesh() {
            min_margin = min_margin.min(set.base_margin(&traj.eval(t)?) / level);
        }
    }
    out.push(CheckResult::new(
        "lifted invariant set",
        min_margin >= -1e-9,
        format!("min relative margin {min_margin:e}"),
    ));
    Ok(out)
}
