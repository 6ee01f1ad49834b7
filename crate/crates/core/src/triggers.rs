//! Scheduling policies: periodic, the event-triggered oracle and the two
//! self-triggered laws.

use rayon::prelude::*;

use crate::dynamics::ErrorExtendedSystem;
use crate::error::{check_finite, Error, Result};
use crate::homogeneity::{rho, DegreeFunction, DilationField};
use crate::integrator::{integrate_until_guard, GuardOutcome, IntegratorOptions, DEFAULT_GUARD_TOL};
use crate::polyhom::corollary_time_map;
use crate::util::norm;

pub const DEFAULT_TAU_MIN: f64 = 1e-6;
pub const DEFAULT_TAU_MAX: f64 = 1.0;
/// Below this state norm the loop is treated as being at the equilibrium.
pub const ORIGIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub enum PolicyKind {
    Periodic { period: f64 },
    EventOracle { c: f64, horizon: f64 },
    /// `τ↓ = e^{−ρ(s)}·τ*` with `s` the ray parameter from the sphere of radius `d_gamma`.
    SelfTrigHomog { tau_star: f64, d_gamma: f64, dilation: DilationField, xi: DegreeFunction },
    /// `τ↓ = λ^(l−1)·τ̃*`.
    SelfTrigPoly { tau_tilde_star: f64, l: u32, r_ref: f64 },
}

#[derive(Debug, Clone)]
pub struct TriggerPolicy {
    pub kind: PolicyKind,
    pub tau_min: f64,
    pub tau_max: f64,
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be positive, got {v}")))
    }
}

impl TriggerPolicy {
    pub fn new(kind: PolicyKind) -> Result<Self> {
        match &kind {
            PolicyKind::Periodic { period } => positive(*period, "period")?,
            PolicyKind::EventOracle { c, horizon } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(Error::InvalidThreshold(*c));
                }
                positive(*horizon, "oracle horizon")?;
            }
            PolicyKind::SelfTrigHomog { tau_star, d_gamma, dilation, .. } => {
                positive(*tau_star, "tau*")?;
                positive(*d_gamma, "d_gamma")?;
                if !dilation.is_standard() {
                    return Err(Error::InvalidArgument("self-trigger law needs a standard dilation".into()));
                }
            }
            PolicyKind::SelfTrigPoly { tau_tilde_star, l, r_ref } => {
                positive(*tau_tilde_star, "tau~*")?;
                positive(*r_ref, "R_ref")?;
                if *l < 2 {
                    return Err(Error::InvalidArgument(format!("degree l must be at least 2, got {l}")));
                }
            }
        }
        Ok(Self { kind, tau_min: DEFAULT_TAU_MIN, tau_max: DEFAULT_TAU_MAX })
    }

    pub fn periodic(period: f64) -> Result<Self> {
        Self::new(PolicyKind::Periodic { period })
    }

    pub fn with_caps(mut self, tau_min: f64, tau_max: f64) -> Result<Self> {
        positive(tau_min, "tau_min")?;
        positive(tau_max, "tau_max")?;
        if tau_min > tau_max {
            return Err(Error::InvalidArgument(format!("tau_min {tau_min} exceeds tau_max {tau_max}")));
        }
        self.tau_min = tau_min;
        self.tau_max = tau_max;
        Ok(self)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PolicyKind::Periodic { .. } => "periodic",
            PolicyKind::EventOracle { .. } => "event-oracle",
            PolicyKind::SelfTrigHomog { .. } => "self-trigger",
            PolicyKind::SelfTrigPoly { .. } => "self-trigger-poly",
        }
    }

    /// The time to wait after sampling `x`, before capping.
    pub fn raw_time(&self, system: &ErrorExtendedSystem, x: &[f64], opts: &IntegratorOptions) -> Result<f64> {
        check_finite(x, "sampled state")?;
        match &self.kind {
            PolicyKind::Periodic { period } => Ok(*period),
            PolicyKind::EventOracle { c, horizon } => {
                if norm(x) < ORIGIN_TOL {
                    return Err(Error::OriginReached(0.0));
                }
                Ok(event_oracle_time(system, x, *c, horizon.min(self.tau_max), opts)?.unwrap_or(*horizon))
            }
            PolicyKind::SelfTrigHomog { tau_star, d_gamma, dilation, xi } => {
                let xn = norm(x);
                if xn < ORIGIN_TOL {
                    return Err(Error::OriginReached(0.0));
                }
                self_trigger_homog(*tau_star, *d_gamma, dilation, xi, x)
            }
            PolicyKind::SelfTrigPoly { tau_tilde_star, l, r_ref } => {
                let n = system.base().ratio_dim();
                Ok(corollary_time_map(&x[..n.min(x.len())], *tau_tilde_star, *l, *r_ref))
            }
        }
    }

    /// Capped next inter-execution time; `τ_max` at the equilibrium.
    pub fn next_time(&self, system: &ErrorExtendedSystem, x: &[f64], opts: &IntegratorOptions) -> Result<f64> {
        match self.raw_time(system, x, opts) {
            Ok(t) => Ok(t.clamp(self.tau_min, self.tau_max)),
            Err(Error::OriginReached(_)) => Ok(self.tau_max),
            Err(e) => Err(e),
        }
    }
}

/// `e^{−ρ(s)}·τ*` with `s = (1/r)·ln(|x|/d_Γ)` and base point `(d_Γ/|x|)·x`.
pub fn self_trigger_homog(
    tau_star: f64,
    d_gamma: f64,
    dilation: &DilationField,
    xi: &DegreeFunction,
    x: &[f64],
) -> Result<f64> {
    let xn = norm(x);
    let r = dilation.weights()[0];
    let s = (xn / d_gamma).ln() / r;
    let y: Vec<f64> = x.iter().map(|v| v * d_gamma / xn).collect();
    let p = rho(xi, dilation, &y, s)?;
    Ok((-p).exp() * tau_star)
}

/// First time `|e| = c|x|` along the extended flow from `(x, 0)`, or `None`
/// when no crossing happens before `horizon`.
pub fn event_oracle_time(
    system: &ErrorExtendedSystem,
    x: &[f64],
    c: f64,
    horizon: f64,
    opts: &IntegratorOptions,
) -> Result<Option<f64>> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidThreshold(c));
    }
    let z0 = ErrorExtendedSystem::sampled(x);
    let guard = |z: &[f64]| system.guard(z, c);
    match integrate_until_guard(system, &z0, &guard, horizon, opts, DEFAULT_GUARD_TOL)? {
        GuardOutcome::Crossed(ev) => Ok(Some(ev.t_star)),
        GuardOutcome::NoCrossing { .. } => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checked: usize,
    pub violations: usize,
    /// States whose oracle saw no crossing within the horizon.
    pub no_crossing: usize,
    /// Smallest and mean of `oracle − policy` over states with a crossing.
    pub min_margin: f64,
    pub mean_margin: f64,
    /// Smallest `policy/oracle` ratio.
    pub min_ratio: f64,
}

/// Compare the policy against the event oracle at every state. A violation is
/// a policy time exceeding the oracle time by more than `1e-9`.
pub fn validate_against_oracle(
    policy: &TriggerPolicy,
    system: &ErrorExtendedSystem,
    states: &[Vec<f64>],
    c: f64,
    horizon: f64,
    opts: &IntegratorOptions,
) -> Result<ValidationReport> {
    let rows: Vec<(f64, Option<f64>)> = states
        .par_iter()
        .map(|x| {
            let tau = policy.next_time(system, x, opts)?;
            let oracle = event_oracle_time(system, x, c, horizon, opts)?;
            Ok((tau, oracle))
        })
        .collect::<Result<_>>()?;
    let mut report = ValidationReport {
        checked: rows.len(),
        violations: 0,
        no_crossing: 0,
        min_margin: f64::INFINITY,
        mean_margin: 0.0,
        min_ratio: f64::INFINITY,
    };
    let mut crossed = 0usize;
    for (tau, oracle) in rows {
        match oracle {
            Some(o) => {
                let margin = o - tau;
                if margin < -1e-9 {
                    report.violations += 1;
                }
                report.min_margin = report.min_margin.min(margin);
                report.mean_margin += margin;
                if o > 0.0 {
                    report.min_ratio = report.min_ratio.min(tau / o);
                }
                crossed += 1;
            }
            None => {
                report.no_crossing += 1;
                if tau > horizon + 1e-9 {
                    report.violations += 1;
                }
            }
        }
    }
    if crossed > 0 {
        report.mean_margin /= crossed as f64;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::PolyField;
    use std::sync::Arc;

    fn scalar() -> ErrorExtendedSystem {
        ErrorExtendedSystem::new(Arc::new(PolyField::from_expressions(1, &["-x1 - e1"]).unwrap()))
    }

    #[test]
    fn scalar_oracle() {
        let sys = scalar();
        let opts = IntegratorOptions::default();
        for sigma in [0.1, 0.33, 0.8] {
            let t = event_oracle_time(&sys, &[2.0], sigma, 10.0, &opts).unwrap().unwrap();
            assert!((t - sigma / (1.0 + sigma)).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_self_trigger_is_constant() {
        let dil = DilationField::standard(1, 1.0).unwrap();
        let p = TriggerPolicy::new(PolicyKind::SelfTrigHomog {
            tau_star: 0.2,
            d_gamma: 1.5,
            dilation: dil,
            xi: DegreeFunction::Constant(0.0),
        })
        .unwrap();
        let sys = scalar();
        let opts = IntegratorOptions::default();
        for x in [0.01, 1.5, 40.0] {
            assert!((p.next_time(&sys, &[x], &opts).unwrap() - 0.2).abs() < 1e-15);
        }
        assert_eq!(p.next_time(&sys, &[0.0], &opts).unwrap(), DEFAULT_TAU_MAX);
    }

    #[test]
    fn validation_negative_control() {
        let sys = scalar();
        let opts = IntegratorOptions::default();
        let states: Vec<Vec<f64>> = (1..20).map(|k| vec![k as f64 * 0.3]).collect();
        let tau = 0.33 / 1.33;
        let good = TriggerPolicy::periodic(tau * (1.0 - 1e-7)).unwrap();
        let rep = validate_against_oracle(&good, &sys, &states, 0.33, 5.0, &opts).unwrap();
        assert_eq!(rep.violations, 0);
        let bad = TriggerPolicy::periodic(tau * 100.0).unwrap();
        let rep = validate_against_oracle(&bad, &sys, &states, 0.33, 5.0, &opts).unwrap();
        assert_eq!(rep.violations, states.len());
    }

    #[test]
    fn caps_apply() {
        let sys = scalar();
        let opts = IntegratorOptions::default();
        let p = TriggerPolicy::periodic(5.0).unwrap();
        assert_eq!(p.next_time(&sys, &[1.0], &opts).unwrap(), 1.0);
        let p = TriggerPolicy::periodic(1e-9).unwrap();
        assert_eq!(p.next_time(&sys, &[1.0], &opts).unwrap(), 1e-6);
        assert!(TriggerPolicy::periodic(-1.0).is_err());
        assert!(TriggerPolicy::periodic(0.1).unwrap().with_caps(0.5, 0.1).is_err());
    }
}
