//! The jet engine compressor and the rigid body, with every constant the
//! pipelines and the acceptance suite need.

use std::fmt;
use std::sync::Arc;

use crate::dynamics::StabilityCertificate;
use crate::error::{Error, Result};
use crate::homogeneity::{DegreeFunction, DilationField};
use crate::linbound::{
    maximize_norms, tau_star, Ball, LiftedSublevel, MaximizeOptions, NormMaximizationResult, SphereCap, StateRegion,
    SublevelSet, TauStar,
};
use crate::poly::{PolyField, ScalarPoly};
use crate::polyhom::{homogenize, tau_tilde_star, HomogenizedSystem};
use crate::simloop::PlantModel;
use crate::triggers::{PolicyKind, TriggerPolicy};
use crate::util::dot;

/// Reference values for both systems.
pub mod constants {
    // Jet engine compressor, in the (x1, y) coordinates.
    pub const JET_V: &str = "1.46*x1^2 - 0.35*x1*x2 + 1.16*x2^2";
    pub const JET_P: f64 = 0.74e8;
    pub const JET_Q: f64 = 0.90e8;
    pub const JET_OMEGA_LEVEL: f64 = 27.04;
    pub const JET_OPERATION_RADIUS: f64 = 5.4;
    pub const JET_SIGMAS: [f64; 3] = [0.11, 0.22, 0.33];
    pub const JET_SIGMA: f64 = 0.33;
    pub const JET_TAU_STAR: f64 = 7.63e-3;
    pub const JET_ARGMAX_X: [f64; 2] = [12.5, 0.0];
    pub const JET_ARGMAX_E: [f64; 2] = [3.75, 0.0];
    pub const JET_X0: [f64; 2] = [5.37, 0.34];
    pub const JET_T_END: f64 = 3.0;
    pub const JET_N_IC: usize = 50;
    /// `(σ, periodic executions, self-trigger executions)`.
    pub const JET_TABLE: [(f64, f64, f64); 3] = [(0.11, 890.0, 123.0), (0.22, 506.0, 68.0), (0.33, 397.0, 53.0)];
    pub const JET_BETA: f64 = 1.0;

    // Rigid body.
    pub const RIGID_V: &str = "0.5*(x1 + x3)^2 + 0.5*(x2 - x3^2)^2 + x3^2";
    pub const RIGID_P: f64 = 91446.0;
    pub const RIGID_Q: f64 = 147190.0;
    pub const RIGID_SIGMA: f64 = 0.01;
    pub const RIGID_OPERATION_RADIUS: f64 = 15.0;
    pub const RIGID_OMEGA_LEVEL: f64 = 25650.0;
    pub const RIGID_TAU_STAR: f64 = 4.5e-5;
    pub const RIGID_TAU_TILDE_STAR: f64 = 5.1e-3;
    pub const RIGID_LAMBDA_MAX: f64 = 0.066;
    /// Level of the base set at `λ`: `a(1 − λ²) + b(1 − λ²)²`.
    pub const RIGID_LIFT_A: f64 = 1.5;
    pub const RIGID_LIFT_B: f64 = 0.5;
    pub const RIGID_ARGMAX_XA: [f64; 3] = [1.3, 2.3, -1.4];
    pub const RIGID_ARGMAX_XB: [f64; 3] = [0.7, 2.2, -1.3];
    pub const RIGID_ARGMAX_W: f64 = 0.066;
    pub const RIGID_T_END: f64 = 5.0;
    pub const RIGID_REDUCTION: f64 = 8.0;
    pub const RIGID_L: u32 = 3;
}

use constants::*;

pub type PlantFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type FeedbackFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// One fully parameterized benchmark.
#[derive(Clone)]
pub struct CaseStudy {
    pub id: &'static str,
    pub closed_loop: Arc<PolyField>,
    /// `ẋ = f(x, u)` in simulation coordinates.
    pub plant: PlantFn,
    /// `u = k(x)`; the closed loop is `f(x, k(x + e))`.
    pub feedback: FeedbackFn,
    pub certificate: StabilityCertificate,
    pub operation_radius: f64,
    pub dilation: Option<DilationField>,
    pub xi: Option<DegreeFunction>,
    pub homogenized: Option<HomogenizedSystem>,
    pub model: PlantModel,
}

impl fmt::Debug for CaseStudy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CaseStudy").field("id", &self.id).field("certificate", &self.certificate).finish_non_exhaustive()
    }
}

/// Throttle `u` of the compressor model from the `(x1, y)` state.
pub fn jet_throttle(x: &[f64], beta: f64) -> f64 {
    let (x1, y) = (x[0], x[1]);
    let b2 = beta * beta;
    x1 - 0.5 * b2 * (x1 * x1 + 1.0) * (y + x1 * x1 * y + x1 * y * y) + 2.0 * b2 * x1
}

/// `(x1, y) ↦ (x1, x2)` with `x2 = y(x1² + 1)/2 − x1²`.
pub fn jet_to_original(x: &[f64]) -> Vec<f64> {
    vec![x[0], 0.5 * x[1] * (x[0] * x[0] + 1.0) - x[0] * x[0]]
}

/// `(x1, x2) ↦ (x1, y)` with `y = 2(x1² + x2)/(x1² + 1)`.
pub fn jet_from_original(x: &[f64]) -> Vec<f64> {
    vec![x[0], 2.0 * (x[0] * x[0] + x[1]) / (x[0] * x[0] + 1.0)]
}

/// Jet engine compressor at trigger parameter `σ` and plant constant `β`.
///
/// The loop is written in `(x1, y)`. The measurement error enters through the
/// stabilizing term of the `y` channel, `ẏ = −(x1² + 1)(y + e2)`.
pub fn jet_engine(sigma: f64, beta: f64) -> Result<CaseStudy> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let closed_loop = Arc::new(PolyField::from_expressions(
        2,
        &["-0.5*(x1^2 + 1)*(x1 + x2)", "-(x1^2 + 1)*(x2 + e2)"],
    )?);
    let v = ScalarPoly::parse(2, JET_V)?;
    let certificate = StabilityCertificate::new(v.clone(), JET_P, JET_Q, 4, sigma, JET_OMEGA_LEVEL)?;
    // Virtual input v acting as ẏ = −(x1² + 1)·v with v = k(x) = y.
    let plant: PlantFn = Arc::new(|x: &[f64], u: &[f64]| {
        let g = x[0] * x[0] + 1.0;
        vec![-0.5 * g * (x[0] + x[1]), -g * u[0]]
    });
    let feedback: FeedbackFn = Arc::new(|x: &[f64]| vec![x[1]]);
    let model = PlantModel {
        name: "jet-engine".into(),
        closed_loop: closed_loop.clone(),
        lyapunov: v,
        input: Arc::new(move |x: &[f64]| vec![jet_throttle(x, beta)]),
        n_inputs: 1,
        // ∂ẏ/∂u for the throttle: ẋ2 = (x1 − u)/β².
        disturbance_direction: Arc::new(move |x: &[f64]| vec![0.0, -2.0 / (beta * beta * (x[0] * x[0] + 1.0))]),
        output_map: Some(Arc::new(jet_to_original)),
    };
    Ok(CaseStudy {
        id: "jet-engine",
        closed_loop,
        plant,
        feedback,
        certificate,
        operation_radius: JET_OPERATION_RADIUS,
        dilation: Some(DilationField::standard(2, 1.0)?),
        xi: Some(DegreeFunction::rational(2, "2*x1^2", "x1^2 + 1")?),
        homogenized: None,
        model,
    })
}

fn rigid_feedback(x: &[f64]) -> Vec<f64> {
    let (x1, x2, x3) = (x[0], x[1], x[2]);
    vec![-x1 * x2 - 2.0 * x2 * x3 - x1 - x3, 2.0 * x1 * x2 * x3 + 3.0 * x3 * x3 - x2]
}

/// Rigid body angular velocity control at trigger parameter `σ`.
pub fn rigid_body(sigma: f64) -> Result<CaseStudy> {
    let u1 = "-(x1 + e1)*(x2 + e2) - 2*(x2 + e2)*(x3 + e3) - (x1 + e1) - (x3 + e3)";
    let u2 = "2*(x1 + e1)*(x2 + e2)*(x3 + e3) + 3*(x3 + e3)^2 - (x2 + e2)";
    let closed_loop = Arc::new(PolyField::from_expressions(3, &[u1, u2, "x1*x2"])?);
    let v = ScalarPoly::parse(3, RIGID_V)?;
    let certificate = StabilityCertificate::new(v.clone(), RIGID_P, RIGID_Q, 4, sigma, RIGID_OMEGA_LEVEL)?;
    let plant: PlantFn = Arc::new(|x: &[f64], u: &[f64]| vec![u[0], u[1], x[0] * x[1]]);
    let feedback: FeedbackFn = Arc::new(rigid_feedback);
    let homogenized = homogenize(closed_loop.as_ref())?;
    let model = PlantModel {
        name: "rigid-body".into(),
        closed_loop: closed_loop.clone(),
        lyapunov: v,
        input: Arc::new(rigid_feedback),
        n_inputs: 2,
        disturbance_direction: Arc::new(|_x: &[f64]| vec![1.0, 0.0, 0.0]),
        output_map: None,
    };
    Ok(CaseStudy {
        id: "rigid-body",
        closed_loop,
        plant,
        feedback,
        certificate,
        operation_radius: RIGID_OPERATION_RADIUS,
        dilation: None,
        xi: None,
        homogenized: Some(homogenized),
        model,
    })
}

/// Look up a case study by id with its reference `σ`.
pub fn by_id(id: &str, sigma: Option<f64>) -> Result<CaseStudy> {
    match id {
        "jet-engine" => jet_engine(sigma.unwrap_or(JET_SIGMA), JET_BETA),
        "rigid-body" => rigid_body(sigma.unwrap_or(RIGID_SIGMA)),
        other => Err(Error::Config(format!("unknown system '{other}' (expected jet-engine or rigid-body)"))),
    }
}

/// Which lifted region the rigid body `τ̃*` is maximized over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftReading {
    /// `{(λx, λ) : V(x) ≤ level(λ), λ ≤ λ_max}`.
    LiteralScaled,
    /// `{(x, λ) : V(x) ≤ level(λ), λ ≤ λ_max}`.
    LiteralUnscaled,
    /// The unit-sphere cap `|(x̃, w)| = 1`, `w ≥ 1/sqrt(1 + R²)`, on which the time map is exact.
    SphereCap,
}

impl CaseStudy {
    pub fn dim(&self) -> usize {
        self.closed_loop.dim()
    }

    pub fn sigma(&self) -> f64 {
        self.certificate.sigma
    }

    pub fn c(&self) -> f64 {
        self.certificate.c
    }

    /// `Ω_x = {V ≤ ℓ}`.
    pub fn omega(&self) -> Result<SublevelSet> {
        SublevelSet::new(self.certificate.v.clone(), self.certificate.omega_level)
    }

    /// `V̇ = ∇V · f̂(x, e)`.
    pub fn lyapunov_derivative(&self, x: &[f64], e: &[f64]) -> f64 {
        let mut f = vec![0.0; self.dim()];
        self.closed_loop.eval_into(x, e, &mut f);
        dot(&self.certificate.v.gradient(x), &f)
    }

    /// Weighted Jacobian maxima and `τ*` over `Ω_x`; the jet engine uses its
    /// degree function, the rigid body the unweighted Jacobians.
    pub fn tau_star(&self, opts: &MaximizeOptions) -> Result<(NormMaximizationResult, TauStar)> {
        let region = self.omega()?;
        self.tau_star_over(&region, opts)
    }

    pub fn tau_star_over(
        &self,
        region: &dyn StateRegion,
        opts: &MaximizeOptions,
    ) -> Result<(NormMaximizationResult, TauStar)> {
        let n = self.dim();
        let (xi, r) = match (&self.xi, &self.dilation) {
            (Some(xi), Some(d)) => (xi.clone(), d.weights().to_vec()),
            _ => (DegreeFunction::Constant(0.0), vec![1.0; n]),
        };
        let res = maximize_norms(self.closed_loop.as_ref(), &xi, &r, region, self.c(), opts)?;
        let tau = tau_star(res.h_max, res.g_max, self.c())?;
        Ok((res, tau))
    }

    /// The lifted region of the given reading.
    pub fn lifted_region(&self, reading: LiftReading) -> Result<Box<dyn StateRegion>> {
        let n = self.dim();
        Ok(match reading {
            LiftReading::SphereCap => Box::new(SphereCap::covering(n, 1.0, self.operation_radius)?),
            LiftReading::LiteralScaled | LiftReading::LiteralUnscaled => Box::new(LiftedSublevel::new(
                self.certificate.v.clone(),
                RIGID_LIFT_A,
                RIGID_LIFT_B,
                1e-6,
                RIGID_LAMBDA_MAX,
                reading == LiftReading::LiteralScaled,
            )?),
        })
    }

    /// `τ̃*` of the homogenized loop over a lifted region.
    pub fn tau_tilde_star(
        &self,
        reading: LiftReading,
        opts: &MaximizeOptions,
    ) -> Result<(NormMaximizationResult, TauStar)> {
        let hs = self
            .homogenized
            .as_ref()
            .ok_or_else(|| Error::NotPolynomial(format!("{} has no homogenized form", self.id)))?;
        let region = self.lifted_region(reading)?;
        tau_tilde_star(hs, region.as_ref(), self.c(), opts)
    }

    /// The self-triggered law for this system given its lower bound.
    pub fn self_trigger_policy(&self, tau_bound: f64) -> Result<TriggerPolicy> {
        match (&self.dilation, &self.xi, &self.homogenized) {
            (Some(d), Some(xi), _) => TriggerPolicy::new(PolicyKind::SelfTrigHomog {
                tau_star: tau_bound,
                d_gamma: self.certificate.gamma_radius,
                dilation: d.clone(),
                xi: xi.clone(),
            }),
            (_, _, Some(hs)) => {
                TriggerPolicy::new(PolicyKind::SelfTrigPoly { tau_tilde_star: tau_bound, l: hs.l(), r_ref: 1.0 })
            }
            _ => Err(Error::InvalidArgument(format!("{} has no self-trigger law", self.id))),
        }
    }

    /// The deployed bound: `τ*` over `Ω_x` for the homogeneous law, `τ̃*` over
    /// the unit-sphere cap for the polynomial law.
    pub fn default_tau_bound(&self, opts: &MaximizeOptions) -> Result<f64> {
        if self.xi.is_some() {
            Ok(self.tau_star(opts)?.1.value)
        } else {
            Ok(self.tau_tilde_star(LiftReading::SphereCap, opts)?.1.value)
        }
    }

    /// Periodic baseline. For the homogeneous law this is the worst-case
    /// self-trigger time over the boundary initial conditions; otherwise `τ*`
    /// over the operation ball.
    pub fn default_period(&self, tau_bound: f64, opts: &MaximizeOptions) -> Result<f64> {
        if self.xi.is_some() {
            let policy = self.self_trigger_policy(tau_bound)?;
            let sys = crate::dynamics::ErrorExtendedSystem::new(self.model.closed_loop.clone());
            let io = crate::integrator::IntegratorOptions::default();
            let mut t = f64::INFINITY;
            for x in self.boundary_ics(JET_N_IC) {
                t = t.min(policy.next_time(&sys, &x, &io)?);
            }
            Ok(t)
        } else {
            let ball = Ball::new(self.dim(), self.operation_radius)?;
            Ok(self.tau_star_over(&ball, opts)?.1.value)
        }
    }

    /// Initial conditions spread over the operation-region boundary.
    pub fn boundary_ics(&self, count: usize) -> Vec<Vec<f64>> {
        crate::simloop::boundary_ics(self.dim(), self.operation_radius, count)
    }

    pub fn default_x0(&self) -> Vec<f64> {
        match self.id {
            "jet-engine" => JET_X0.to_vec(),
            _ => self.boundary_ics(1).remove(0),
        }
    }

    /// Closed form of the jet self-trigger law, `τ*(d²x1² + |x|²)/(|x|²(x1² + 1))`.
    pub fn jet_closed_form(&self, tau: f64, x: &[f64]) -> f64 {
        let d = self.certificate.gamma_radius;
        let n2 = x[0] * x[0] + x[1] * x[1];
        tau * (d * d * x[0] * x[0] + n2) / (n2 * (x[0] * x[0] + 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::PolyField;

    #[test]
    fn closed_loops_match_feedback() {
        for cs in [jet_engine(0.33, 1.0).unwrap(), rigid_body(0.01).unwrap()] {
            let n = cs.dim();
            let mut out = vec![0.0; n];
            for k in 0..200 {
                let x: Vec<f64> = crate::util::halton(k, n).iter().map(|u| 8.0 * u - 4.0).collect();
                let e: Vec<f64> = crate::util::halton(k + 500, n).iter().map(|u| u - 0.5).collect();
                let xe: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + b).collect();
                let expect = (cs.plant)(&x, &(cs.feedback)(&xe));
                cs.closed_loop.eval_into(&x, &e, &mut out);
                for (a, b) in out.iter().zip(&expect) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{}: {a} vs {b}", cs.id);
                }
            }
            cs.closed_loop.eval_into(&vec![0.0; n], &vec![0.0; n], &mut out);
            assert!(out.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn rigid_homogenized_form() {
        let cs = rigid_body(0.01).unwrap();
        let hs = cs.homogenized.as_ref().unwrap();
        assert_eq!(hs.l(), 3);
        assert!(hs.field().poly().monomials().all(|m| m.degree() == 3));
        let expect = PolyField::from_expressions(
            3,
            &[
                "-(x1 + e1)*(x2 + e2)*w - 2*(x2 + e2)*(x3 + e3)*w - (x1 + e1)*w^2 - (x3 + e3)*w^2",
                "2*(x1 + e1)*(x2 + e2)*(x3 + e3) + 3*(x3 + e3)^2*w - (x2 + e2)*w^2",
                "x1*x2*w",
            ],
        )
        .unwrap();
        assert_eq!(hs.field().poly(), &expect);
    }

    #[test]
    fn jet_coordinates_round_trip() {
        let x = [1.3, -0.7];
        let back = jet_from_original(&jet_to_original(&x));
        assert!((back[0] - x[0]).abs() < 1e-15 && (back[1] - x[1]).abs() < 1e-14);
    }

    #[test]
    fn unknown_id() {
        assert!(matches!(by_id("pendulum", None), Err(Error::Config(_))));
        assert!(by_id("jet-engine", Some(1.5)).is_err());
    }
}
