//! Closed loops with measurement error, the error-extended system and the
//! stability certificate that fixes the trigger ratio.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::poly::{PolyField, ScalarPoly};
use crate::util::{dot, norm, scaled, sphere_directions};

/// Autonomous vector field `ż = F(z)`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, z: &[f64], out: &mut [f64]);

    /// Jacobian of `F`; central differences unless overridden.
    fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        let mut zp = z.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        let h = fd_step(z);
        for j in 0..n {
            zp[j] = z[j] + h;
            self.eval(&zp, &mut fp);
            zp[j] = z[j] - h;
            self.eval(&zp, &mut fm);
            zp[j] = z[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }
}

pub(crate) fn fd_step(z: &[f64]) -> f64 {
    1e-6 * norm(z).max(1.0)
}

type FieldFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Closure-backed vector field.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    f: Arc<FieldFn>,
}

impl FnField {
    pub fn new(dim: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self { dim, f: Arc::new(f) }
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) {
        (self.f)(z, out)
    }
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnField").field("dim", &self.dim).finish_non_exhaustive()
    }
}

/// Closed loop `ẋ = f̂(x, e)` where `e` is the measurement error.
pub trait ClosedLoop: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of leading coordinates that enter the trigger ratio `|e|/|x|`.
    fn ratio_dim(&self) -> usize {
        self.dim()
    }

    fn eval(&self, x: &[f64], e: &[f64], out: &mut [f64]);

    /// `(∂f̂/∂x, ∂f̂/∂e)`; central differences unless overridden.
    fn jacobians(&self, x: &[f64], e: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut jx = DMatrix::zeros(n, n);
        let mut je = DMatrix::zeros(n, n);
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        let hx = fd_step(x);
        let he = fd_step(e).max(hx);
        let mut xp = x.to_vec();
        let mut ep = e.to_vec();
        for j in 0..n {
            xp[j] = x[j] + hx;
            self.eval(&xp, e, &mut fp);
            xp[j] = x[j] - hx;
            self.eval(&xp, e, &mut fm);
            xp[j] = x[j];
            for i in 0..n {
                jx[(i, j)] = (fp[i] - fm[i]) / (2.0 * hx);
            }
            ep[j] = e[j] + he;
            self.eval(x, &ep, &mut fp);
            ep[j] = e[j] - he;
            self.eval(x, &ep, &mut fm);
            ep[j] = e[j];
            for i in 0..n {
                je[(i, j)] = (fp[i] - fm[i]) / (2.0 * he);
            }
        }
        (jx, je)
    }

    /// Polynomial representation, when the closed loop has one.
    fn as_poly(&self) -> Option<&PolyField> {
        None
    }
}

impl ClosedLoop for PolyField {
    fn dim(&self) -> usize {
        PolyField::dim(self)
    }

    fn eval(&self, x: &[f64], e: &[f64], out: &mut [f64]) {
        self.eval_into(x, e, out)
    }

    fn jacobians(&self, x: &[f64], e: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (jx, je, _) = self.jacobians_with_w(x, 1.0, e);
        (jx, je)
    }

    fn as_poly(&self) -> Option<&PolyField> {
        Some(self)
    }
}

type EvalFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(&[f64], &[f64]) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync;

/// Closed loop given by arbitrary closures, for non-polynomial right-hand sides.
#[derive(Clone)]
pub struct GeneralField {
    n: usize,
    eval: Arc<EvalFn>,
    jac: Option<Arc<JacFn>>,
}

impl GeneralField {
    pub fn new(n: usize, eval: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self { n, eval: Arc::new(eval), jac: None }
    }

    pub fn with_jacobians(
        mut self,
        jac: impl Fn(&[f64], &[f64]) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }
}

impl ClosedLoop for GeneralField {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64], e: &[f64], out: &mut [f64]) {
        (self.eval)(x, e, out)
    }

    fn jacobians(&self, x: &[f64], e: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.jac {
            Some(j) => j(x, e),
            None => {
                // Fall back to the finite-difference default.
                struct Fd<'a>(&'a GeneralField);
                impl ClosedLoop for Fd<'_> {
                    fn dim(&self) -> usize {
                        self.0.n
                    }
                    fn eval(&self, x: &[f64], e: &[f64], out: &mut [f64]) {
                        (self.0.eval)(x, e, out)
                    }
                }
                Fd(self).jacobians(x, e)
            }
        }
    }
}

impl fmt::Debug for GeneralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralField")
            .field("n", &self.n)
            .field("analytic_jacobians", &self.jac.is_some())
            .finish()
    }
}

/// Evaluate `f̂(x, e)`, rejecting non-finite output.
pub fn eval_closed_loop(field: &dyn ClosedLoop, x: &[f64], e: &[f64]) -> Result<Vec<f64>> {
    let n = field.dim();
    check_dim(n, x.len())?;
    check_dim(n, e.len())?;
    check_finite(x, "state")?;
    check_finite(e, "measurement error")?;
    let mut out = vec![0.0; n];
    field.eval(x, e, &mut out);
    check_finite(&out, "closed-loop vector field")?;
    Ok(out)
}

/// The `2n`-dimensional field `Z(x, e) = (f̂(x, e), −f̂(x, e))`.
#[derive(Clone)]
pub struct ErrorExtendedSystem {
    base: Arc<dyn ClosedLoop>,
}

impl ErrorExtendedSystem {
    pub fn new(base: Arc<dyn ClosedLoop>) -> Self {
        Self { base }
    }

    pub fn base(&self) -> &Arc<dyn ClosedLoop> {
        &self.base
    }

    pub fn n(&self) -> usize {
        self.base.dim()
    }

    /// `η_Z = |e|/|x|` over the ratio coordinates.
    pub fn ratio(&self, z: &[f64]) -> f64 {
        let n = self.n();
        let k = self.base.ratio_dim();
        norm(&z[n..n + k]) / norm(&z[..k])
    }

    /// Trigger guard `|e| − c|x|`, negative while no execution is due.
    pub fn guard(&self, z: &[f64], c: f64) -> f64 {
        let n = self.n();
        let k = self.base.ratio_dim();
        norm(&z[n..n + k]) - c * norm(&z[..k])
    }

    /// `(x, 0)` for a freshly sampled state.
    pub fn sampled(x: &[f64]) -> Vec<f64> {
        let mut z = x.to_vec();
        z.extend(std::iter::repeat_n(0.0, x.len()));
        z
    }
}

impl VectorField for ErrorExtendedSystem {
    fn dim(&self) -> usize {
        2 * self.base.dim()
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) {
        let n = self.n();
        let (x, e) = z.split_at(n);
        let (ox, oe) = out.split_at_mut(n);
        self.base.eval(x, e, ox);
        for (a, b) in oe.iter_mut().zip(ox.iter()) {
            *a = -*b;
        }
    }

    fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let (jx, je) = self.base.jacobians(&z[..n], &z[n..]);
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        j.view_mut((0, 0), (n, n)).copy_from(&jx);
        j.view_mut((0, n), (n, n)).copy_from(&je);
        j.view_mut((n, 0), (n, n)).copy_from(&(-&jx));
        j.view_mut((n, n), (n, n)).copy_from(&(-&je));
        j
    }
}

/// Evaluate the extended field at `z = (x, e)`.
pub fn eval_extended(sys: &ErrorExtendedSystem, z: &[f64]) -> Result<Vec<f64>> {
    check_dim(sys.dim(), z.len())?;
    check_finite(z, "extended state")?;
    let mut out = vec![0.0; z.len()];
    sys.eval(z, &mut out);
    check_finite(&out, "extended vector field")?;
    Ok(out)
}

/// The closed loop with the error frozen at zero, as a plain vector field.
#[derive(Clone)]
pub struct FrozenError {
    base: Arc<dyn ClosedLoop>,
}

impl FrozenError {
    pub fn new(base: Arc<dyn ClosedLoop>) -> Self {
        Self { base }
    }
}

impl VectorField for FrozenError {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) {
        let zero = vec![0.0; z.len()];
        self.base.eval(z, &zero, out)
    }

    fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let zero = vec![0.0; z.len()];
        self.base.jacobians(z, &zero).0
    }
}

/// ISS certificate in the normal form `V̇ ≤ −p|x|^k + q|x|^(k−2)|e|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    pub v: ScalarPoly,
    pub p: f64,
    pub q: f64,
    /// Exponent `k` above; 4 for both bundled case studies, 2 for the quadratic form.
    pub degree: u32,
    pub sigma: f64,
    pub c: f64,
    pub omega_level: f64,
    pub gamma_radius: f64,
}

impl StabilityCertificate {
    /// Build the certificate, deriving `c` and the radius of the largest ball in `{V ≤ ℓ}`.
    pub fn new(v: ScalarPoly, p: f64, q: f64, degree: u32, sigma: f64, omega_level: f64) -> Result<Self> {
        let c = trigger_ratio_raw(p, q, sigma)?;
        if degree < 2 {
            return Err(Error::InvalidCertificate(format!("degree {degree} < 2")));
        }
        if !(omega_level > 0.0 && omega_level.is_finite()) {
            return Err(Error::InvalidCertificate(format!("level {omega_level} must be positive")));
        }
        let gamma_radius = largest_inscribed_radius(&v, omega_level)?;
        Ok(Self { v, p, q, degree, sigma, c, omega_level, gamma_radius })
    }

    /// Replace the ball radius, checking that the ball still lies in the sublevel set.
    pub fn with_gamma_radius(mut self, d: f64) -> Result<Self> {
        if !(d > 0.0) {
            return Err(Error::InvalidCertificate(format!("gamma radius {d} must be positive")));
        }
        let vmax = max_on_sphere(&self.v, d);
        if vmax > self.omega_level * (1.0 + 1e-9) {
            return Err(Error::InvalidCertificate(format!(
                "ball of radius {d} leaves the sublevel set (max V = {vmax})"
            )));
        }
        self.gamma_radius = d;
        Ok(self)
    }

    /// Same certificate with a different `σ` (and hence `c`).
    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        self.c = trigger_ratio_raw(self.p, self.q, sigma)?;
        self.sigma = sigma;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.v.n
    }

    pub fn in_omega(&self, x: &[f64]) -> bool {
        self.v.eval(x) <= self.omega_level
    }
}

fn trigger_ratio_raw(p: f64, q: f64, sigma: f64) -> Result<f64> {
    if !(p > 0.0 && q > 0.0 && p.is_finite() && q.is_finite()) {
        return Err(Error::InvalidCertificate(format!("p = {p}, q = {q} must be positive")));
    }
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::InvalidCertificate(format!("sigma = {sigma} outside (0, 1)")));
    }
    Ok(sigma * (p / q).sqrt())
}

/// `c = σ·sqrt(p/q)`.
pub fn trigger_ratio(cert: &StabilityCertificate) -> Result<f64> {
    trigger_ratio_raw(cert.p, cert.q, cert.sigma)
}

pub fn eval_lyapunov(cert: &StabilityCertificate, x: &[f64]) -> f64 {
    cert.v.eval(x)
}

/// `−p|x|^k + q|x|^(k−2)|e|²`.
pub fn eval_vdot_bound(cert: &StabilityCertificate, x_norm: f64, e_norm: f64) -> f64 {
    let k = cert.degree as i32;
    -cert.p * x_norm.powi(k) + cert.q * x_norm.powi(k - 2) * e_norm * e_norm
}

const SPHERE_SAMPLES: usize = 2048;

/// `max_{|x| = r} V(x)` by dense direction sampling plus projected gradient ascent.
pub fn max_on_sphere(v: &ScalarPoly, r: f64) -> f64 {
    let n = v.n;
    let dirs = sphere_directions(n, SPHERE_SAMPLES);
    let mut vals: Vec<(f64, usize)> =
        dirs.iter().enumerate().map(|(k, d)| (v.eval(&scaled(d, r)), k)).collect();
    vals.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = vals[0].0;
    for &(_, k) in vals.iter().take(8) {
        let mut u = dirs[k].clone();
        let mut fu = v.eval(&scaled(&u, r));
        let mut step = 0.1;
        for _ in 0..200 {
            let g = v.gradient(&scaled(&u, r));
            // Tangential component of the gradient.
            let radial = dot(&g, &u);
            let t: Vec<f64> = g.iter().zip(&u).map(|(gi, ui)| gi - radial * ui).collect();
            let tn = norm(&t);
            if tn < 1e-14 {
                break;
            }
            let cand: Vec<f64> = u.iter().zip(&t).map(|(ui, ti)| ui + step * ti / tn).collect();
            let cn = norm(&cand);
            let cand = scaled(&cand, 1.0 / cn);
            let fc = v.eval(&scaled(&cand, r));
            if fc > fu {
                u = cand;
                fu = fc;
                step *= 1.5;
            } else {
                step *= 0.5;
                if step < 1e-12 {
                    break;
                }
            }
        }
        best = best.max(fu);
    }
    best
}

/// Largest `d` such that the ball of radius `d` lies in `{V ≤ ℓ}`.
fn largest_inscribed_radius(v: &ScalarPoly, level: f64) -> Result<f64> {
    let mut hi = 1.0;
    let mut grow = 0;
    while max_on_sphere(v, hi) <= level {
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::InvalidCertificate("sublevel set is unbounded".into()));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if max_on_sphere(v, mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo <= 0.0 {
        return Err(Error::InvalidCertificate("sublevel set contains no ball".into()));
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jet_v() -> ScalarPoly {
        ScalarPoly::parse(2, "1.46*x1^2 - 0.35*x1*x2 + 1.16*x2^2").unwrap()
    }

    #[test]
    fn trigger_ratio_examples() {
        let cert = StabilityCertificate::new(jet_v(), 0.74e8, 0.90e8, 4, 0.33, 27.04).unwrap();
        assert!((cert.c - 0.2993).abs() < 1e-4);
        let sym = StabilityCertificate::new(jet_v(), 2.0, 2.0, 4, 0.5, 1.0).unwrap();
        assert_eq!(sym.c, 0.5);
        assert!(StabilityCertificate::new(jet_v(), -1.0, 2.0, 4, 0.5, 1.0).is_err());
        assert!(StabilityCertificate::new(jet_v(), 1.0, 2.0, 4, 1.5, 1.0).is_err());
    }

    #[test]
    fn gamma_radius_matches_min_eigenvalue() {
        // For a quadratic form the inscribed radius is sqrt(level / lambda_min).
        let cert = StabilityCertificate::new(jet_v(), 1.0, 1.0, 4, 0.3, 27.04).unwrap();
        let (a, b, c): (f64, f64, f64) = (1.46, -0.175, 1.16);
        let lmin = 0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let expected = (27.04 / ((a + c) - lmin)).sqrt();
        assert!((cert.gamma_radius - expected).abs() < 1e-6, "{} vs {expected}", cert.gamma_radius);
        assert!(cert.clone().with_gamma_radius(5.4).is_err());
        assert!(cert.with_gamma_radius(4.0).is_ok());
    }

    #[test]
    fn vdot_bound_at_threshold() {
        let cert = StabilityCertificate::new(jet_v(), 0.74e8, 0.90e8, 4, 0.33, 27.04).unwrap();
        let b = eval_vdot_bound(&cert, 1.0, cert.c);
        let expected = (0.33f64 * 0.33 - 1.0) * 0.74e8;
        assert!((b - expected).abs() < 1e-6 * expected.abs());
        assert!((eval_lyapunov(&cert, &[1.0, 0.0]) - 1.46).abs() < 1e-15);
        assert_eq!(eval_lyapunov(&cert, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn extended_system_is_antisymmetric() {
        let f = PolyField::from_expressions(2, &["-x1 + x2*e1^2", "x1*x2 - e2"]).unwrap();
        let sys = ErrorExtendedSystem::new(Arc::new(f));
        let z = [0.3, -1.2, 0.7, 0.1];
        let out = eval_extended(&sys, &z).unwrap();
        assert_eq!(out[2], -out[0]);
        assert_eq!(out[3], -out[1]);
        let fd = {
            struct Plain<'a>(&'a ErrorExtendedSystem);
            impl VectorField for Plain<'_> {
                fn dim(&self) -> usize {
                    4
                }
                fn eval(&self, z: &[f64], out: &mut [f64]) {
                    self.0.eval(z, out)
                }
            }
            Plain(&sys).jacobian(&z)
        };
        assert!((sys.jacobian(&z) - fd).amax() < 1e-7);
    }

    #[test]
    fn general_field_finite_difference_jacobian() {
        let g = GeneralField::new(1, |x, e, out| out[0] = (x[0] + e[0]).sin());
        let (jx, je) = g.jacobians(&[0.3], &[0.1]);
        assert!((jx[(0, 0)] - 0.4f64.cos()).abs() < 1e-8);
        assert!((je[(0, 0)] - 0.4f64.cos()).abs() < 1e-8);
        let bad = GeneralField::new(1, |_, _, out| out[0] = f64::NAN);
        assert!(matches!(eval_closed_loop(&bad, &[1.0], &[0.0]), Err(Error::NumericOverflow(_))));
    }
}
