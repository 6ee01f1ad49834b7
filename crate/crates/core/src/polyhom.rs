//! Homogenization of polynomial closed loops with an auxiliary variable `w`,
//! the embedding `φ(x, e) = (x, 1, e, 0)` and the time map back to the
//! original system.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dynamics::{ClosedLoop, ErrorExtendedSystem};
use crate::error::{check_dim, Error, Result};
use crate::homogeneity::DegreeFunction;
use crate::integrator::{flow, IntegratorOptions};
use crate::linbound::{maximize_norms, tau_star, MaximizeOptions, NormMaximizationResult, StateRegion, TauStar};
use crate::poly::PolyField;
use crate::util::norm;

/// The homogenized closed loop over `(x, w)` with error `(e, e_w)`.
///
/// `ẇ = 0`, and only the `x` block enters the trigger ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizedField {
    poly: PolyField,
}

impl HomogenizedField {
    /// The `n` polynomial components, with `w` exponents filled in.
    pub fn poly(&self) -> &PolyField {
        &self.poly
    }
}

impl ClosedLoop for HomogenizedField {
    fn dim(&self) -> usize {
        self.poly.dim() + 1
    }

    fn ratio_dim(&self) -> usize {
        self.poly.dim()
    }

    fn eval(&self, x: &[f64], e: &[f64], out: &mut [f64]) {
        let n = self.poly.dim();
        self.poly.eval_with_w(&x[..n], x[n], &e[..n], &mut out[..n]);
        out[n] = 0.0;
    }

    fn jacobians(&self, x: &[f64], e: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.poly.dim();
        let (jx, je, jw) = self.poly.jacobians_with_w(&x[..n], x[n], &e[..n]);
        let mut hx = DMatrix::zeros(n + 1, n + 1);
        let mut he = DMatrix::zeros(n + 1, n + 1);
        hx.view_mut((0, 0), (n, n)).copy_from(&jx);
        for i in 0..n {
            hx[(i, n)] = jw[i];
        }
        he.view_mut((0, 0), (n, n)).copy_from(&je);
        (hx, he)
    }
}

/// A polynomial closed loop together with its homogenized counterpart.
#[derive(Clone)]
pub struct HomogenizedSystem {
    original: Arc<PolyField>,
    field: Arc<HomogenizedField>,
    l: u32,
}

impl fmt::Debug for HomogenizedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HomogenizedSystem").field("n", &self.n()).field("l", &self.l).finish_non_exhaustive()
    }
}

impl HomogenizedSystem {
    pub fn n(&self) -> usize {
        self.original.dim()
    }

    /// Highest monomial degree of the original field.
    pub fn l(&self) -> u32 {
        self.l
    }

    pub fn original(&self) -> &Arc<PolyField> {
        &self.original
    }

    pub fn field(&self) -> &Arc<HomogenizedField> {
        &self.field
    }

    /// `Z(x, e)` of dimension `2n`.
    pub fn original_extended(&self) -> ErrorExtendedSystem {
        ErrorExtendedSystem::new(self.original.clone())
    }

    /// `Y(x, w, e, e_w)` of dimension `2n + 2`.
    pub fn extended(&self) -> ErrorExtendedSystem {
        ErrorExtendedSystem::new(self.field.clone())
    }

    /// `φ(x, e) = (x, 1, e, 0)`.
    pub fn phi(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = Vec::with_capacity(2 * n + 2);
        y.extend_from_slice(&z[..n]);
        y.push(1.0);
        y.extend_from_slice(&z[n..2 * n]);
        y.push(0.0);
        y
    }

    /// `(λx, λ, λe, 0)`.
    pub fn lift(&self, x: &[f64], e: &[f64], lambda: f64) -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().map(|v| lambda * v).collect();
        y.push(lambda);
        y.extend(e.iter().map(|v| lambda * v));
        y.push(0.0);
        y
    }

    /// The homogenized field printed as `x1' = ...` lines plus `w' = 0`.
    pub fn describe(&self) -> String {
        let p = self.field.poly();
        let mut s = String::new();
        for i in 0..self.n() {
            s.push_str(&format!("x{}' = {}\n", i + 1, p.component_expr(i)));
        }
        s.push_str("w' = 0\n");
        s
    }
}

/// Multiply every monomial of degree `m` by `w^(l−m)`.
pub fn homogenize(field: &dyn ClosedLoop) -> Result<HomogenizedSystem> {
    let poly = field
        .as_poly()
        .ok_or_else(|| Error::NotPolynomial("closed loop has no polynomial representation".into()))?;
    let l = poly.max_degree();
    if l == 0 {
        return Err(Error::NotPolynomial("constant field cannot be homogenized".into()));
    }
    let components = poly
        .components()
        .iter()
        .map(|comp| {
            comp.iter()
                .map(|m| {
                    let mut m = m.clone();
                    m.w_exp += l - m.degree();
                    m
                })
                .collect()
        })
        .collect();
    let hom = PolyField::new(poly.dim(), components)?;
    Ok(HomogenizedSystem { original: Arc::new(poly.clone()), field: Arc::new(HomogenizedField { poly: hom }), l })
}

/// Residuals of the `φ`-relatedness check at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiReport {
    /// `|φ(z(t, z0)) − y(t, φ(z0))|`.
    pub residual: f64,
    /// `|η_Z(z(t)) − η_Y(y(t))|`.
    pub ratio_residual: f64,
    /// `|η_Z(z0) − η_Y(φ(z0))|`.
    pub ratio_residual_initial: f64,
}

pub fn check_phi_related(hs: &HomogenizedSystem, z0: &[f64], t: f64, opts: &IntegratorOptions) -> Result<PhiReport> {
    let n = hs.n();
    check_dim(2 * n, z0.len())?;
    let zsys = hs.original_extended();
    let ysys = hs.extended();
    let y0 = hs.phi(z0);
    let zt = flow(&zsys, z0, t, opts)?;
    let yt = flow(&ysys, &y0, t, opts)?;
    let pz = hs.phi(&zt);
    let diff: Vec<f64> = pz.iter().zip(&yt).map(|(a, b)| a - b).collect();
    let ratio = |a: f64, b: f64| {
        if a.is_nan() && b.is_nan() {
            0.0
        } else {
            (a - b).abs()
        }
    };
    Ok(PhiReport {
        residual: norm(&diff),
        ratio_residual: ratio(zsys.ratio(&zt), ysys.ratio(&yt)),
        ratio_residual_initial: ratio(zsys.ratio(z0), ysys.ratio(&y0)),
    })
}

/// `λ` with `|(λx, λ)| = R_ref`.
pub fn corollary_lambda(x: &[f64], r_ref: f64) -> f64 {
    r_ref / (1.0 + x.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// `τ↓ = λ^(l−1)·τ̃*` with `λ = R_ref/sqrt(1 + |x|²)`.
pub fn corollary_time_map(x: &[f64], tau_tilde_star: f64, l: u32, r_ref: f64) -> f64 {
    corollary_lambda(x, r_ref).powi(l as i32 - 1) * tau_tilde_star
}

/// Margin of a base set, nonnegative exactly on the set.
pub type MarginFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Membership in `Σ̃_λ = {(λx, λ, λe, 0) : (x, e) ∈ Σ}`.
///
/// `Σ` is given by a margin function that is nonnegative exactly on the set.
#[derive(Clone)]
pub struct LiftedInvariantSet {
    base: MarginFn,
    lambda: f64,
}

impl fmt::Debug for LiftedInvariantSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LiftedInvariantSet").field("lambda", &self.lambda).finish_non_exhaustive()
    }
}

pub fn lift_invariant_set(
    base: MarginFn,
    lambda: f64,
) -> Result<LiftedInvariantSet> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidLambda(lambda));
    }
    Ok(LiftedInvariantSet { base, lambda })
}

impl LiftedInvariantSet {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Base margin at the pre-image of `y = (x̃, w, ẽ, e_w)`; `w` and `e_w` are ignored.
    pub fn base_margin(&self, y: &[f64]) -> f64 {
        let n = (y.len() - 2) / 2;
        let x: Vec<f64> = y[..n].iter().map(|v| v / self.lambda).collect();
        let e: Vec<f64> = y[n + 1..2 * n + 1].iter().map(|v| v / self.lambda).collect();
        (self.base)(&x, &e)
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        let n = (y.len() - 2) / 2;
        y[n] == self.lambda && y[2 * n + 1] == 0.0 && self.base_margin(y) >= 0.0
    }
}

/// `τ̃*` for the homogenized loop over a region of `(x, w)` space, with
/// `ξ ≡ l − 1` and unit weights.
pub fn tau_tilde_star(
    hs: &HomogenizedSystem,
    region: &dyn StateRegion,
    c: f64,
    opts: &MaximizeOptions,
) -> Result<(NormMaximizationResult, TauStar)> {
    let xi = DegreeFunction::Constant(hs.l() as f64 - 1.0);
    let r = vec![1.0; hs.n() + 1];
    let res = maximize_norms(hs.field().as_ref(), &xi, &r, region, c, opts)?;
    let tau = tau_star(res.h_max, res.g_max, c)?;
    Ok((res, tau))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> PolyField {
        PolyField::from_expressions(2, &["x1*x2 + x2", "x1"]).unwrap()
    }

    #[test]
    fn homogenize_example() {
        let hs = homogenize(&example()).unwrap();
        assert_eq!(hs.l(), 2);
        let expect = PolyField::from_expressions(2, &["x1*x2 + x2*w", "x1*w"]).unwrap();
        assert_eq!(hs.field().poly(), &expect);
        assert!(hs.field().poly().monomials().all(|m| m.degree() == 2));
    }

    #[test]
    fn homogeneous_input_is_unchanged() {
        let f = PolyField::from_expressions(2, &["x1*x2 - x2^2", "x1^2 + e1*x2"]).unwrap();
        let hs = homogenize(&f).unwrap();
        assert!(hs.field().poly().monomials().all(|m| m.w_exp == 0));
        assert_eq!(hs.field().poly(), &f);
    }

    #[test]
    fn phi_related_example() {
        let hs = homogenize(&example()).unwrap();
        let opts = IntegratorOptions::default();
        let z0 = [0.3, 0.2, 0.0, 0.0];
        let r0 = check_phi_related(&hs, &z0, 0.0, &opts).unwrap();
        assert_eq!(r0.residual, 0.0);
        let r = check_phi_related(&hs, &z0, 0.5, &opts).unwrap();
        assert!(r.residual <= 1e-8, "{r:?}");
        assert!(r.ratio_residual <= 1e-8);
        assert_eq!(r.ratio_residual_initial, 0.0);
    }

    #[test]
    fn analytic_jacobians_match_differences() {
        let hs = homogenize(&PolyField::from_expressions(2, &["x1*x2 + x2 - e1", "x1 + e2^2"]).unwrap()).unwrap();
        struct Fd<'a>(&'a HomogenizedField);
        impl ClosedLoop for Fd<'_> {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn eval(&self, x: &[f64], e: &[f64], out: &mut [f64]) {
                self.0.eval(x, e, out)
            }
        }
        let (x, e) = ([0.4, -0.7, 0.9], [0.1, 0.2, 0.0]);
        let (ax, ae) = hs.field().jacobians(&x, &e);
        let (fx, fe) = Fd(hs.field()).jacobians(&x, &e);
        assert!((ax - fx).norm() < 1e-7);
        assert!((ae - fe).norm() < 1e-7);
    }

    #[test]
    fn time_map_and_lift() {
        assert_eq!(corollary_time_map(&[0.0, 0.0, 0.0], 5.1e-3, 3, 1.0), 5.1e-3);
        let x = [1.0, 2.0, 2.0];
        assert!((corollary_time_map(&x, 1.0, 3, 1.0) - 0.1).abs() < 1e-15);
        let base: MarginFn = Arc::new(|x: &[f64], _e: &[f64]| 1.0 - norm(x));
        assert!(matches!(lift_invariant_set(base.clone(), 0.0), Err(Error::InvalidLambda(_))));
        let set = lift_invariant_set(base, 0.5).unwrap();
        let hs = homogenize(&example()).unwrap();
        assert!(set.contains(&hs.lift(&[0.6, 0.0], &[0.1, 0.0], 0.5)));
        assert!(!set.contains(&hs.lift(&[1.2, 0.0], &[0.0, 0.0], 0.5)));
        assert!(!set.contains(&hs.lift(&[0.6, 0.0], &[0.0, 0.0], 0.4)));
    }

    #[test]
    fn constant_is_rejected() {
        struct NotPoly;
        impl ClosedLoop for NotPoly {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, x: &[f64], _e: &[f64], out: &mut [f64]) {
                out[0] = x[0].sin();
            }
        }
        assert!(matches!(homogenize(&NotPoly), Err(Error::NotPolynomial(_))));
    }
}
