//! Dilation fields, degree functions inferred from Lie brackets, the ray
//! integral `ρ(s)` and the space-time commutation check.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::dynamics::VectorField;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::integrator::{flow, IntegratorOptions};
use crate::poly::ScalarPoly;
use crate::util::{dot, norm};

/// `D = Σ r_i x_i ∂/∂x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DilationField {
    weights: Vec<f64>,
}

impl DilationField {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument(format!("dilation weights must be positive, got {weights:?}")));
        }
        Ok(Self { weights })
    }

    pub fn standard(n: usize, r: f64) -> Result<Self> {
        Self::new(vec![r; n])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_standard(&self) -> bool {
        self.weights.iter().all(|r| *r == self.weights[0])
    }

    /// Homogeneous ray `ψ_s(x) = (e^{r_1 s} x_1, …, e^{r_n s} x_n)`.
    pub fn flow(&self, x: &[f64], s: f64) -> Vec<f64> {
        x.iter().zip(&self.weights).map(|(xi, r)| (r * s).exp() * xi).collect()
    }
}

impl VectorField for DilationField {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) {
        for ((o, zi), r) in out.iter_mut().zip(z).zip(&self.weights) {
            *o = r * zi;
        }
    }

    fn jacobian(&self, _z: &[f64]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_diagonal(&DVector::from_column_slice(&self.weights))
    }
}

/// `ξ` in `[D, X] = ξ X`.
type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum DegreeFunction {
    Constant(f64),
    /// `num(x) / den(x)`.
    Rational { num: ScalarPoly, den: ScalarPoly },
    Callable(Arc<ScalarFn>),
}

impl DegreeFunction {
    pub fn rational(n: usize, num: &str, den: &str) -> Result<Self> {
        Ok(Self::Rational { num: ScalarPoly::parse(n, num)?, den: ScalarPoly::parse(n, den)? })
    }

    pub fn callable(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::Callable(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(z) => *z,
            Self::Rational { num, den } => num.eval(x) / den.eval(x),
            Self::Callable(f) => f(x),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Self::Constant(z) => Some(*z),
            _ => None,
        }
    }
}

impl fmt::Debug for DegreeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(z) => f.debug_tuple("Constant").field(z).finish(),
            Self::Rational { num, den } => f.debug_struct("Rational").field("num", num).field("den", den).finish(),
            Self::Callable(_) => f.write_str("Callable(..)"),
        }
    }
}

/// `[A, B](x) = J_B(x)·A(x) − J_A(x)·B(x)`; with `A = D` this is the `[D, X]` orientation.
pub fn lie_bracket(a: &dyn VectorField, b: &dyn VectorField, x: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    check_dim(n, b.dim())?;
    check_dim(n, x.len())?;
    let mut fa = vec![0.0; n];
    let mut fb = vec![0.0; n];
    a.eval(x, &mut fa);
    b.eval(x, &mut fb);
    let ja = a.jacobian(x);
    let jb = b.jacobian(x);
    let va = DVector::from_column_slice(&fa);
    let vb = DVector::from_column_slice(&fb);
    let out = jb * va - ja * vb;
    let out: Vec<f64> = out.iter().copied().collect();
    check_finite(&out, "Lie bracket")?;
    Ok(out)
}

/// Least-squares `ξ̂(x) = ⟨[D,X], X⟩ / ⟨X, X⟩`, the residual `|[D,X] − ξ̂ X|` and
/// the scale the residual is judged against.
pub fn pointwise_degree(d: &dyn VectorField, x_field: &dyn VectorField, x: &[f64]) -> Result<(f64, f64, f64)> {
    let br = lie_bracket(d, x_field, x)?;
    let mut fx = vec![0.0; x.len()];
    x_field.eval(x, &mut fx);
    let xx = dot(&fx, &fx);
    if xx == 0.0 {
        return Err(Error::SamplePointDegenerate(x.to_vec()));
    }
    let xi = dot(&br, &fx) / xx;
    let res: Vec<f64> = br.iter().zip(&fx).map(|(b, f)| b - xi * f).collect();
    // The |X| floor keeps degree-zero fields (bracket ≈ 0) from failing on round-off.
    Ok((xi, norm(&res), norm(&br) + 1e-2 * xx.sqrt()))
}

/// Infer `ξ` from brackets at `samples`; the result evaluates `ξ̂` pointwise.
///
/// Fails with `Inconsistent` when no scalar fits `[D,X] = ξ X` at some sample.
pub fn infer_degree_function(
    d: Arc<dyn VectorField>,
    x_field: Arc<dyn VectorField>,
    samples: &[Vec<f64>],
) -> Result<DegreeFunction> {
    for p in samples {
        let (_, res, scale) = pointwise_degree(d.as_ref(), x_field.as_ref(), p)?;
        if res > 1e-8 * scale {
            return Err(Error::Inconsistent { point: p.clone(), residual: res });
        }
    }
    Ok(DegreeFunction::callable(move |x| match pointwise_degree(d.as_ref(), x_field.as_ref(), x) {
        Ok((xi, _, _)) => xi,
        Err(_) => f64::NAN,
    }))
}

// 15-point Kronrod extension of the 7-point Gauss rule; nonnegative half of the
// symmetric nodes on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive Gauss–Kronrod quadrature to absolute tolerance `tol`.
pub fn integrate_gk(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gk15(f, a, b);
    let mut parts = vec![(a, b, v, e)];
    for _ in 0..5000 {
        let total_err: f64 = parts.iter().map(|p| p.3).sum();
        let total: f64 = parts.iter().map(|p| p.2).sum();
        if !total.is_finite() || !total_err.is_finite() {
            return Err(Error::QuadratureFailure(total_err));
        }
        if total_err <= tol {
            return Ok(total);
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (pa, pb, _, _) = parts.swap_remove(idx);
        let m = 0.5 * (pa + pb);
        let (v1, e1) = gk15(f, pa, m);
        let (v2, e2) = gk15(f, m, pb);
        parts.push((pa, m, v1, e1));
        parts.push((m, pb, v2, e2));
    }
    Err(Error::QuadratureFailure(parts.iter().map(|p| p.3).sum()))
}

pub const RHO_TOL: f64 = 1e-10;

/// `ρ(s) = ∫_0^s ξ(ψ_v(x)) dv`; `s` may be negative.
pub fn rho(xi: &DegreeFunction, dil: &DilationField, x: &[f64], s: f64) -> Result<f64> {
    check_dim(dil.dim(), x.len())?;
    if let Some(z) = xi.as_constant() {
        return Ok(z * s);
    }
    let f = |v: f64| xi.eval(&dil.flow(x, v));
    integrate_gk(&f, 0.0, s, RHO_TOL)
}

/// `|φ_t(ψ_s(x)) − ψ_s(φ_{e^{ρ(s)} t}(x))| / max(1, |φ_t(ψ_s(x))|)`.
pub fn verify_commutation(
    x_field: &dyn VectorField,
    dil: &DilationField,
    xi: &DegreeFunction,
    x: &[f64],
    s: f64,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<f64> {
    let lhs = flow(x_field, &dil.flow(x, s), t, opts)?;
    let r = rho(xi, dil, x, s)?;
    let rhs = dil.flow(&flow(x_field, x, r.exp() * t, opts)?, s);
    let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / norm(&lhs).max(1.0))
}
