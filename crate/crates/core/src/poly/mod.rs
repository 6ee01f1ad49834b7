//! Monomial representation of polynomial closed loops `f̂(x, e)` and of scalar
//! polynomials such as Lyapunov functions.

pub mod parse;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
pub use parse::{parse_poly_expr, SparsePoly, VarSpace};

/// `coeff · x^x_exps · e^e_exps · w^w_exp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub x_exps: Vec<u32>,
    pub e_exps: Vec<u32>,
    #[serde(default)]
    pub w_exp: u32,
}

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.x_exps.iter().sum::<u32>() + self.e_exps.iter().sum::<u32>() + self.w_exp
    }

    fn eval(&self, x: &[f64], w: f64, e: &[f64]) -> f64 {
        let mut v = self.coeff;
        for (xi, &k) in x.iter().zip(&self.x_exps) {
            if k > 0 {
                v *= xi.powi(k as i32);
            }
        }
        for (ei, &k) in e.iter().zip(&self.e_exps) {
            if k > 0 {
                v *= ei.powi(k as i32);
            }
        }
        if self.w_exp > 0 {
            v *= w.powi(self.w_exp as i32);
        }
        v
    }

    /// Partial derivative w.r.t. slot `var` in the layout `[x.., e.., w]`.
    fn eval_partial(&self, x: &[f64], w: f64, e: &[f64], var: usize) -> f64 {
        let n = x.len();
        let k = if var < n {
            self.x_exps[var]
        } else if var < 2 * n {
            self.e_exps[var - n]
        } else {
            self.w_exp
        };
        if k == 0 {
            return 0.0;
        }
        let mut m = self.clone();
        m.coeff *= k as f64;
        if var < n {
            m.x_exps[var] -= 1;
        } else if var < 2 * n {
            m.e_exps[var - n] -= 1;
        } else {
            m.w_exp -= 1;
        }
        m.eval(x, w, e)
    }
}

/// Closed-loop polynomial vector field, one monomial list per state component.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyField {
    n: usize,
    components: Vec<Vec<Monomial>>,
    l: u32,
}

impl PolyField {
    pub fn new(n: usize, components: Vec<Vec<Monomial>>) -> Result<Self> {
        check_dim(n, components.len())?;
        if n == 0 {
            return Err(Error::InvalidArgument("polynomial field needs n >= 1".into()));
        }
        for m in components.iter().flatten() {
            if m.x_exps.len() != n || m.e_exps.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "monomial exponent vectors must have length {n}"
                )));
            }
            if !m.coeff.is_finite() {
                return Err(Error::NotPolynomial("non-finite coefficient".into()));
            }
        }
        let l = components.iter().flatten().map(Monomial::degree).max().unwrap_or(0);
        Ok(Self { n, components, l })
    }

    /// Build from one expression per component, in the variables `x1..xn, e1..en, w`.
    pub fn from_expressions<S: AsRef<str>>(n: usize, exprs: &[S]) -> Result<Self> {
        check_dim(n, exprs.len())?;
        let vars = VarSpace::closed_loop(n);
        let components = exprs
            .iter()
            .map(|s| parse_poly_expr(s.as_ref(), vars).map(|p| monomials_from_sparse(&p, n)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, components)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn components(&self) -> &[Vec<Monomial>] {
        &self.components
    }

    /// Highest total monomial degree `l`.
    pub fn max_degree(&self) -> u32 {
        self.l
    }

    pub fn monomials(&self) -> impl Iterator<Item = &Monomial> {
        self.components.iter().flatten()
    }

    pub fn eval_with_w(&self, x: &[f64], w: f64, e: &[f64], out: &mut [f64]) {
        for (o, comp) in out.iter_mut().zip(&self.components) {
            *o = comp.iter().map(|m| m.eval(x, w, e)).sum();
        }
    }

    /// Evaluate `f̂(x, e)` (`w = 1`).
    pub fn eval_into(&self, x: &[f64], e: &[f64], out: &mut [f64]) {
        self.eval_with_w(x, 1.0, e, out)
    }

    /// Jacobians `(∂f/∂x, ∂f/∂e, ∂f/∂w)` at `(x, w, e)`.
    pub fn jacobians_with_w(
        &self,
        x: &[f64],
        w: f64,
        e: &[f64],
    ) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
        let n = self.n;
        let mut jx = DMatrix::zeros(n, n);
        let mut je = DMatrix::zeros(n, n);
        let mut jw = vec![0.0; n];
        for (i, comp) in self.components.iter().enumerate() {
            for m in comp {
                for j in 0..n {
                    if m.x_exps[j] > 0 {
                        jx[(i, j)] += m.eval_partial(x, w, e, j);
                    }
                    if m.e_exps[j] > 0 {
                        je[(i, j)] += m.eval_partial(x, w, e, n + j);
                    }
                }
                if m.w_exp > 0 {
                    jw[i] += m.eval_partial(x, w, e, 2 * n);
                }
            }
        }
        (jx, je, jw)
    }
}

impl std::fmt::Display for Monomial {
    /// Parseable form, e.g. `-2*x1^2*e2*w`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.coeff)?;
        let vars = self
            .x_exps
            .iter()
            .enumerate()
            .map(|(i, &k)| (format!("x{}", i + 1), k))
            .chain(self.e_exps.iter().enumerate().map(|(i, &k)| (format!("e{}", i + 1), k)))
            .chain(std::iter::once(("w".to_string(), self.w_exp)));
        for (name, k) in vars {
            match k {
                0 => {}
                1 => write!(f, "*{name}")?,
                _ => write!(f, "*{name}^{k}")?,
            }
        }
        Ok(())
    }
}

impl PolyField {
    /// Component `i` as an expression accepted by [`PolyField::from_expressions`].
    pub fn component_expr(&self, i: usize) -> String {
        let comp = &self.components[i];
        if comp.is_empty() {
            return "0".into();
        }
        let mut s = String::new();
        for (j, m) in comp.iter().enumerate() {
            let t = m.to_string();
            if j == 0 {
                s.push_str(&t);
            } else if let Some(rest) = t.strip_prefix('-') {
                s.push_str(" - ");
                s.push_str(rest);
            } else {
                s.push_str(" + ");
                s.push_str(&t);
            }
        }
        s
    }
}

pub(crate) fn monomials_from_sparse(p: &SparsePoly, n: usize) -> Vec<Monomial> {
    p.terms
        .iter()
        .map(|(k, &coeff)| Monomial {
            coeff,
            x_exps: k[..n].to_vec(),
            e_exps: k[n..2 * n].to_vec(),
            w_exp: k[2 * n],
        })
        .collect()
}

/// Scalar polynomial in the state variables only (Lyapunov functions, degree numerators).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarPoly {
    pub n: usize,
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl ScalarPoly {
    pub fn parse(n: usize, expr: &str) -> Result<Self> {
        let p = parse_poly_expr(expr, VarSpace::state(n))?;
        let terms = p.terms.iter().map(|(k, &c)| (c, k[..n].to_vec())).collect();
        Ok(Self { n, terms })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, k)| {
                k.iter()
                    .zip(x)
                    .filter(|(&p, _)| p > 0)
                    .fold(*c, |acc, (&p, xi)| acc * xi.powi(p as i32))
            })
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        for (c, k) in &self.terms {
            for j in 0..self.n {
                if k[j] == 0 {
                    continue;
                }
                let mut v = c * k[j] as f64;
                for (i, (&p, xi)) in k.iter().zip(x).enumerate() {
                    let p = if i == j { p - 1 } else { p };
                    if p > 0 {
                        v *= xi.powi(p as i32);
                    }
                }
                g[j] += v;
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_expr_round_trips() {
        let f = PolyField::from_expressions(2, &["-0.5*x1^2*e2 + 3*x2*w - 1e-3", "x1*w"]).unwrap();
        let exprs: Vec<String> = (0..2).map(|i| f.component_expr(i)).collect();
        let g = PolyField::from_expressions(2, &exprs).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn degree_and_eval_with_w() {
        // x1' = x1 x2 + x2 w, x2' = x1 w
        let f = PolyField::from_expressions(2, &["x1*x2 + x2*w", "x1*w"]).unwrap();
        assert_eq!(f.max_degree(), 2);
        let mut out = [0.0; 2];
        f.eval_with_w(&[2.0, 3.0], 0.5, &[0.0, 0.0], &mut out);
        assert_eq!(out, [7.5, 1.0]);
    }

    #[test]
    fn analytic_jacobian_matches_finite_difference() {
        let f = PolyField::from_expressions(
            2,
            &["-(x1+e1)^3*x2 + 2*x2*w^2", "x1*e2 - e1^2*w"],
        )
        .unwrap();
        let x = [0.7, -1.3];
        let e = [0.2, 0.4];
        let w = 0.9;
        let (jx, je, jw) = f.jacobians_with_w(&x, w, &e);
        let h = 1e-6;
        let mut fp = [0.0; 2];
        let mut fm = [0.0; 2];
        for j in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[j] += h;
            xm[j] -= h;
            f.eval_with_w(&xp, w, &e, &mut fp);
            f.eval_with_w(&xm, w, &e, &mut fm);
            for i in 0..2 {
                assert!((jx[(i, j)] - (fp[i] - fm[i]) / (2.0 * h)).abs() < 1e-6);
            }
            let (mut ep, mut em) = (e, e);
            ep[j] += h;
            em[j] -= h;
            f.eval_with_w(&x, w, &ep, &mut fp);
            f.eval_with_w(&x, w, &em, &mut fm);
            for i in 0..2 {
                assert!((je[(i, j)] - (fp[i] - fm[i]) / (2.0 * h)).abs() < 1e-6);
            }
        }
        f.eval_with_w(&x, w + h, &e, &mut fp);
        f.eval_with_w(&x, w - h, &e, &mut fm);
        for i in 0..2 {
            assert!((jw[i] - (fp[i] - fm[i]) / (2.0 * h)).abs() < 1e-6);
        }
    }

    #[test]
    fn scalar_poly_gradient() {
        let v = ScalarPoly::parse(2, "1.46*x1^2 - 0.35*x1*x2 + 1.16*x2^2").unwrap();
        assert!((v.eval(&[1.0, 0.0]) - 1.46).abs() < 1e-15);
        let g = v.gradient(&[1.0, 2.0]);
        assert!((g[0] - (2.92 - 0.70)).abs() < 1e-12);
        assert!((g[1] - (-0.35 + 4.64)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_exponent_lengths() {
        let m = Monomial { coeff: 1.0, x_exps: vec![1], e_exps: vec![0, 0], w_exp: 0 };
        assert!(PolyField::new(2, vec![vec![m], vec![]]).is_err());
    }
}
