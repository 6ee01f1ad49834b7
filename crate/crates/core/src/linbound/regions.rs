//! State regions over which the weighted Jacobian norms are maximized.

use crate::error::{Error, Result};
use crate::poly::ScalarPoly;
use crate::util::{cube_to_sphere, norm, scaled};

/// A bounded region that can be sampled from the unit cube and projected onto.
pub trait StateRegion: Send + Sync {
    fn dim(&self) -> usize;

    /// Dimension of the unit cube consumed by [`StateRegion::from_unit`].
    fn seed_dim(&self) -> usize;

    #[allow(clippy::wrong_self_convention)]
    fn from_unit(&self, u: &[f64]) -> Vec<f64>;

    fn contains(&self, x: &[f64]) -> bool;

    /// A nearby point of the region (identity on members).
    fn project(&self, x: &[f64]) -> Vec<f64>;

    fn describe(&self) -> String;
}

fn split_unit(u: &[f64], n: usize) -> (Vec<f64>, f64) {
    if n == 1 {
        (vec![u[0]], u[1])
    } else {
        (u[..n - 1].to_vec(), u[n - 1])
    }
}

fn radial_seed_dim(n: usize) -> usize {
    if n == 1 {
        2
    } else {
        n
    }
}

/// Ball `{|x| ≤ R}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub n: usize,
    pub radius: f64,
}

impl Ball {
    pub fn new(n: usize, radius: f64) -> Result<Self> {
        if n == 0 || !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::EmptyRegion);
        }
        Ok(Self { n, radius })
    }
}

impl StateRegion for Ball {
    fn dim(&self) -> usize {
        self.n
    }

    fn seed_dim(&self) -> usize {
        radial_seed_dim(self.n)
    }

    fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        let (d, r) = split_unit(u, self.n);
        scaled(&cube_to_sphere(&d, self.n), self.radius * r.powf(1.0 / self.n as f64))
    }

    fn contains(&self, x: &[f64]) -> bool {
        norm(x) <= self.radius * (1.0 + 1e-12)
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let r = norm(x);
        if r <= self.radius {
            x.to_vec()
        } else {
            scaled(x, self.radius / r)
        }
    }

    fn describe(&self) -> String {
        format!("ball |x| <= {}", self.radius)
    }
}

/// Star-shaped sublevel set `{V(x) ≤ ℓ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SublevelSet {
    pub v: ScalarPoly,
    pub level: f64,
    r_max: f64,
}

impl SublevelSet {
    pub fn new(v: ScalarPoly, level: f64) -> Result<Self> {
        if !(level > 0.0 && level.is_finite()) {
            return Err(Error::EmptyRegion);
        }
        // Bracket for the radial bisection along every ray.
        let mut r_max = 1.0;
        let dirs = crate::util::sphere_directions(v.n, 512);
        let mut grow = 0;
        while dirs.iter().any(|d| v.eval(&scaled(d, r_max)) <= level) {
            r_max *= 2.0;
            grow += 1;
            if grow > 40 {
                return Err(Error::InvalidArgument("sublevel set appears unbounded".into()));
            }
        }
        Ok(Self { v, level, r_max: 2.0 * r_max })
    }

    /// Distance from the origin to the boundary along the unit direction `u`.
    pub fn boundary_radius(&self, u: &[f64]) -> f64 {
        let (mut lo, mut hi) = (0.0, self.r_max);
        if self.v.eval(&scaled(u, hi)) <= self.level {
            return hi;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.v.eval(&scaled(u, mid)) <= self.level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

impl StateRegion for SublevelSet {
    fn dim(&self) -> usize {
        self.v.n
    }

    fn seed_dim(&self) -> usize {
        radial_seed_dim(self.v.n)
    }

    fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        let n = self.v.n;
        let (d, r) = split_unit(u, n);
        let dir = cube_to_sphere(&d, n);
        let rb = self.boundary_radius(&dir);
        scaled(&dir, rb * r.powf(1.0 / n as f64))
    }

    fn contains(&self, x: &[f64]) -> bool {
        self.v.eval(x) <= self.level * (1.0 + 1e-12)
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        if self.v.eval(x) <= self.level {
            return x.to_vec();
        }
        let r = norm(x);
        let dir = scaled(x, 1.0 / r);
        scaled(&dir, self.boundary_radius(&dir))
    }

    fn describe(&self) -> String {
        format!("sublevel set V <= {}", self.level)
    }
}

/// Points `(x̃, w)` of the sphere `|(x̃, w)| = R` with `w ∈ [w_min, w_max]`.
///
/// `w` is the last coordinate. This is the reference set on which the lifted
/// time bound must hold for the time map `λ = R / sqrt(1 + |x|²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereCap {
    pub n: usize,
    pub radius: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl SphereCap {
    pub fn new(n: usize, radius: f64, w_min: f64, w_max: f64) -> Result<Self> {
        if n == 0 || !(radius > 0.0) || !(w_min >= 0.0 && w_min <= w_max && w_max <= radius) {
            return Err(Error::EmptyRegion);
        }
        Ok(Self { n, radius, w_min, w_max })
    }

    /// The cap covering the states `|x| ≤ x_max` after the time-map lift.
    pub fn covering(n: usize, radius: f64, x_max: f64) -> Result<Self> {
        Self::new(n, radius, radius / (1.0 + x_max * x_max).sqrt(), radius)
    }
}

impl StateRegion for SphereCap {
    fn dim(&self) -> usize {
        self.n + 1
    }

    fn seed_dim(&self) -> usize {
        radial_seed_dim(self.n)
    }

    fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        let w = self.w_min + (self.w_max - self.w_min) * u[self.seed_dim() - 1];
        let rx = (self.radius * self.radius - w * w).max(0.0).sqrt();
        let dir = if self.n == 1 {
            vec![if u[0] < 0.5 { -1.0 } else { 1.0 }]
        } else {
            cube_to_sphere(&u[..self.n - 1], self.n)
        };
        let mut out = scaled(&dir, rx);
        out.push(w);
        out
    }

    fn contains(&self, x: &[f64]) -> bool {
        let w = x[self.n];
        (norm(x) - self.radius).abs() <= 1e-9 * self.radius
            && w >= self.w_min * (1.0 - 1e-12)
            && w <= self.w_max * (1.0 + 1e-12)
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let w = x[self.n].clamp(self.w_min, self.w_max);
        let rx = (self.radius * self.radius - w * w).max(0.0).sqrt();
        let xn = norm(&x[..self.n]);
        let mut out = if xn > 0.0 {
            scaled(&x[..self.n], rx / xn)
        } else {
            let mut e = vec![0.0; self.n];
            e[0] = rx;
            e
        };
        out.push(w);
        out
    }

    fn describe(&self) -> String {
        format!("sphere |(x, w)| = {} with {} <= w <= {}", self.radius, self.w_min, self.w_max)
    }
}

/// Union over `λ ∈ [λ_min, λ_max]` of points `(s·x, λ)` with `V(x) ≤ level(λ)`,
/// where `s = λ` when `scale_by_lambda` holds and `s = 1` otherwise.
///
/// The level is `a(1 − λ²) + b(1 − λ²)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSublevel {
    pub v: ScalarPoly,
    pub a: f64,
    pub b: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub scale_by_lambda: bool,
    r_max: f64,
}

impl LiftedSublevel {
    pub fn new(v: ScalarPoly, a: f64, b: f64, lambda_min: f64, lambda_max: f64, scale_by_lambda: bool) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_min <= lambda_max && lambda_max < 1.0) {
            return Err(Error::EmptyRegion);
        }
        let mut out = Self { v, a, b, lambda_min, lambda_max, scale_by_lambda, r_max: 0.0 };
        // One bracket serves every slice: the level is largest at the smallest λ.
        let top = (out.level(lambda_min)).max(out.level(lambda_max));
        out.r_max = SublevelSet::new(out.v.clone(), top)?.r_max;
        Ok(out)
    }

    pub fn level(&self, lambda: f64) -> f64 {
        let m = 1.0 - lambda * lambda;
        self.a * m + self.b * m * m
    }

    fn slice(&self, lambda: f64) -> Option<SublevelSet> {
        let level = self.level(lambda);
        (level > 0.0).then(|| SublevelSet { v: self.v.clone(), level, r_max: self.r_max })
    }

    fn scale(&self, lambda: f64) -> f64 {
        if self.scale_by_lambda {
            lambda
        } else {
            1.0
        }
    }
}

impl StateRegion for LiftedSublevel {
    fn dim(&self) -> usize {
        self.v.n + 1
    }

    fn seed_dim(&self) -> usize {
        radial_seed_dim(self.v.n) + 1
    }

    fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        let k = self.seed_dim();
        let lambda = self.lambda_min + (self.lambda_max - self.lambda_min) * u[k - 1];
        let x = match self.slice(lambda) {
            Some(s) => s.from_unit(&u[..k - 1]),
            None => vec![0.0; self.v.n],
        };
        let mut out = scaled(&x, self.scale(lambda));
        out.push(lambda);
        out
    }

    fn contains(&self, x: &[f64]) -> bool {
        let n = self.v.n;
        let lambda = x[n];
        if lambda < self.lambda_min * (1.0 - 1e-12) || lambda > self.lambda_max * (1.0 + 1e-12) || lambda <= 0.0 {
            return false;
        }
        let base = scaled(&x[..n], 1.0 / self.scale(lambda));
        self.v.eval(&base) <= self.level(lambda) * (1.0 + 1e-12)
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let n = self.v.n;
        let lambda = x[n].clamp(self.lambda_min.max(1e-12), self.lambda_max);
        let s = self.scale(lambda);
        let base = scaled(&x[..n], 1.0 / s);
        let base = match self.slice(lambda) {
            Some(sl) => sl.project(&base),
            None => vec![0.0; n],
        };
        let mut out = scaled(&base, s);
        out.push(lambda);
        out
    }

    fn describe(&self) -> String {
        format!(
            "lifted sublevel V <= {}(1-l^2) + {}(1-l^2)^2, {} <= l <= {}{}",
            self.a,
            self.b,
            self.lambda_min,
            self.lambda_max,
            if self.scale_by_lambda { ", states scaled by l" } else { "" }
        )
    }
}
