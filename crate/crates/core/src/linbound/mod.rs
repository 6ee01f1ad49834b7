//! Weighted Jacobians of a closed loop, their norm maxima over a region and the
//! inter-execution bound `τ*` of the resulting linear comparison model.

pub mod regions;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{ClosedLoop, FnField, StabilityCertificate};
use crate::error::{check_dim, Error, Result};
use crate::homogeneity::DegreeFunction;
use crate::integrator::{integrate_until_guard, GuardOutcome, IntegratorOptions};
use crate::util::{halton, norm, random_direction, sphere_directions};
pub use regions::{Ball, LiftedSublevel, SphereCap, StateRegion, SublevelSet};

/// `H` and `G` at one point `(x, e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedJacobianPair {
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub x: Vec<f64>,
    pub e: Vec<f64>,
}

/// `H_ij = r_i/(ξ(x)+r_i)·∂f̂_i/∂x_j`, `G_ij = r_i/(ξ(x)+r_i)·∂f̂_i/∂e_j`.
pub fn weighted_jacobians(
    field: &dyn ClosedLoop,
    xi: &DegreeFunction,
    r: &[f64],
    x: &[f64],
    e: &[f64],
) -> Result<WeightedJacobianPair> {
    let n = field.dim();
    check_dim(n, r.len())?;
    check_dim(n, x.len())?;
    check_dim(n, e.len())?;
    let xv = xi.eval(x);
    let (mut h, mut g) = field.jacobians(x, e);
    for i in 0..n {
        let den = xv + r[i];
        if den.abs() < 1e-14 * r[i].abs().max(1.0) {
            return Err(Error::WeightSingularity { index: i + 1 });
        }
        let w = r[i] / den;
        h.row_mut(i).scale_mut(w);
        g.row_mut(i).scale_mut(w);
    }
    Ok(WeightedJacobianPair { h, g, x: x.to_vec(), e: e.to_vec() })
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// Maxima of `|H|` and `|G|` and where they were found.
#[derive(Debug, Clone, PartialEq)]
pub struct NormMaximizationResult {
    pub x_a: Vec<f64>,
    pub e_a: Vec<f64>,
    pub h_max: f64,
    pub x_b: Vec<f64>,
    pub e_b: Vec<f64>,
    pub g_max: f64,
    pub region: String,
    /// No a posteriori sample beat the reported maxima by more than the slack.
    pub certified: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaximizeOptions {
    pub seeds: usize,
    /// Error directions per seed with `β = 1`.
    pub error_directions: usize,
    pub refine: usize,
    pub certify_samples: usize,
    /// Relative margin a certification sample may exceed the maximum by.
    pub certify_slack: f64,
    pub seed: u64,
}

impl Default for MaximizeOptions {
    fn default() -> Self {
        Self {
            seeds: 4096,
            error_directions: 12,
            refine: 16,
            certify_samples: 100_000,
            certify_slack: 1e-3,
            seed: 7,
        }
    }
}

/// The error set `{|e_k| ≤ c|x_k|}` on the ratio coordinates, zero elsewhere.
#[derive(Debug, Clone, Copy)]
struct ErrorCone {
    n: usize,
    k: usize,
    c: f64,
}

impl ErrorCone {
    fn point(&self, x: &[f64], beta: f64, dir: &[f64]) -> Vec<f64> {
        let mut e = vec![0.0; self.n];
        let m = beta * self.c * norm(&x[..self.k]);
        for j in 0..self.k {
            e[j] = m * dir[j];
        }
        e
    }

    fn project(&self, x: &[f64], e: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        out[..self.k].copy_from_slice(&e[..self.k]);
        let lim = self.c * norm(&x[..self.k]);
        let en = norm(&out[..self.k]);
        if en > lim {
            let s = if en > 0.0 { lim / en } else { 0.0 };
            for v in &mut out[..self.k] {
                *v *= s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Which {
    H,
    G,
}

struct Objective<'a> {
    field: &'a dyn ClosedLoop,
    xi: &'a DegreeFunction,
    r: &'a [f64],
}

impl Objective<'_> {
    fn both(&self, x: &[f64], e: &[f64]) -> (f64, f64) {
        match weighted_jacobians(self.field, self.xi, self.r, x, e) {
            Ok(p) => (finite_or_zero(spectral_norm(&p.h)), finite_or_zero(spectral_norm(&p.g))),
            Err(_) => (0.0, 0.0),
        }
    }

    fn one(&self, which: Which, x: &[f64], e: &[f64]) -> f64 {
        let (h, g) = self.both(x, e);
        match which {
            Which::H => h,
            Which::G => g,
        }
    }
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    x: Vec<f64>,
    e: Vec<f64>,
    value: f64,
}

/// Projected finite-difference gradient ascent on `(x, e)`.
fn ascend(
    obj: &Objective<'_>,
    which: Which,
    region: &dyn StateRegion,
    cone: &ErrorCone,
    start: Candidate,
    scale: f64,
) -> (Candidate, usize) {
    let n = start.x.len();
    let mut best = start;
    let mut step = 0.05 * scale;
    let mut evals = 0;
    for _ in 0..150 {
        let h = 1e-6 * scale;
        let mut grad = vec![0.0; 2 * n];
        for j in 0..2 * n {
            let (mut xp, mut ep) = (best.x.clone(), best.e.clone());
            let (mut xm, mut em) = (best.x.clone(), best.e.clone());
            if j < n {
                xp[j] += h;
                xm[j] -= h;
            } else {
                ep[j - n] += h;
                em[j - n] -= h;
            }
            grad[j] = (obj.one(which, &xp, &ep) - obj.one(which, &xm, &em)) / (2.0 * h);
            evals += 2;
        }
        let gn = norm(&grad);
        if gn == 0.0 || !gn.is_finite() {
            break;
        }
        let mut improved = false;
        while step > 1e-9 * scale {
            let x: Vec<f64> = best.x.iter().zip(&grad[..n]).map(|(a, g)| a + step * g / gn).collect();
            let x = region.project(&x);
            let e: Vec<f64> = best.e.iter().zip(&grad[n..]).map(|(a, g)| a + step * g / gn).collect();
            let e = cone.project(&x, &e);
            let v = obj.one(which, &x, &e);
            evals += 1;
            if v > best.value {
                best = Candidate { x, e, value: v };
                step *= 1.5;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (best, evals)
}

/// Multistart maximization of `|H|` and `|G|` over `region × {|e| ≤ c|x|}`.
pub fn maximize_norms(
    field: &dyn ClosedLoop,
    xi: &DegreeFunction,
    r: &[f64],
    region: &dyn StateRegion,
    c: f64,
    opts: &MaximizeOptions,
) -> Result<NormMaximizationResult> {
    let n = field.dim();
    check_dim(n, region.dim())?;
    if opts.seeds == 0 {
        return Err(Error::EmptyRegion);
    }
    let cone = ErrorCone { n, k: field.ratio_dim(), c };
    let obj = Objective { field, xi, r };
    let dirs = sphere_directions(cone.k, opts.error_directions.max(2));

    let seeds: Vec<Vec<f64>> = (0..opts.seeds as u64).map(|i| region.from_unit(&halton(i, region.seed_dim()))).collect();
    if seeds.iter().all(|x| norm(x) == 0.0) {
        return Err(Error::EmptyRegion);
    }
    let scale = seeds.iter().map(|x| norm(x)).fold(0.0, f64::max).max(1e-12);

    // (value_h, value_g, candidate point) for every seed and error direction.
    let probes: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = seeds
        .par_iter()
        .flat_map_iter(|x| {
            let mut out = Vec::with_capacity(dirs.len() + 1);
            let e0 = vec![0.0; n];
            let (h, g) = obj.both(x, &e0);
            out.push((h, g, x.clone(), e0));
            for d in &dirs {
                let e = cone.point(x, 1.0, d);
                let (h, g) = obj.both(x, &e);
                out.push((h, g, x.clone(), e));
            }
            out
        })
        .collect();
    let mut evaluations = probes.len();

    let refine = |which: Which| -> (Candidate, usize) {
        let key = |p: &(f64, f64, Vec<f64>, Vec<f64>)| if which == Which::H { p.0 } else { p.1 };
        let mut order: Vec<usize> = (0..probes.len()).collect();
        order.sort_by(|&a, &b| key(&probes[b]).total_cmp(&key(&probes[a])));
        let starts: Vec<Candidate> = order
            .iter()
            .take(opts.refine.max(1))
            .map(|&i| Candidate { x: probes[i].2.clone(), e: probes[i].3.clone(), value: key(&probes[i]) })
            .collect();
        let results: Vec<(Candidate, usize)> =
            starts.into_par_iter().map(|s| ascend(&obj, which, region, &cone, s, scale)).collect();
        let evals = results.iter().map(|r| r.1).sum();
        let best = results.into_iter().map(|r| r.0).max_by(|a, b| a.value.total_cmp(&b.value)).expect("nonempty");
        (best, evals)
    };
    let (mut best_h, eh) = refine(Which::H);
    let (mut best_g, eg) = refine(Which::G);
    evaluations += eh + eg;

    // A posteriori check with independent pseudo-random samples. A sample that
    // beats the search seeds another ascent and a fresh round of sampling.
    let mut certified = false;
    for round in 0..3u64 {
        let top = certify_round(&obj, region, &cone, opts.certify_samples, opts.seed.wrapping_add(round << 32));
        evaluations += opts.certify_samples;
        let beaten_h = top.h.value > best_h.value * (1.0 + opts.certify_slack);
        let beaten_g = top.g.value > best_g.value * (1.0 + opts.certify_slack);
        if top.h.value > best_h.value {
            let (c, ev) = ascend(&obj, Which::H, region, &cone, top.h, scale);
            evaluations += ev;
            best_h = c;
        }
        if top.g.value > best_g.value {
            let (c, ev) = ascend(&obj, Which::G, region, &cone, top.g, scale);
            evaluations += ev;
            best_g = c;
        }
        if !beaten_h && !beaten_g {
            certified = true;
            break;
        }
        log::debug!("round {round}: random sampling beat the search over {}", region.describe());
    }
    if !certified {
        log::warn!("norm maximization over {} was beaten by random sampling", region.describe());
    }
    Ok(NormMaximizationResult {
        x_a: best_h.x,
        e_a: best_h.e,
        h_max: best_h.value,
        x_b: best_g.x,
        e_b: best_g.e,
        g_max: best_g.value,
        region: region.describe(),
        certified,
        evaluations,
    })
}

fn certify_round(
    obj: &Objective<'_>,
    region: &dyn StateRegion,
    cone: &ErrorCone,
    samples: usize,
    seed: u64,
) -> Candidate2 {
    let chunk = 1000usize;
    let chunks = samples.div_ceil(chunk);
    let tops: Vec<Candidate2> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(ci as u64));
            let mut top = Candidate2::default();
            for _ in 0..chunk.min(samples - ci * chunk) {
                let u: Vec<f64> = (0..region.seed_dim()).map(|_| rng.random::<f64>()).collect();
                let x = region.from_unit(&u);
                let beta: f64 = rng.random::<f64>().powf(1.0 / cone.k as f64);
                let d = random_direction(cone.k, &mut rng);
                let e = cone.point(&x, beta, &d);
                let (h, g) = obj.both(&x, &e);
                if h > top.h.value {
                    top.h = Candidate { x: x.clone(), e: e.clone(), value: h };
                }
                if g > top.g.value {
                    top.g = Candidate { x, e, value: g };
                }
            }
            top
        })
        .collect();
    tops.into_iter().fold(Candidate2::default(), |mut acc, t| {
        if t.h.value > acc.h.value {
            acc.h = t.h;
        }
        if t.g.value > acc.g.value {
            acc.g = t.g;
        }
        acc
    })
}

#[derive(Debug, Clone)]
struct Candidate2 {
    h: Candidate,
    g: Candidate,
}

impl Default for Candidate2 {
    fn default() -> Self {
        let z = Candidate { x: Vec::new(), e: Vec::new(), value: f64::NEG_INFINITY };
        Self { h: z.clone(), g: z }
    }
}

/// [`maximize_norms`] over the certificate's sublevel set with its trigger ratio.
pub fn maximize_norms_on_certificate(
    field: &dyn ClosedLoop,
    xi: &DegreeFunction,
    r: &[f64],
    cert: &StabilityCertificate,
    opts: &MaximizeOptions,
) -> Result<NormMaximizationResult> {
    let region = SublevelSet::new(cert.v.clone(), cert.omega_level)?;
    maximize_norms(field, xi, r, &region, cert.c, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauMethod {
    ClosedForm,
    Riccati,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauStar {
    pub value: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub c: f64,
    pub method: TauMethod,
}

fn check_tau_args(hmax: f64, gmax: f64, c: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidThreshold(c));
    }
    if !(hmax > 0.0 && hmax.is_finite() && gmax >= 0.0 && gmax.is_finite()) {
        return Err(Error::InvalidArgument(format!("need Hmax > 0 and Gmax >= 0, got {hmax}, {gmax}")));
    }
    Ok(())
}

/// Time for `ẏ = (1 + y)(G·y + H)`, `y(0) = 0`, to reach `y = c`.
pub fn tau_star(hmax: f64, gmax: f64, c: f64) -> Result<TauStar> {
    check_tau_args(hmax, gmax, c)?;
    let value = if hmax == gmax {
        c / (hmax * (1.0 + c))
    } else {
        let d = hmax - gmax;
        let arg = (1.0 + c) * hmax / (hmax + gmax * c);
        // ln(arg)/d loses accuracy when H ≈ G; expand ln(1 + u) around u = 0 there.
        let u = arg - 1.0;
        if u.abs() < 1e-5 {
            (u - u * u / 2.0 + u * u * u / 3.0 - u.powi(4) / 4.0) / d
        } else {
            arg.ln() / d
        }
    };
    Ok(TauStar { value, alpha0: hmax, alpha1: hmax + gmax, alpha2: gmax, c, method: TauMethod::ClosedForm })
}

/// The same reachability time by integrating the Riccati equation.
pub fn tau_star_riccati(hmax: f64, gmax: f64, c: f64) -> Result<TauStar> {
    check_tau_args(hmax, gmax, c)?;
    let f = FnField::new(1, move |y, out| out[0] = (1.0 + y[0]) * (gmax * y[0] + hmax));
    let guard = move |y: &[f64]| y[0] - c;
    let horizon = 10.0 * c / hmax + 1.0;
    let opts = IntegratorOptions::with_tolerances(1e-12, 1e-15);
    let value = match integrate_until_guard(&f, &[0.0], &guard, horizon, &opts, 1e-14)? {
        GuardOutcome::Crossed(ev) => ev.t_star,
        GuardOutcome::NoCrossing { .. } => {
            return Err(Error::InvalidArgument("Riccati solution did not reach the threshold".into()))
        }
    };
    Ok(TauStar { value, alpha0: hmax, alpha1: hmax + gmax, alpha2: gmax, c, method: TauMethod::Riccati })
}

/// The arctangent form evaluated over `C` with `Θ = sqrt(α₁² − 4α₂α₀)`.
///
/// This discriminant makes the form equal the Riccati time; see
/// [`tau_star_arctan_printed`] for the sign-flipped variant.
pub fn tau_star_arctan(hmax: f64, gmax: f64, c: f64) -> Result<f64> {
    check_tau_args(hmax, gmax, c)?;
    let (a0, a1, a2) = (hmax, hmax + gmax, gmax);
    let theta = Complex64::new(a1 * a1 - 4.0 * a2 * a0, 0.0).sqrt();
    if theta.norm() < 1e-9 * a1 || a2 == 0.0 {
        return Ok(tau_star(hmax, gmax, c)?.value);
    }
    Ok(arctan_form(theta, a1, a2, c))
}

/// The arctangent form with `Θ = sqrt(4α₂α₀ − α₁²)`, as it is usually printed.
///
/// For real `H ≠ G` this is not the reachability time of the comparison system.
pub fn tau_star_arctan_printed(hmax: f64, gmax: f64, c: f64) -> Result<f64> {
    check_tau_args(hmax, gmax, c)?;
    let (a0, a1, a2) = (hmax, hmax + gmax, gmax);
    let theta = Complex64::new(4.0 * a2 * a0 - a1 * a1, 0.0).sqrt();
    if theta.norm() < 1e-9 * a1 || a2 == 0.0 {
        return Ok(tau_star(hmax, gmax, c)?.value);
    }
    Ok(arctan_form(theta, a1, a2, c))
}

fn arctan_form(theta: Complex64, a1: f64, a2: f64, c: f64) -> f64 {
    let i = Complex64::i();
    let k = -2.0 / (i * theta);
    let at = |v: f64| (Complex64::new(v, 0.0) / (-i * theta)).atan();
    let psi = k * at(a1);
    let tau = -psi + k * at(a1 + 2.0 * c * a2);
    tau.re
}

/// Surrogate scalar system `ẋ = −(H x + G e)`, `ė = H x + G e`, whose ratio
/// `e/x` follows the comparison equation exactly.
pub fn scalar_comparison_field(hmax: f64, gmax: f64) -> FnField {
    FnField::new(2, move |z, out| {
        let v = hmax * z[0] + gmax * z[1];
        out[0] = -v;
        out[1] = v;
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::PolyField;

    #[test]
    fn linear_weighted_jacobians_are_exact() {
        let f = PolyField::from_expressions(2, &["x2 + 0.5*e1", "-2*x1 - 3*x2 - e2"]).unwrap();
        let p = weighted_jacobians(&f, &DegreeFunction::Constant(0.0), &[1.0, 1.0], &[0.3, 0.2], &[0.0, 0.0]).unwrap();
        assert_eq!(p.h, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]));
        assert_eq!(p.g, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -1.0]));
        let sing = weighted_jacobians(&f, &DegreeFunction::Constant(-1.0), &[1.0, 1.0], &[0.3, 0.2], &[0.0, 0.0]);
        assert!(matches!(sing, Err(Error::WeightSingularity { index: 1 })));
    }

    #[test]
    fn linear_maximum_is_matrix_norm() {
        let f = PolyField::from_expressions(2, &["x2 + 0.5*e1", "-2*x1 - 3*x2 - e2"]).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let region = Ball::new(2, 1.0).unwrap();
        let opts = MaximizeOptions { seeds: 64, certify_samples: 1000, ..Default::default() };
        let res = maximize_norms(&f, &DegreeFunction::Constant(0.0), &[1.0, 1.0], &region, 0.2, &opts).unwrap();
        assert!((res.h_max - spectral_norm(&a)).abs() < 1e-12);
        assert!((res.g_max - 1.0).abs() < 1e-12);
        assert!(res.certified);
    }

    #[test]
    fn tau_star_forms_agree() {
        for &(h, g, c) in &[(17.3, 6.85, 0.2993), (1.0, 1.0, 0.33), (3.0, 5.0, 0.1), (2.0, 0.0, 0.5), (1.0, 1.0 + 1e-9, 0.2)] {
            let cf = tau_star(h, g, c).unwrap().value;
            let ri = tau_star_riccati(h, g, c).unwrap().value;
            let at = tau_star_arctan(h, g, c).unwrap();
            assert!((cf - ri).abs() <= 1e-8 * cf, "{h} {g} {c}: {cf} vs {ri}");
            assert!((cf - at).abs() <= 1e-8 * cf, "{h} {g} {c}: {cf} vs {at}");
        }
        assert_eq!(tau_star(1.0, 1.0, 0.33).unwrap().value, 0.33 / 1.33);
        assert!(matches!(tau_star(1.0, 1.0, 0.0), Err(Error::InvalidThreshold(_))));
    }

    #[test]
    fn printed_arctan_differs() {
        let cf = tau_star(17.3, 6.85, 0.2993).unwrap().value;
        let pr = tau_star_arctan_printed(17.3, 6.85, 0.2993).unwrap();
        assert!((cf - pr).abs() > 0.1 * cf);
    }
}
