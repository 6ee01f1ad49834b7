//! Dormand–Prince 5(4) integration with continuous output and guard detection.

use crate::dynamics::VectorField;
use crate::error::{check_dim, check_finite, Error, Result};


const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Continuous extension of order 4 (Hairer, Nørsett & Wanner).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Step-size control settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on `|h|`; unbounded when infinite.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-12, h_max: f64::INFINITY, max_steps: 2_000_000 }
    }
}

impl IntegratorOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must be positive (rtol = {}, atol = {})",
                self.rtol, self.atol
            )));
        }
        if !(self.h_max > 0.0) {
            return Err(Error::InvalidArgument("h_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Segment {
    t: f64,
    h: f64,
    r: [Vec<f64>; 5],
}

impl Segment {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let th = if self.h == 0.0 { 0.0 } else { (t - self.t) / self.h };
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.r;
        for i in 0..out.len() {
            out[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
        }
    }

    fn end(&self) -> f64 {
        self.t + self.h
    }
}

/// Piecewise quartic interpolant over the accepted steps of one integration.
#[derive(Debug, Clone)]
pub struct DenseTrajectory {
    dim: usize,
    t0: f64,
    t1: f64,
    z0: Vec<f64>,
    segments: Vec<Segment>,
}

impl DenseTrajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn steps(&self) -> usize {
        self.segments.len()
    }

    /// Start times of the accepted steps, then the final time.
    pub fn mesh(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.segments.iter().map(|s| s.t).collect();
        m.push(self.t1);
        m
    }

    pub fn final_state(&self) -> Vec<f64> {
        self.eval(self.t1).expect("final time is in range")
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = if self.t0 <= self.t1 { (self.t0, self.t1) } else { (self.t1, self.t0) };
        let slack = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::OutOfRange { t, t0: self.t0, t1: self.t1 });
        }
        if self.segments.is_empty() {
            out.copy_from_slice(&self.z0);
            return Ok(());
        }
        let forward = self.t1 >= self.t0;
        // First segment whose end lies at or beyond t in the direction of integration.
        let idx = self.segments.partition_point(|s| if forward { s.end() < t } else { s.end() > t });
        let seg = &self.segments[idx.min(self.segments.len() - 1)];
        seg.eval(t, out);
        Ok(())
    }
}

struct Stepper<'a> {
    f: &'a dyn VectorField,
    n: usize,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y1: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(f: &'a dyn VectorField) -> Self {
        let n = f.dim();
        Self {
            f,
            n,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y1: vec![0.0; n],
        }
    }

    fn eval_stage(&mut self, idx: usize) -> Result<()> {
        self.f.eval(&self.tmp, &mut self.k[idx]);
        check_finite(&self.k[idx], "derivative")
    }

    /// One trial step from `y` (with `k[0] = f(y)` already set); returns the scaled error.
    fn attempt(&mut self, y: &[f64], h: f64, opts: &IntegratorOptions) -> Result<f64> {
        let n = self.n;
        macro_rules! stage {
            ($idx:expr, $($a:expr => $j:expr),+) => {{
                for i in 0..n {
                    self.tmp[i] = y[i] + h * (0.0 $(+ $a * self.k[$j][i])+);
                }
                self.eval_stage($idx)?;
            }};
        }
        stage!(1, A21 => 0);
        stage!(2, A31 => 0, A32 => 1);
        stage!(3, A41 => 0, A42 => 1, A43 => 2);
        stage!(4, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
        stage!(5, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);
        for i in 0..n {
            self.y1[i] = y[i]
                + h * (A71 * self.k[0][i]
                    + A73 * self.k[2][i]
                    + A74 * self.k[3][i]
                    + A75 * self.k[4][i]
                    + A76 * self.k[5][i]);
        }
        self.tmp.copy_from_slice(&self.y1);
        self.eval_stage(6)?;
        let mut acc = 0.0;
        for i in 0..n {
            let err = h
                * (E1 * self.k[0][i]
                    + E3 * self.k[2][i]
                    + E4 * self.k[3][i]
                    + E5 * self.k[4][i]
                    + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(self.y1[i].abs());
            acc += (err / sc).powi(2);
        }
        let err = (acc / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::NumericOverflow("error estimate".into()));
        }
        Ok(err)
    }

    fn segment(&self, t: f64, y: &[f64], h: f64) -> Segment {
        let n = self.n;
        let mut r: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
        for i in 0..n {
            let ydiff = self.y1[i] - y[i];
            let bspl = h * self.k[0][i] - ydiff;
            r[0][i] = y[i];
            r[1][i] = ydiff;
            r[2][i] = bspl;
            r[3][i] = ydiff - h * self.k[6][i] - bspl;
            r[4][i] = h
                * (D1 * self.k[0][i]
                    + D3 * self.k[2][i]
                    + D4 * self.k[3][i]
                    + D5 * self.k[4][i]
                    + D6 * self.k[5][i]
                    + D7 * self.k[6][i]);
        }
        Segment { t, h, r }
    }
}

fn initial_step(f: &dyn VectorField, y: &[f64], f0: &[f64], dir: f64, span: f64, opts: &IntegratorOptions) -> Result<f64> {
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span).min(opts.h_max);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + dir * h0 * b).collect();
    let mut f1 = vec![0.0; n];
    f.eval(&y1, &mut f1);
    check_finite(&f1, "derivative")?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span).min(opts.h_max))
}

/// Control returned by the per-step observer.
enum Flow {
    Continue,
    Stop,
}

fn drive(
    f: &dyn VectorField,
    z0: &[f64],
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
    mut observe: impl FnMut(&Segment) -> Flow,
) -> Result<DenseTrajectory> {
    opts.validate()?;
    check_dim(f.dim(), z0.len())?;
    check_finite(z0, "initial state")?;
    if !(t0.is_finite() && t1.is_finite()) {
        return Err(Error::InvalidArgument("time span must be finite".into()));
    }
    let mut traj = DenseTrajectory { dim: z0.len(), t0, t1, z0: z0.to_vec(), segments: Vec::new() };
    if t1 == t0 {
        return Ok(traj);
    }
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut st = Stepper::new(f);
    let mut y = z0.to_vec();
    let mut t = t0;
    f.eval(&y, &mut st.k[0]);
    check_finite(&st.k[0], "derivative")?;
    let mut h = initial_step(f, &y, &st.k[0].clone(), dir, span, opts)?;
    let mut steps = 0usize;
    let mut rejected_last = false;
    loop {
        let remaining = (t1 - t).abs();
        if remaining <= 1e-14 * t1.abs().max(1.0) {
            break;
        }
        let h_min = 1e-14 * t.abs().max(1.0);
        if h < h_min {
            return Err(Error::StiffnessFailure { t, h });
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StiffnessFailure { t, h });
        }
        let last = h >= remaining;
        let hh = if last { remaining } else { h };
        let err = match st.attempt(&y, dir * hh, opts) {
            Ok(e) => e,
            Err(Error::NumericOverflow(_)) => {
                // Shrink first; only give up when the step has collapsed.
                h = hh * 0.25;
                if h < h_min {
                    return Err(Error::NumericOverflow(format!("finite escape near t = {t}")));
                }
                rejected_last = true;
                continue;
            }
            Err(e) => return Err(e),
        };
        if err <= 1.0 {
            let seg = st.segment(t, &y, dir * hh);
            t = if last { t1 } else { t + dir * hh };
            y.copy_from_slice(&st.y1);
            st.k[0] = st.k[6].clone();
            let flow = observe(&seg);
            traj.segments.push(seg);
            if let Flow::Stop = flow {
                traj.t1 = t;
                return Ok(traj);
            }
            let mut fac = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
            fac = fac.clamp(0.2, 5.0);
            if rejected_last {
                fac = fac.min(1.0);
            }
            h = (hh * fac).min(opts.h_max);
            rejected_last = false;
        } else {
            let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            h = hh * fac;
            rejected_last = true;
        }
    }
    traj.t1 = t1;
    Ok(traj)
}

/// Integrate `ż = F(z)` from `t0` to `t1` (either direction).
pub fn integrate(
    f: &dyn VectorField,
    z0: &[f64],
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
) -> Result<DenseTrajectory> {
    drive(f, z0, t0, t1, opts, |_| Flow::Continue)
}

/// Flow map `φ_t(z0)` (`t` of either sign).
pub fn flow(f: &dyn VectorField, z0: &[f64], t: f64, opts: &IntegratorOptions) -> Result<Vec<f64>> {
    Ok(integrate(f, z0, 0.0, t, opts)?.final_state())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardEvent {
    pub t_star: f64,
    pub z_star: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub enum GuardOutcome {
    Crossed(GuardEvent),
    NoCrossing { horizon: f64, z_end: Vec<f64> },
}

impl GuardOutcome {
    /// Crossing time, or the horizon when none occurred.
    pub fn time(&self) -> f64 {
        match self {
            GuardOutcome::Crossed(ev) => ev.t_star,
            GuardOutcome::NoCrossing { horizon, .. } => *horizon,
        }
    }
}

pub const DEFAULT_GUARD_TOL: f64 = 1e-10;

/// Integrate forward from `t = 0` until `guard` first becomes nonnegative.
///
/// The guard is sampled at interior points of every accepted step, so a crossing
/// that re-enters within one step is still caught when it spans a sample.
pub fn integrate_until_guard(
    f: &dyn VectorField,
    z0: &[f64],
    guard: &dyn Fn(&[f64]) -> f64,
    horizon: f64,
    opts: &IntegratorOptions,
    guard_tol: f64,
) -> Result<GuardOutcome> {
    check_finite(z0, "initial state")?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
    }
    let g0 = guard(z0);
    if !g0.is_finite() {
        return Err(Error::NumericOverflow("guard at initial state".into()));
    }
    if g0 >= 0.0 {
        return Ok(GuardOutcome::Crossed(GuardEvent { t_star: 0.0, z_star: z0.to_vec(), residual: g0 }));
    }
    let mut bracket: Option<(Segment, f64, f64)> = None;
    let mut buf = vec![0.0; z0.len()];
    let mut guard_err = None;
    let traj = drive(f, z0, 0.0, horizon, opts, |seg| {
        let mut prev = seg.t;
        for frac in [0.25, 0.5, 0.75, 1.0] {
            let tt = seg.t + frac * seg.h;
            seg.eval(tt, &mut buf);
            let g = guard(&buf);
            if !g.is_finite() {
                guard_err = Some(Error::NumericOverflow(format!("guard at t = {tt}")));
                return Flow::Stop;
            }
            if g >= 0.0 {
                bracket = Some((seg.clone(), prev, tt));
                return Flow::Stop;
            }
            prev = tt;
        }
        Flow::Continue
    })?;
    if let Some(e) = guard_err {
        return Err(e);
    }
    let Some((seg, mut lo, mut hi)) = bracket else {
        return Ok(GuardOutcome::NoCrossing { horizon, z_end: traj.final_state() });
    };
    let mut g_hi;
    seg.eval(hi, &mut buf);
    g_hi = guard(&buf);
    let mut z_hi = buf.clone();
    for _ in 0..400 {
        let width_ok = hi - lo <= 1e-12 * hi.abs().max(1.0);
        if width_ok && g_hi.abs() <= guard_tol {
            break;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        seg.eval(mid, &mut buf);
        let g = guard(&buf);
        if g >= 0.0 {
            hi = mid;
            g_hi = g;
            z_hi.copy_from_slice(&buf);
        } else {
            lo = mid;
        }
    }
    Ok(GuardOutcome::Crossed(GuardEvent { t_star: hi, z_star: z_hi, residual: g_hi }))
}
