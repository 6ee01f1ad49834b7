//! Sample-and-hold simulation of a closed loop under a trigger policy, with
//! measurement noise and an actuator disturbance pulse.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ClosedLoop, ErrorExtendedSystem, FnField};
use crate::error::{Error, Result};
use crate::integrator::{integrate, integrate_until_guard, GuardOutcome, IntegratorOptions, DEFAULT_GUARD_TOL};
use crate::poly::ScalarPoly;
use crate::triggers::{PolicyKind, TriggerPolicy};
use crate::util::{norm, scaled, sphere_directions};

/// Simulation stops once `|x|` falls below this.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;

type StateMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Everything the loop needs to know about one plant.
#[derive(Clone)]
pub struct PlantModel {
    pub name: String,
    pub closed_loop: Arc<dyn ClosedLoop>,
    pub lyapunov: ScalarPoly,
    /// `u = k(x̂)` from the held measurement, for traces only.
    pub input: StateMap,
    pub n_inputs: usize,
    /// Effect on `ẋ` of a unit actuator disturbance at state `x`.
    pub disturbance_direction: StateMap,
    /// Map from simulation coordinates to the reported ones.
    pub output_map: Option<StateMap>,
}

impl fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantModel").field("name", &self.name).field("n", &self.closed_loop.dim()).finish_non_exhaustive()
    }
}

impl PlantModel {
    pub fn dim(&self) -> usize {
        self.closed_loop.dim()
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        match &self.output_map {
            Some(m) => m(x),
            None => x.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Noise power as a fraction of the running signal power.
    pub fraction: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { enabled: false, fraction: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    pub enabled: bool,
    pub onset: f64,
    pub duration: f64,
    pub amplitude: f64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self { enabled: false, onset: 0.7, duration: 0.1, amplitude: 5.0 }
    }
}

impl DisturbanceConfig {
    fn value(&self, t: f64) -> f64 {
        if self.enabled && t >= self.onset && t < self.onset + self.duration {
            self.amplitude
        } else {
            0.0
        }
    }

    fn edges(&self) -> [f64; 2] {
        [self.onset, self.onset + self.duration]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub noise: NoiseConfig,
    pub disturbance: DisturbanceConfig,
    pub seed: u64,
    /// Spacing of the decimated state trace; `None` keeps only execution instants.
    pub output_dt: Option<f64>,
    pub integrator: IntegratorOptions,
}

impl SimConfig {
    pub fn new(x0: Vec<f64>, t_end: f64) -> Self {
        Self {
            x0,
            t_end,
            noise: NoiseConfig::default(),
            disturbance: DisturbanceConfig::default(),
            seed: 1,
            output_dt: Some(1e-3),
            integrator: IntegratorOptions::with_tolerances(1e-9, 1e-12),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(0.0..1.0).contains(&self.noise.fraction) {
            return Err(Error::Config(format!("noise fraction must lie in [0, 1), got {}", self.noise.fraction)));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("x0 must be finite".into()));
        }
        if let Some(dt) = self.output_dt {
            if !(dt > 0.0) {
                return Err(Error::Config(format!("output_dt must be positive, got {dt}")));
            }
        }
        let d = &self.disturbance;
        if d.enabled && !(d.duration >= 0.0 && d.onset.is_finite() && d.amplitude.is_finite()) {
            return Err(Error::Config("disturbance needs finite onset/amplitude and duration >= 0".into()));
        }
        Ok(())
    }
}

/// One row of the exported trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    /// State in reported coordinates.
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: f64,
    pub exec: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub sample_times: Vec<f64>,
    /// Measured states, noise included.
    pub sampled_states: Vec<Vec<f64>>,
    /// True states at the execution instants.
    pub true_states: Vec<Vec<f64>>,
    /// `V` at the execution instants.
    pub sampled_v: Vec<f64>,
    /// `t_{i+1} − t_i`.
    pub taus: Vec<f64>,
    pub rows: Vec<TraceRow>,
    pub events: Vec<String>,
    pub final_state: Vec<f64>,
    pub final_time: f64,
    pub diverged: Option<String>,
    /// Largest `|e| − c|x|` seen on the dense trace under an event-oracle policy.
    pub max_guard: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub executions: usize,
    pub tau_min: f64,
    pub tau_mean: f64,
    pub tau_max: f64,
    pub final_norm: f64,
    pub v_ratio: f64,
    /// Executions with `V(t_{i+1}) ≥ V(t_i)`.
    pub lyapunov_violations: usize,
    pub diverged: bool,
}

fn noise_sample(
    rng: &mut ChaCha8Rng,
    cfg: &NoiseConfig,
    power_sum: &mut f64,
    count: &mut usize,
    x: &[f64],
) -> Vec<f64> {
    if !cfg.enabled || cfg.fraction == 0.0 {
        return x.to_vec();
    }
    *power_sum += x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    *count += 1;
    let var = cfg.fraction * *power_sum / *count as f64;
    if var <= 0.0 {
        return x.to_vec();
    }
    let normal = Normal::new(0.0, var.sqrt()).expect("positive variance");
    x.iter().map(|v| v + normal.sample(rng)).collect()
}

/// Right-hand side with the measurement held at `xm` and a constant disturbance `d`.
fn segment_field(plant: &PlantModel, xm: Vec<f64>, d: f64) -> FnField {
    let cl = plant.closed_loop.clone();
    let dir = plant.disturbance_direction.clone();
    let n = cl.dim();
    FnField::new(n, move |x, out| {
        let e: Vec<f64> = xm.iter().zip(x).map(|(a, b)| a - b).collect();
        cl.eval(x, &e, out);
        if d != 0.0 {
            for (o, b) in out.iter_mut().zip(dir(x)) {
                *o += d * b;
            }
        }
    })
}

struct Recorder<'a> {
    plant: &'a PlantModel,
    dt: Option<f64>,
    next_out: f64,
    rows: Vec<TraceRow>,
}

impl Recorder<'_> {
    fn push(&mut self, t: f64, x: &[f64], u: &[f64], exec: bool) {
        self.rows.push(TraceRow {
            t,
            x: self.plant.output(x),
            u: u.to_vec(),
            v: self.plant.lyapunov.eval(x),
            exec,
        });
    }

    fn record_segment(&mut self, traj: &crate::integrator::DenseTrajectory, u: &[f64]) -> Result<()> {
        let Some(dt) = self.dt else { return Ok(()) };
        while self.next_out < traj.t1() - 1e-15 {
            if self.next_out > traj.t0() {
                let x = traj.eval(self.next_out)?;
                self.push(self.next_out, &x, u, false);
            }
            self.next_out += dt;
        }
        Ok(())
    }
}

/// Simulate `plant` under `policy`.
pub fn run(plant: &PlantModel, policy: &TriggerPolicy, cfg: &SimConfig) -> Result<SimTrace> {
    cfg.validate()?;
    let n = plant.dim();
    if cfg.x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: cfg.x0.len() });
    }
    let system = ErrorExtendedSystem::new(plant.closed_loop.clone());
    let k = plant.closed_loop.ratio_dim();
    let oracle_c = match policy.kind {
        PolicyKind::EventOracle { c, .. } => Some(c),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut power_sum, mut power_count) = (0.0, 0usize);
    let mut rec = Recorder { plant, dt: cfg.output_dt, next_out: 0.0, rows: Vec::new() };
    let mut trace = SimTrace {
        sample_times: Vec::new(),
        sampled_states: Vec::new(),
        true_states: Vec::new(),
        sampled_v: Vec::new(),
        taus: Vec::new(),
        rows: Vec::new(),
        events: Vec::new(),
        final_state: cfg.x0.clone(),
        final_time: 0.0,
        diverged: None,
        max_guard: oracle_c.map(|_| f64::NEG_INFINITY),
    };
    let mut t = 0.0;
    let mut x = cfg.x0.clone();
    let t_eps = 1e-12 * cfg.t_end.max(1.0);
    loop {
        if t >= cfg.t_end - t_eps {
            break;
        }
        let xm = noise_sample(&mut rng, &cfg.noise, &mut power_sum, &mut power_count, &x);
        let u = (plant.input)(&xm);
        trace.sample_times.push(t);
        trace.sampled_states.push(xm.clone());
        trace.true_states.push(x.clone());
        trace.sampled_v.push(plant.lyapunov.eval(&x));
        rec.push(t, &x, &u, true);
        if norm(&x) < EQUILIBRIUM_TOL {
            trace.events.push(format!("equilibrium reached at t = {t}"));
            break;
        }
        let tau = match oracle_c {
            Some(_) => policy.tau_max,
            None => match policy.next_time(&system, &xm, &cfg.integrator) {
                Ok(v) => v,
                Err(e) => {
                    trace.diverged = Some(e.to_string());
                    break;
                }
            },
        };
        let t_stop = (t + tau).min(cfg.t_end);
        // Integrate piecewise across disturbance edges.
        let mut cuts: Vec<f64> = cfg.disturbance.edges().into_iter().filter(|&c| cfg.disturbance.enabled && c > t && c < t_stop).collect();
        cuts.push(t_stop);
        let mut a = t;
        let mut fired = false;
        for b in cuts {
            let field = segment_field(plant, xm.clone(), cfg.disturbance.value(0.5 * (a + b)));
            let end = match oracle_c {
                Some(c) => {
                    let guard = |z: &[f64]| {
                        let e: Vec<f64> = xm[..k].iter().zip(&z[..k]).map(|(p, q)| p - q).collect();
                        norm(&e) - c * norm(&z[..k])
                    };
                    match integrate_until_guard(&field, &x, &guard, b - a, &cfg.integrator, DEFAULT_GUARD_TOL) {
                        Ok(GuardOutcome::Crossed(ev)) => {
                            fired = true;
                            a + ev.t_star
                        }
                        Ok(GuardOutcome::NoCrossing { .. }) => b,
                        Err(e) => {
                            trace.diverged = Some(e.to_string());
                            break;
                        }
                    }
                }
                None => b,
            };
            if end > a {
                let traj = match integrate(&field, &x, a, end, &cfg.integrator) {
                    Ok(tr) => tr,
                    Err(e) => {
                        trace.diverged = Some(e.to_string());
                        break;
                    }
                };
                rec.record_segment(&traj, &u)?;
                if let (Some(c), Some(mg)) = (oracle_c, trace.max_guard.as_mut()) {
                    for tm in traj.mesh() {
                        let z = traj.eval(tm)?;
                        let e: Vec<f64> = xm[..k].iter().zip(&z[..k]).map(|(p, q)| p - q).collect();
                        *mg = mg.max(norm(&e) - c * norm(&z[..k]));
                    }
                }
                x = traj.final_state();
            }
            a = end;
            if fired {
                break;
            }
        }
        if trace.diverged.is_some() {
            break;
        }
        if x.iter().any(|v| !v.is_finite()) {
            trace.diverged = Some("state became non-finite".into());
            break;
        }
        let prev_v = plant.lyapunov.eval(trace.true_states.last().expect("sampled"));
        let now_v = plant.lyapunov.eval(&x);
        if cfg.disturbance.value(t) == 0.0 && now_v >= prev_v && prev_v > 0.0 {
            trace.events.push(format!("V did not decrease between t = {t} and t = {a}"));
        }
        trace.taus.push(a - t);
        if cfg.disturbance.enabled && t < cfg.disturbance.onset && a >= cfg.disturbance.onset {
            trace.events.push(format!("disturbance onset at t = {}", cfg.disturbance.onset));
        }
        t = a;
    }
    if trace.diverged.is_none() && t > trace.sample_times.last().copied().unwrap_or(-1.0) {
        let u = rec.rows.last().map(|r| r.u.clone()).unwrap_or_default();
        rec.push(t, &x, &u, false);
    }
    trace.final_state = x;
    trace.final_time = t;
    trace.rows = rec.rows;
    if let Some(d) = &trace.diverged {
        trace.events.push(format!("diverged: {d}"));
    }
    Ok(trace)
}

/// Execution statistics of a trace.
pub fn metrics(trace: &SimTrace) -> Metrics {
    let executions = trace.sample_times.len();
    let taus = &trace.taus;
    let (tau_min, tau_max, tau_mean) = if taus.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (
            taus.iter().copied().fold(f64::INFINITY, f64::min),
            taus.iter().copied().fold(0.0, f64::max),
            taus.iter().sum::<f64>() / taus.len() as f64,
        )
    };
    let v0 = trace.sampled_v.first().copied().unwrap_or(0.0);
    let v_end = trace.rows.last().map(|r| r.v).unwrap_or(v0);
    let lyapunov_violations = trace.sampled_v.windows(2).filter(|w| w[1] >= w[0] && w[0] > 0.0).count();
    Metrics {
        executions,
        tau_min,
        tau_mean,
        tau_max,
        final_norm: norm(&trace.final_state),
        v_ratio: if v0 > 0.0 { v_end / v0 } else { 0.0 },
        lyapunov_violations,
        diverged: trace.diverged.is_some(),
    }
}

/// `count` initial conditions on the sphere of radius `radius`: equal angles
/// for `n = 2`, a spherical Fibonacci lattice for `n = 3`.
pub fn boundary_ics(n: usize, radius: f64, count: usize) -> Vec<Vec<f64>> {
    sphere_directions(n, count).into_iter().map(|d| scaled(&d, radius)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    pub runs: usize,
    pub mean_executions: f64,
    pub min_executions: usize,
    pub max_executions: usize,
    pub mean_tau: f64,
    pub lyapunov_violations: usize,
    pub diverged: usize,
}

/// Run every policy from every initial condition and average per policy.
pub fn sweep(
    plant: &PlantModel,
    policies: &[TriggerPolicy],
    ics: &[Vec<f64>],
    base: &SimConfig,
) -> Result<Vec<SweepRow>> {
    if ics.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one initial condition".into()));
    }
    policies
        .iter()
        .map(|p| {
            let ms: Vec<Metrics> = ics
                .par_iter()
                .enumerate()
                .map(|(i, x0)| {
                    let mut cfg = base.clone();
                    cfg.x0 = x0.clone();
                    cfg.seed = base.seed.wrapping_add(i as u64);
                    cfg.output_dt = None;
                    run(plant, p, &cfg).map(|tr| metrics(&tr))
                })
                .collect::<Result<_>>()?;
            let execs: Vec<usize> = ms.iter().map(|m| m.executions).collect();
            Ok(SweepRow {
                policy: p.name().to_string(),
                runs: ms.len(),
                mean_executions: execs.iter().sum::<usize>() as f64 / ms.len() as f64,
                min_executions: *execs.iter().min().expect("nonempty"),
                max_executions: *execs.iter().max().expect("nonempty"),
                mean_tau: ms.iter().map(|m| m.tau_mean).sum::<f64>() / ms.len() as f64,
                lyapunov_violations: ms.iter().map(|m| m.lyapunov_violations).sum(),
                diverged: ms.iter().filter(|m| m.diverged).count(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::PolyField;

    fn scalar_plant() -> PlantModel {
        PlantModel {
            name: "scalar".into(),
            closed_loop: Arc::new(PolyField::from_expressions(1, &["-x1 - e1"]).unwrap()),
            lyapunov: ScalarPoly::parse(1, "0.5*x1^2").unwrap(),
            input: Arc::new(|x: &[f64]| vec![-x[0]]),
            n_inputs: 1,
            disturbance_direction: Arc::new(|_x: &[f64]| vec![1.0]),
            output_map: None,
        }
    }

    #[test]
    fn periodic_count_and_hold() {
        let plant = scalar_plant();
        let p = TriggerPolicy::periodic(0.1).unwrap();
        let cfg = SimConfig::new(vec![1.0], 1.0);
        let tr = run(&plant, &p, &cfg).unwrap();
        let m = metrics(&tr);
        assert_eq!(m.executions, 10);
        // Held input: ẋ = −x_i, so each interval multiplies x by 1 − τ.
        let expect = 0.9f64.powi(10);
        assert!((tr.final_state[0] - expect).abs() < 1e-8);
        assert_eq!(m.lyapunov_violations, 0);
    }

    #[test]
    fn origin_start_is_trivial() {
        let plant = scalar_plant();
        let p = TriggerPolicy::periodic(0.1).unwrap();
        let m = metrics(&run(&plant, &p, &SimConfig::new(vec![0.0], 1.0)).unwrap());
        assert!(m.executions <= 1);
        assert_eq!(m.final_norm, 0.0);
    }

    #[test]
    fn event_oracle_keeps_ratio() {
        let plant = scalar_plant();
        let p = TriggerPolicy::new(PolicyKind::EventOracle { c: 0.33, horizon: 1.0 }).unwrap();
        let tr = run(&plant, &p, &SimConfig::new(vec![1.0], 1.0)).unwrap();
        let tau = 0.33 / 1.33;
        for t in &tr.taus[..tr.taus.len() - 1] {
            assert!((t - tau).abs() < 1e-8, "{t}");
        }
        assert!(tr.max_guard.unwrap() <= 1e-9);
    }

    #[test]
    fn deterministic_with_noise() {
        let plant = scalar_plant();
        let p = TriggerPolicy::periodic(0.05).unwrap();
        let mut cfg = SimConfig::new(vec![1.0], 1.0);
        cfg.noise.enabled = true;
        let a = metrics(&run(&plant, &p, &cfg).unwrap());
        let b = metrics(&run(&plant, &p, &cfg).unwrap());
        assert_eq!(a, b);
        cfg.seed = 2;
        let c = metrics(&run(&plant, &p, &cfg).unwrap());
        assert_ne!(a.final_norm, c.final_norm);
    }
}
