//! Instrumented integration of open- and closed-loop dynamics.
//!
//! Every accepted step is recorded as a [`Sample`] carrying the state, the
//! level `sigma`, both storages, the port signals and the dissipation rate.
//! Sign changes of `sigma` (crossings of `S`) and of `|sigma| - 1/M`
//! (crossings of the layer boundary) between accepted steps are located by
//! bisection on a cubic Hermite interpolant and logged; an extra sample is
//! emitted at each refined crossing time.

pub mod export;
pub mod ode;

use std::fmt;

use nalgebra::DVector;

use crate::error::{Result, SphsError};
use crate::interconnect::{ClosedLoopSystem, Evaluation, SignHold};
use crate::system::{Region, SigmaLevel, Variant};

use ode::Hermite;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Fixed-step classic Runge-Kutta.
    Rk4,
    /// Dormand-Prince 5(4) with embedded error control.
    Rk45 { rtol: f64, atol: f64, dt_max: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Fixed step, or initial step for the adaptive method.
    pub dt: f64,
    pub t_final: f64,
    pub event_refine_tol: f64,
    /// Hysteresis width (in sigma units) for freezing the sign of the input
    /// gain near `S`. Off by default.
    pub chatter_guard: Option<f64>,
    /// End the run at the first impact on `S`.
    pub stop_on_impact: bool,
}

impl IntegratorConfig {
    pub fn rk4(dt: f64, t_final: f64) -> Self {
        Self {
            method: Method::Rk4,
            dt,
            t_final,
            event_refine_tol: 1e-10_f64.min(dt * 1e-3),
            chatter_guard: None,
            stop_on_impact: false,
        }
    }

    pub fn rk45(rtol: f64, atol: f64, dt_max: f64, t_final: f64) -> Self {
        let dt = (dt_max * 0.1).min(1e-3);
        Self {
            method: Method::Rk45 { rtol, atol, dt_max },
            dt,
            t_final,
            event_refine_tol: 1e-10_f64.min(dt * 1e-3),
            chatter_guard: None,
            stop_on_impact: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SphsError::InvalidParameter {
                    name,
                    value: v,
                    reason: "must be positive and finite",
                })
            }
        };
        positive("dt", self.dt)?;
        positive("t_final", self.t_final)?;
        positive("event_refine_tol", self.event_refine_tol)?;
        if self.event_refine_tol >= self.dt {
            return Err(SphsError::InvalidParameter {
                name: "event_refine_tol",
                value: self.event_refine_tol,
                reason: "must be smaller than dt",
            });
        }
        if let Some(w) = self.chatter_guard {
            positive("chatter_guard", w)?;
        }
        if let Method::Rk45 { rtol, atol, dt_max } = self.method {
            positive("rtol", rtol)?;
            positive("atol", atol)?;
            positive("dt_max", dt_max)?;
        }
        Ok(())
    }
}

/// One recorded point of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Full closed-loop state `[x | z | x_i]`.
    pub state: DVector<f64>,
    /// Plant state.
    pub x: DVector<f64>,
    pub sigma: f64,
    pub region: Region,
    /// `H = sigma^2 / 2`.
    pub h: f64,
    /// Variant storage (`H`, `H_sat` or `H_lin`).
    pub storage: f64,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    /// `y^T u`.
    pub supply: f64,
    pub diss_rate: f64,
    /// `x^T Q xdot`.
    pub sigma_dot: f64,
    /// Rounding bound on `sigma_dot`, `n eps |Q x| |xdot|` up to a safety
    /// factor. The drift part of `x^T Q xdot` vanishes exactly but not in
    /// floating point.
    pub sigma_dot_err: f64,
    /// `|xdot|` of the plant state.
    pub speed: f64,
    /// Storage rate by the chain rule, `None` where the storage is not
    /// differentiable.
    pub storage_rate: Option<f64>,
    pub phase_error: Option<f64>,
    /// Emitted at a refined crossing time rather than at a step end.
    pub is_event: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryMeta {
    pub scenario: String,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub variant: Variant,
    pub tol_s: f64,
    pub n: usize,
    pub m: usize,
    samples: Vec<Sample>,
    /// Deduplicated load-bound and model warnings raised during the run.
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&Sample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// Samples recorded at step ends (event samples skipped).
    pub fn step_samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| !s.is_event)
    }

    pub fn with_meta(mut self, meta: TrajectoryMeta) -> Self {
        self.meta = meta;
        self
    }

    fn warn(&mut self, w: String) {
        if !self.warnings.contains(&w) {
            self.warnings.push(w);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    SCrossing,
    BoundaryCrossing,
    SImpact,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SCrossing => "s_crossing",
            EventKind::BoundaryCrossing => "boundary_crossing",
            EventKind::SImpact => "s_impact",
        }
    }
}

/// `Inward` means towards `S`: into the ellipsoid for `S` crossings, into
/// the layer for boundary crossings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Inward,
    Outward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Inward => "inward",
            Direction::Outward => "outward",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub direction: Direction,
    /// Plant state at the refined time.
    pub x: DVector<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AbortReason {
    StepUnderflow { t: f64, dt: f64 },
    NonFinite { t: f64 },
    Model(SphsError),
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbortReason::StepUnderflow { t, dt } => {
                write!(f, "step size underflow at t={t} (dt={dt:e})")
            }
            AbortReason::NonFinite { t } => write!(f, "non-finite state at t={t}"),
            AbortReason::Model(e) => write!(f, "model error: {e}"),
        }
    }
}

/// An aborted run, with everything recorded up to the failure.
#[derive(Clone, Debug)]
pub struct SimAbort {
    pub reason: AbortReason,
    pub trajectory: Trajectory,
    pub events: EventLog,
}

impl fmt::Display for SimAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "integration aborted: {} ({} samples recorded)",
            self.reason,
            self.trajectory.len()
        )
    }
}

impl std::error::Error for SimAbort {}

struct Recorder<'a> {
    cl: &'a ClosedLoopSystem,
    cfg: &'a IntegratorConfig,
    traj: Trajectory,
    log: EventLog,
    impacted: bool,
    hold: Option<SignHold>,
}

enum Flow {
    Continue,
    Stop,
}

impl<'a> Recorder<'a> {
    fn new(cl: &'a ClosedLoopSystem, cfg: &'a IntegratorConfig) -> Self {
        let plant = cl.plant();
        Self {
            cl,
            cfg,
            traj: Trajectory {
                meta: TrajectoryMeta::default(),
                variant: plant.variant(),
                tol_s: plant.tol_s(),
                n: plant.n(),
                m: plant.m(),
                samples: Vec::new(),
                warnings: Vec::new(),
            },
            log: EventLog::default(),
            impacted: false,
            hold: None,
        }
    }

    fn evaluate(&self, t: f64, state: &DVector<f64>) -> Result<Evaluation> {
        self.cl.evaluate(t, state, self.hold)
    }

    fn sample(&mut self, t: f64, state: &DVector<f64>, ev: &Evaluation, is_event: bool) -> Sample {
        let plant = self.cl.plant();
        let variant = plant.variant();
        let tol_s = plant.tol_s();
        let x = self.cl.plant_state(state);
        let ctrl = &state.as_slice()[plant.n() + self.cl.load().order()..];
        let s = ev.sigma;
        let xdot = ev.derivative.rows(0, plant.n());
        let qx = plant.q().apply(&x);
        let sigma_dot = qx.dot(&xdot);
        let speed = xdot.norm();
        let sigma_dot_err = 16.0 * plant.n() as f64 * f64::EPSILON * qx.norm() * speed;
        if let Some(w) = &ev.warning {
            self.traj.warn(format!("load: {w}"));
        }
        Sample {
            t,
            region: s.region(variant, tol_s),
            h: s.hamiltonian(),
            storage: variant.storage(s, tol_s),
            supply: ev.y.dot(&ev.u),
            diss_rate: variant.dissipation(s, plant.qrq(&x, t, ctrl)),
            sigma_dot,
            sigma_dot_err,
            speed,
            storage_rate: s.storage_slope(variant, tol_s).map(|k| k * sigma_dot),
            phase_error: ev.phase_error,
            sigma: s.0,
            y: ev.y.clone(),
            u: ev.u.clone(),
            x,
            state: state.clone(),
            is_event,
        }
    }

    fn push(&mut self, sample: Sample) {
        self.traj.samples.push(sample);
    }

    fn update_hold(&mut self, sigma: f64) {
        if let Some(width) = self.cfg.chatter_guard {
            if sigma.abs() >= width || self.hold.is_none() {
                let sign = if sigma >= 0.0 { 1.0 } else { -1.0 };
                self.hold = Some(SignHold { width, sign });
            }
        }
    }

    fn start(&mut self, state: &DVector<f64>) -> Result<(Evaluation, Flow)> {
        self.update_hold(self.cl.plant().q().sigma_unchecked(&self.cl.plant_state(state)).0);
        let ev = self.evaluate(0.0, state)?;
        let sample = self.sample(0.0, state, &ev, false);
        let on_s = sample.sigma.abs() <= self.cl.plant().tol_s();
        let x = sample.x.clone();
        self.push(sample);
        if on_s {
            self.impacted = true;
            self.log.events.push(Event {
                t: 0.0,
                kind: EventKind::SImpact,
                direction: Direction::Inward,
                x,
            });
            if self.cfg.stop_on_impact {
                return Ok((ev, Flow::Stop));
            }
        }
        Ok((ev, Flow::Continue))
    }

    /// Records events inside `(t0, t1)` and the step-end sample.
    fn accept_step(
        &mut self,
        t0: f64,
        y0: &DVector<f64>,
        f0: &DVector<f64>,
        t1: f64,
        y1: &DVector<f64>,
        ev1: &Evaluation,
    ) -> Result<Flow> {
        let plant = self.cl.plant();
        let q = plant.q().clone();
        let tol_s = plant.tol_s();
        let n = plant.n();
        let layer = plant.variant().layer();
        let sigma_of = |s: &DVector<f64>| q.sigma_unchecked(&s.rows(0, n).into_owned()).0;

        let s0 = sigma_of(y0);
        let s1 = ev1.sigma.0;
        let herm = Hermite {
            t0,
            t1,
            y0,
            f0,
            y1,
            f1: &ev1.derivative,
        };
        let tol = self.cfg.event_refine_tol;

        let mut found: Vec<(f64, EventKind, Direction, DVector<f64>)> = Vec::new();
        if s0 * s1 < 0.0 {
            let (t, st) = herm.bisect(|s| sigma_of(s), tol);
            let dir = if s0 > 0.0 {
                Direction::Inward
            } else {
                Direction::Outward
            };
            found.push((t, EventKind::SCrossing, dir, st));
        }
        if let Some(m) = layer {
            let b = 1.0 / m;
            let (g0, g1) = (s0.abs() - b, s1.abs() - b);
            if g0 * g1 < 0.0 {
                let (t, st) = herm.bisect(|s| sigma_of(s).abs() - b, tol);
                let dir = if g0 > 0.0 {
                    Direction::Inward
                } else {
                    Direction::Outward
                };
                found.push((t, EventKind::BoundaryCrossing, dir, st));
            }
        }
        if !self.impacted {
            let first_crossing = found
                .iter()
                .filter(|e| e.1 == EventKind::SCrossing)
                .map(|e| (e.0, e.3.clone()))
                .next();
            let impact = match first_crossing {
                Some(c) => Some(c),
                None if s1.abs() <= tol_s => {
                    Some(herm.bisect(|s| sigma_of(s).abs() - tol_s, tol))
                }
                None => None,
            };
            if let Some((t, st)) = impact {
                found.push((t, EventKind::SImpact, Direction::Inward, st));
            }
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0));

        for (t, kind, direction, st) in found {
            let x = st.rows(0, n).into_owned();
            self.log.events.push(Event {
                t,
                kind,
                direction,
                x,
            });
            let last_t = self.traj.samples.last().map_or(f64::NEG_INFINITY, |s| s.t);
            if t > last_t && t < t1 {
                let ev = self.evaluate(t, &st)?;
                let sample = self.sample(t, &st, &ev, true);
                self.push(sample);
            }
            if kind == EventKind::SImpact {
                self.impacted = true;
                if self.cfg.stop_on_impact {
                    return Ok(Flow::Stop);
                }
            }
        }

        let sample = self.sample(t1, y1, ev1, false);
        self.push(sample);
        self.update_hold(s1);
        Ok(Flow::Continue)
    }

    /// Under the exact variant `sigma^2` can fall linearly to zero, so the
    /// adaptive step collapses just before `S`. If the last sample is heading
    /// into `S` on a time scale close to `t_eps`, log the arrival and end the
    /// run.
    fn arrives_on_s(&mut self, t_eps: f64) -> bool {
        if self.traj.variant != Variant::Exact {
            return false;
        }
        let Some(s) = self.traj.samples.last() else {
            return false;
        };
        if s.sigma * s.sigma_dot >= 0.0 || !s.sigma_dot.is_finite() {
            return false;
        }
        // sigma * sigma_dot is locally constant, so the remaining time is
        // sigma / (2 |sigma_dot|).
        let remaining = 0.5 * (s.sigma / s.sigma_dot).abs();
        if remaining > 1e4 * t_eps {
            return false;
        }
        let t_hit = s.t + remaining;
        let x = s.x.clone();
        if !self.impacted {
            self.impacted = true;
            self.log.events.push(Event {
                t: t_hit,
                kind: EventKind::SImpact,
                direction: Direction::Inward,
                x,
            });
        }
        self.traj.warn(format!(
            "exact variant: trajectory reached S at t = {t_hit} where the vector field is singular; integration ended"
        ));
        true
    }

    fn abort(self, reason: AbortReason) -> SimAbort {
        SimAbort {
            reason,
            trajectory: self.traj,
            events: self.log,
        }
    }
}

/// Integrates the closed loop from the full initial state `state0` over
/// `[0, t_final]`.
///
/// Runs of the exact variant are expected to chatter on `S`; a warning is
/// attached to the trajectory.
pub fn integrate(
    cl: &ClosedLoopSystem,
    state0: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> std::result::Result<(Trajectory, EventLog), SimAbort> {
    let mut rec = Recorder::new(cl, cfg);
    if let Err(e) = cfg.validate() {
        return Err(rec.abort(AbortReason::Model(e)));
    }
    if state0.len() != cl.total_dim() {
        return Err(rec.abort(AbortReason::Model(SphsError::DimensionMismatch {
            what: "initial state",
            expected: cl.total_dim(),
            found: state0.len(),
        })));
    }
    if state0.iter().any(|v| !v.is_finite()) {
        return Err(rec.abort(AbortReason::NonFinite { t: 0.0 }));
    }
    if cl.plant().variant() == Variant::Exact {
        rec.traj.warn(
            "exact variant: the singular input gain makes S a sliding surface; chattering is expected"
                .into(),
        );
    }

    let (mut ev, flow) = match rec.start(state0) {
        Ok(v) => v,
        Err(e) => return Err(rec.abort(AbortReason::Model(e))),
    };
    if let Flow::Stop = flow {
        return Ok((rec.traj, rec.log));
    }

    let mut t = 0.0;
    let mut y = state0.clone();
    let t_final = cfg.t_final;
    let t_eps = 1e-12 * t_final.max(1.0);
    let mut h = cfg.dt;

    while t < t_final - t_eps {
        let hold = rec.hold;
        let mut f = |tt: f64, yy: &DVector<f64>| cl.evaluate(tt, yy, hold).map(|e| e.derivative);
        let (t1, y1) = match cfg.method {
            Method::Rk4 => {
                let step = cfg.dt.min(t_final - t);
                match ode::rk4_step(&mut f, t, &y, &ev.derivative, step) {
                    Ok(y1) => (t + step, y1),
                    Err(e) => return Err(rec.abort(AbortReason::Model(e))),
                }
            }
            Method::Rk45 { rtol, atol, dt_max } => loop {
                h = h.min(dt_max).min(t_final - t);
                if h < t_eps {
                    if rec.arrives_on_s(t_eps) {
                        return Ok((rec.traj, rec.log));
                    }
                    return Err(rec.abort(AbortReason::StepUnderflow { t, dt: h }));
                }
                let trial = match ode::dopri_step(&mut f, t, &y, &ev.derivative, h) {
                    Ok(tr) => tr,
                    Err(e) => return Err(rec.abort(AbortReason::Model(e))),
                };
                let finite = trial.y.iter().all(|v| v.is_finite());
                let err = if finite {
                    ode::error_norm(&trial.error, &y, &trial.y, rtol, atol)
                } else {
                    f64::INFINITY
                };
                if err <= 1.0 {
                    let t1 = t + h;
                    let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    h *= grow;
                    break (t1, trial.y);
                }
                let shrink = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.2, 1.0) } else { 0.2 };
                h *= shrink;
            },
        };

        if y1.iter().any(|v| !v.is_finite()) {
            return Err(rec.abort(AbortReason::NonFinite { t: t1 }));
        }
        let ev1 = match rec.evaluate(t1, &y1) {
            Ok(e) => e,
            Err(e) => return Err(rec.abort(AbortReason::Model(e))),
        };
        match rec.accept_step(t, &y, &ev.derivative, t1, &y1, &ev1) {
            Ok(Flow::Continue) => {}
            Ok(Flow::Stop) => return Ok((rec.traj, rec.log)),
            Err(e) => return Err(rec.abort(AbortReason::Model(e))),
        }
        t = t1;
        y = y1;
        // The sign hold may have changed; re-evaluate so k1 is consistent.
        ev = if cfg.chatter_guard.is_some() {
            match rec.evaluate(t, &y) {
                Ok(e) => e,
                Err(e) => return Err(rec.abort(AbortReason::Model(e))),
            }
        } else {
            ev1
        };
    }
    Ok((rec.traj, rec.log))
}

/// Time of the first arrival on `S` (within the `tol_S` band), if any.
pub fn first_impact_time(traj: &Trajectory, log: &EventLog) -> Option<f64> {
    if let Some(e) = log.of_kind(EventKind::SImpact).next() {
        return Some(e.t);
    }
    traj.samples()
        .iter()
        .find(|s| s.sigma.abs() <= traj.tol_s)
        .map(|s| s.t)
}

/// Integrates a plain ODE `ydot = f(t, y)` with fixed-step RK4, returning
/// every step. Used for sub-systems simulated on their own.
pub fn integrate_ode<F>(mut f: F, y0: &DVector<f64>, dt: f64, t_final: f64) -> Vec<(f64, DVector<f64>)>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let mut g = |t: f64, y: &DVector<f64>| Ok::<_, std::convert::Infallible>(f(t, y));
    let mut out = vec![(0.0, y0.clone())];
    let mut t = 0.0;
    let mut y = y0.clone();
    let t_eps = 1e-12 * t_final.max(1.0);
    while t < t_final - t_eps {
        let h = dt.min(t_final - t);
        let k1 = g(t, &y).unwrap();
        y = ode::rk4_step(&mut g, t, &y, &k1, h).unwrap();
        t += h;
        out.push((t, y.clone()));
    }
    out
}

/// Convenience: the sigma level of a sample as a [`SigmaLevel`].
pub fn sample_sigma(s: &Sample) -> SigmaLevel {
    SigmaLevel(s.sigma)
}
