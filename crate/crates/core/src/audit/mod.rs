//! Numerical checks of the dissipation, invariance and convergence
//! properties of simulated trajectories.
//!
//! Checks that are stated for trajectories off `S` skip samples inside the
//! `tol_S` band and report how many were skipped. Discrete checks also skip
//! sample pairs the fixed step cannot resolve: a pair where `sigma` changes
//! sign, or where `|sigma|` is smaller than the change `dt |sigma_dot|` one
//! step can produce.

pub mod random;
mod report;

pub use report::{AuditReport, CheckResult, Verdict};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SphsError};
use crate::interconnect::ClosedLoopSystem;
use crate::linalg;
use crate::sim::{self, EventLog, IntegratorConfig, Sample, Trajectory};
use crate::system::{branches, QuadraticForm, SigmaLevel, SingularPHSystem, Variant};

/// Fewer usable samples than this make a check inconclusive.
pub const MIN_USABLE: usize = 10;

const PASSIVITY_CLAIM: &str =
    "off S the variant storage grows no faster than the supplied power y^T u";
const IDENTITY_CLAIM: &str =
    "storage rate equals supply minus the closed-form dissipation rate";
const MONOTONE_CLAIM: &str = "with zero input H never increases";
const CYCLE_CLAIM: &str = "no net energy can be extracted over a closed cycle";
const INVARIANCE_CLAIM: &str =
    "S is forward invariant and the input has no effect on S";
const IMPACT_CLAIM: &str =
    "the first impact on S happens no later than H(x0)/d_min";
const CONVERGENCE_CLAIM: &str = "every trajectory from x0 != 0 converges to S";
const PHASE_CLAIM: &str =
    "the phase controller drives the state to the point of S with the reference phase";
const CONTINUITY_CLAIM: &str =
    "the modified storages are continuous across the layer boundary";
const LIMIT_CLAIM: &str = "H_lin on the layer boundary vanishes as M grows";
const TREND_CLAIM: &str = "more dissipation shrinks the excursion of sigma after entering the layer";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Exclusion {
    Band,
    Crossing,
    NonFinite,
    UnderResolved,
}

#[derive(Clone, Copy, Debug, Default)]
struct Exclusions {
    band: usize,
    crossing: usize,
    non_finite: usize,
    under_resolved: usize,
}

impl Exclusions {
    fn add(&mut self, e: Exclusion) {
        match e {
            Exclusion::Band => self.band += 1,
            Exclusion::Crossing => self.crossing += 1,
            Exclusion::NonFinite => self.non_finite += 1,
            Exclusion::UnderResolved => self.under_resolved += 1,
        }
    }

    fn total(&self) -> usize {
        self.band + self.crossing + self.non_finite + self.under_resolved
    }

    fn record(&self, c: &mut CheckResult) {
        c.excluded = self.total();
        c.metrics.push(("excluded_band", self.band as f64));
        c.metrics.push(("excluded_crossing", self.crossing as f64));
        c.metrics.push(("excluded_non_finite", self.non_finite as f64));
        c.metrics.push(("excluded_under_resolved", self.under_resolved as f64));
    }
}

/// Largest admissible `dt max(|sigma_dot / sigma|, |xdot| / |x|)` for a
/// pair of samples to count as resolved by the step.
pub const RESOLUTION: f64 = 0.05;

/// Largest admissible one-step `sigma` defect relative to `|sigma|`.
pub const DEFECT_RESOLUTION: f64 = 1e-2;

/// Mismatch between the integrated change of `sigma` over a step and the
/// trapezoid of `sigma_dot`: an estimate of the discretization error in
/// `sigma` on that step.
fn sigma_defect(a: &Sample, b: &Sample) -> f64 {
    ((b.sigma - a.sigma) - 0.5 * (a.sigma_dot + b.sigma_dot) * (b.t - a.t)).abs()
}

fn classify_pair(a: &Sample, b: &Sample, band: f64) -> Option<Exclusion> {
    if a.sigma.abs() <= band || b.sigma.abs() <= band {
        return Some(Exclusion::Band);
    }
    if a.sigma * b.sigma < 0.0 {
        return Some(Exclusion::Crossing);
    }
    if !(a.storage.is_finite() && b.storage.is_finite()) {
        return Some(Exclusion::NonFinite);
    }
    let dt = b.t - a.t;
    let rate = |s: &Sample| {
        let xn = s.x.norm();
        let tangential = if xn > 0.0 { s.speed / xn } else { f64::INFINITY };
        (s.sigma_dot / s.sigma).abs().max(tangential)
    };
    let sigma_min = a.sigma.abs().min(b.sigma.abs());
    if dt * rate(a).max(rate(b)) > RESOLUTION || sigma_defect(a, b) > DEFECT_RESOLUTION * sigma_min {
        return Some(Exclusion::UnderResolved);
    }
    None
}

/// `-d + y^T u`, the storage rate predicted off `S`.
fn predicted_rate(s: &Sample) -> f64 {
    -s.diss_rate + s.supply
}

fn step_samples(traj: &Trajectory) -> Vec<&Sample> {
    traj.step_samples().collect()
}

/// Passivity (exact and saturated variants) or cyclo-dissipativity (linear
/// variant) with the storage paired with the trajectory's variant.
///
/// Two parts:
/// * at every sample off `S`, the chain-rule storage rate must equal
///   `-d + y^T u` to relative `1e-8`, allowing for rounding in `sigma_dot`;
/// * for every usable pair of consecutive steps,
///   `(S(t1) - S(t0)) / dt <= (p0 + p1)/2 + slack` where `p = y^T u` and the
///   slack is `dt` times a local Lipschitz estimate of the storage rate,
///   i.e. `|r1 - r0|`, plus the storage error implied by the step's `sigma`
///   defect.
pub fn check_passivity(traj: &Trajectory) -> CheckResult {
    let mut c = CheckResult::new("passivity", PASSIVITY_CLAIM);
    let samples = step_samples(traj);
    let tol_s = traj.tol_s;

    let mut identity_worst = 0.0_f64;
    let mut identity_fail = 0usize;
    for s in &samples {
        if s.sigma.abs() <= tol_s {
            continue;
        }
        if let Some(rate) = s.storage_rate {
            let want = predicted_rate(s);
            let slope = SigmaLevel(s.sigma).storage_slope(traj.variant, tol_s).unwrap_or(0.0);
            let rounding = slope.abs() * s.sigma_dot_err;
            let scale = s.diss_rate.abs() + s.supply.abs() + rate.abs() + 1e8 * rounding;
            if scale > 0.0 {
                let rel = (rate - want).abs() / scale;
                identity_worst = identity_worst.max(rel);
                if rel > 1e-8 {
                    identity_fail += 1;
                }
            }
        }
    }

    let mut excl = Exclusions::default();
    let mut violations = 0usize;
    let mut max_slack = 0.0_f64;
    for w in samples.windows(2) {
        let (a, b) = (w[0], w[1]);
        if let Some(e) = classify_pair(a, b, tol_s) {
            excl.add(e);
            continue;
        }
        c.usable += 1;
        let dt = b.t - a.t;
        let lhs = (b.storage - a.storage) / dt;
        let rhs = 0.5 * (a.supply + b.supply);
        let lipschitz_slack = (predicted_rate(b) - predicted_rate(a)).abs();
        let slope = |s: &Sample| {
            SigmaLevel(s.sigma)
                .storage_slope(traj.variant, tol_s)
                .map_or(0.0, f64::abs)
        };
        let defect_slack = slope(a).max(slope(b)) * sigma_defect(a, b) / dt;
        let floor = 1e-12 * (1.0 + lhs.abs() + rhs.abs()) + 4.0 * f64::EPSILON * (a.storage.abs() + b.storage.abs()) / dt;
        let slack = lipschitz_slack + defect_slack + floor;
        max_slack = max_slack.max(slack);
        let margin = rhs + slack - lhs;
        if margin < 0.0 {
            violations += 1;
        }
        c.track(margin, b.t, &b.x);
    }

    excl.record(&mut c);
    c.tolerance = max_slack;
    c.metrics.push(("violations", violations as f64));
    c.metrics.push(("identity_max_rel_residual", identity_worst));
    c.metrics.push(("identity_failures", identity_fail as f64));
    c.verdict = if violations > 0 || identity_fail > 0 {
        Verdict::Fail
    } else if c.usable < MIN_USABLE {
        c.note = Some(format!("only {} usable sample pairs", c.usable));
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    c
}

/// Compares the closed-form storage rate `-d + y^T u` with the centred
/// finite difference of the sampled storage. A sample passes when the
/// difference is within `rel_tol` of `|d| + |y^T u|`; the check passes when
/// at least `min_fraction` of the usable samples do.
///
/// Only samples with `|sigma| > 10 tol_S` whose neighbouring pairs are
/// resolved by the step, and whose storage values are accurate enough for
/// the difference quotient to be meaningful at `rel_tol`, are used.
pub fn check_dissipation_identity(traj: &Trajectory, rel_tol: f64, min_fraction: f64) -> CheckResult {
    let mut c = CheckResult::new("dissipation_identity", IDENTITY_CLAIM);
    let samples = step_samples(traj);
    let band = 10.0 * traj.tol_s;
    let mut excl = Exclusions::default();
    let mut ok = 0usize;
    let mut worst_rel = 0.0_f64;
    for w in samples.windows(3) {
        let (a, b, d) = (w[0], w[1], w[2]);
        if let Some(e) = classify_pair(a, b, band).or_else(|| classify_pair(b, d, band)) {
            excl.add(e);
            continue;
        }
        let scale = b.diss_rate.abs() + b.supply.abs();
        if scale == 0.0 {
            excl.add(Exclusion::Band);
            continue;
        }
        // Storage noise implied by the sigma defects of the two steps. The
        // defect involves only the vector field, so excluding on it cannot
        // hide an error in the storage or dissipation formulas.
        let slope = [a, b, d]
            .iter()
            .map(|s| {
                SigmaLevel(s.sigma)
                    .storage_slope(traj.variant, traj.tol_s)
                    .map_or(f64::INFINITY, f64::abs)
            })
            .fold(0.0_f64, f64::max);
        let fd_noise = slope * (sigma_defect(a, b) + sigma_defect(b, d)) / (d.t - a.t);
        if fd_noise > 0.1 * rel_tol * scale {
            excl.add(Exclusion::UnderResolved);
            continue;
        }
        c.usable += 1;
        let h1 = b.t - a.t;
        let h2 = d.t - b.t;
        let fd = (h1 * h1 * (d.storage - b.storage) + h2 * h2 * (b.storage - a.storage))
            / (h1 * h2 * (h1 + h2));
        let rel = (fd - predicted_rate(b)).abs() / scale;
        worst_rel = worst_rel.max(rel);
        if rel <= rel_tol {
            ok += 1;
        }
        c.track(rel_tol - rel, b.t, &b.x);
    }
    excl.record(&mut c);
    c.tolerance = rel_tol;
    let fraction = if c.usable > 0 {
        ok as f64 / c.usable as f64
    } else {
        0.0
    };
    c.metrics.push(("within_tol", ok as f64));
    c.metrics.push(("fraction_within_tol", fraction));
    c.metrics.push(("max_rel_error", worst_rel));
    c.verdict = if c.usable < MIN_USABLE {
        c.note = Some(format!("only {} usable samples", c.usable));
        Verdict::Inconclusive
    } else if fraction >= min_fraction {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    c
}

/// Under zero input, `H(x(t_{k+1})) <= H(x(t_k)) + c dt^2` at every step.
pub fn check_zero_input_monotone(traj: &Trajectory, c_slack: f64) -> CheckResult {
    let mut c = CheckResult::new("zero_input_monotone", MONOTONE_CLAIM);
    let samples = step_samples(traj);
    if samples.iter().any(|s| s.u.iter().any(|v| *v != 0.0)) {
        c.note = Some("trajectory has nonzero input".into());
        return c;
    }
    let mut max_slack = 0.0_f64;
    for w in samples.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dt = b.t - a.t;
        let slack = c_slack * dt * dt;
        max_slack = max_slack.max(slack);
        c.usable += 1;
        c.track(a.h + slack - b.h, b.t, &b.x);
    }
    c.tolerance = max_slack;
    c.verdict = if c.usable < MIN_USABLE {
        Verdict::Inconclusive
    } else if c.worst_margin >= 0.0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    c
}

/// `sigma* > 0` gated supply: zero inside the `tol_S` band, where the input
/// does not reach the state.
fn effective_supply(s: &Sample, tol_s: f64) -> f64 {
    if s.sigma.abs() <= tol_s {
        0.0
    } else {
        s.supply
    }
}

fn storage_gradient_norm(q: &QuadraticForm, s: &Sample, variant: Variant, tol_s: f64) -> Option<f64> {
    let slope = match SigmaLevel(s.sigma).storage_slope(variant, tol_s) {
        Some(k) => k.abs(),
        None => match variant {
            Variant::Saturated { m } => 1.0 / m,
            _ => return None,
        },
    };
    Some(slope * q.apply(&s.x).norm())
}

/// Cyclo-dissipativity over the best near-closed segment of a trajectory:
/// `integral of y^T u dt >= -tol`, where `tol` is `closure_tol` times the
/// storage gradient at the segment ends plus a Richardson estimate of the
/// trapezoid error.
///
/// A segment qualifies when the plant state first moves more than
/// `4 closure_tol` away from its start and later returns within
/// `closure_tol` of it.
pub fn check_cycle_supply(traj: &Trajectory, q: &QuadraticForm, closure_tol: f64) -> CheckResult {
    let mut c = CheckResult::new("cycle_supply", CYCLE_CLAIM);
    c.tolerance = closure_tol;
    let samples = step_samples(traj);
    let n = samples.len();
    let stride = (n / 400).max(1);

    let mut best: Option<(usize, usize, f64)> = None;
    for i in (0..n).step_by(stride) {
        let xi = &samples[i].x;
        let mut left = false;
        let mut j = i + 1;
        while j < n {
            let dist = (&samples[j].x - xi).norm();
            if !left {
                left = dist > 4.0 * closure_tol;
            } else if dist <= closure_tol {
                let mut jbest = j;
                let mut dbest = dist;
                while jbest + 1 < n {
                    let dn = (&samples[jbest + 1].x - xi).norm();
                    if dn >= dbest {
                        break;
                    }
                    jbest += 1;
                    dbest = dn;
                }
                if best.is_none_or(|(_, _, d)| dbest < d) {
                    best = Some((i, jbest, dbest));
                }
                break;
            }
            j += 1;
        }
    }

    let Some((i, j, closure)) = best else {
        c.note = Some("no near-closed segment".into());
        return c;
    };
    let tol_s = traj.tol_s;
    let (a, b) = (samples[i], samples[j]);
    let grad = match (
        storage_gradient_norm(q, a, traj.variant, tol_s),
        storage_gradient_norm(q, b, traj.variant, tol_s),
    ) {
        (Some(ga), Some(gb)) => ga.max(gb),
        _ => {
            c.note = Some("segment ends inside the tol_S band".into());
            return c;
        }
    };

    let seg = &samples[i..=j];
    let p = |s: &Sample| effective_supply(s, tol_s);
    let trap = |idx: &[usize]| {
        idx.windows(2)
            .map(|w| 0.5 * (p(seg[w[0]]) + p(seg[w[1]])) * (seg[w[1]].t - seg[w[0]].t))
            .sum::<f64>()
    };
    let fine: Vec<usize> = (0..seg.len()).collect();
    let mut coarse: Vec<usize> = (0..seg.len()).step_by(2).collect();
    if *coarse.last().unwrap() != seg.len() - 1 {
        coarse.push(seg.len() - 1);
    }
    let integral = trap(&fine);
    let quad_err = (integral - trap(&coarse)).abs() / 3.0;
    let tol_integral = closure_tol * grad + quad_err;

    c.usable = seg.len();
    c.excluded = seg.iter().filter(|s| s.sigma.abs() <= tol_s).count();
    c.tolerance = tol_integral;
    c.track(integral + tol_integral, b.t, &b.x);
    c.metrics = vec![
        ("integral", integral),
        ("closure_distance", closure),
        ("quadrature_error", quad_err),
        ("segment_t0", a.t),
        ("segment_t1", b.t),
    ];
    c.verdict = if integral >= -tol_integral {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    c
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceConfig {
    pub n_points: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    /// Largest admissible `|sigma|` along the runs.
    pub threshold: f64,
    pub max_amplitude: f64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self {
            n_points: 10,
            horizon: 10.0,
            dt: 1e-3,
            seed: 0,
            threshold: 1e-6,
            max_amplitude: 1.0,
        }
    }
}

/// Upper bound on how far an RK4 stage point leaves `S` when the step starts
/// on `S`: stages move along the drift `Jbar Q x`, which is tangent to `S`,
/// so the level changes by `h^2 |Jbar Q x|_Q^2 / 2`. The `tol_S` band has to
/// contain this excursion for the input gating to act on every stage.
///
/// `None` for non-constant `Jbar`.
pub fn stage_excursion_bound(sys: &SingularPHSystem, dt: f64) -> Option<f64> {
    let jbar = sys.jbar_field().as_constant()?;
    let q = sys.q();
    let jq = jbar * q.matrix();
    let norm = jq.svd(false, false).singular_values.max();
    // max over S of |x| is 1/sqrt(lambda_min(Q)).
    Some(0.5 * dt * dt * q.lambda_max() * norm * norm / q.lambda_min())
}

/// Starts `n_points` runs of the exact variant on `S` with random sinusoidal
/// inputs and measures the largest `|sigma|` reached. At each start point it
/// also evaluates the vector field under two different random inputs; on `S`
/// they must coincide.
pub fn check_forward_invariance(sys: &SingularPHSystem, cfg: &InvarianceConfig) -> Result<CheckResult> {
    if sys.variant() != Variant::Exact {
        return Err(SphsError::Precondition(
            "forward invariance is checked on the exact variant".into(),
        ));
    }
    let mut c = CheckResult::new("forward_invariance", INVARIANCE_CLAIM);
    c.tolerance = cfg.threshold;
    if let Some(bound) = stage_excursion_bound(sys, cfg.dt) {
        c.metrics.push(("stage_excursion_bound", bound));
        if 2.0 * bound > sys.tol_s() {
            c.note = Some(format!(
                "tol_S = {:e} cannot contain the RK4 stage excursion {:e} at dt = {:e}",
                sys.tol_s(),
                bound,
                cfg.dt
            ));
            return Ok(c);
        }
    }
    if cfg.n_points == 0 {
        c.verdict = Verdict::Pass;
        c.worst_margin = cfg.threshold;
        c.note = Some("no points sampled".into());
        return Ok(c);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let q = sys.q();
    let icfg = IntegratorConfig::rk4(cfg.dt, cfg.horizon);
    let mut max_sigma = 0.0_f64;
    let mut max_input_effect = 0.0_f64;
    let mut aborted = 0usize;
    for _ in 0..cfg.n_points {
        let x0 = random::random_point_on_level(&mut rng, q, 0.0);
        let u1 = random::gaussian_vector(&mut rng, sys.m()) * cfg.max_amplitude;
        let u2 = random::gaussian_vector(&mut rng, sys.m()) * cfg.max_amplitude;
        let f1 = sys.vector_field(&x0, 0.0, &u1, &[])?;
        let f2 = sys.vector_field(&x0, 0.0, &u2, &[])?;
        let effect = (&f1 - &f2).norm() / (f1.norm() + f64::MIN_POSITIVE);
        max_input_effect = max_input_effect.max(effect);

        let signal = random::random_sines(&mut rng, sys.m(), 3, cfg.max_amplitude);
        let cl = ClosedLoopSystem::open_loop(sys.clone(), signal)?;
        let state0 = cl.initial_state(&x0)?;
        let traj = match sim::integrate(&cl, &state0, &icfg) {
            Ok((traj, _)) => traj,
            Err(abort) => {
                aborted += 1;
                abort.trajectory
            }
        };
        for s in traj.samples() {
            c.usable += 1;
            if s.sigma.abs() > max_sigma || s.sigma.is_nan() {
                max_sigma = s.sigma.abs();
            }
            c.track(cfg.threshold - s.sigma.abs(), s.t, &s.x);
        }
    }
    c.metrics.push(("max_abs_sigma", max_sigma));
    c.metrics.push(("max_input_effect", max_input_effect));
    c.metrics.push(("aborted_runs", aborted as f64));
    let uncontrollable = max_input_effect == 0.0;
    if !uncontrollable {
        c.note = Some("vector field on S depends on the input".into());
    }
    c.verdict = if aborted == 0 && uncontrollable && max_sigma <= cfg.threshold {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(c)
}

/// Data for the finite-time impact bound with a static load
/// `u = -K(y) y`, `K > kappa1 I`, and a square invertible `Bbar`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpactBoundData {
    l: f64,
    kappa1: f64,
    q: QuadraticForm,
    bbar: DMatrix<f64>,
    d_min: f64,
}

impl ImpactBoundData {
    /// `l` must satisfy `0 < l < 1/sqrt(lambda_max(Q))`, so that the ball of
    /// radius `l` lies strictly inside `S`.
    pub fn new(l: f64, kappa1: f64, q: QuadraticForm, bbar: DMatrix<f64>) -> Result<Self> {
        let l_max = 1.0 / q.lambda_max().sqrt();
        if !(l > 0.0 && l < l_max) {
            return Err(SphsError::InvalidParameter {
                name: "l",
                value: l,
                reason: "need 0 < l < 1/sqrt(lambda_max(Q))",
            });
        }
        if !(kappa1 > 0.0 && kappa1.is_finite()) {
            return Err(SphsError::InvalidParameter {
                name: "kappa1",
                value: kappa1,
                reason: "must be positive",
            });
        }
        let n = q.dim();
        if bbar.shape() != (n, n) {
            return Err(SphsError::NotSquare {
                what: "Bbar",
                rows: bbar.nrows(),
                cols: bbar.ncols(),
            });
        }
        let sv = bbar.clone().svd(false, false).singular_values;
        if !(sv.min() > 1e-12 * sv.max()) {
            return Err(SphsError::SingularInputMatrix);
        }
        let qb = q.matrix() * &bbar;
        let (lam, _) = linalg::symmetric_eigen_bounds(&(&qb * qb.transpose()));
        let d_min = kappa1 * l * l * lam;
        Ok(Self {
            l,
            kappa1,
            q,
            bbar,
            d_min,
        })
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    /// `kappa1 l^2 lambda_min(Q Bbar Bbar^T Q)`.
    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    /// Whether `x` lies in the region `|x| >= l`, `sigma(x) != 0`.
    pub fn in_region(&self, x: &DVector<f64>, tol_s: f64) -> bool {
        x.norm() >= self.l && self.q.sigma_unchecked(x).0.abs() > tol_s
    }
}

/// Returns `(d_min, t_bound)` with `t_bound = H(x0)/d_min`.
pub fn compute_impact_bound(x0: &DVector<f64>, data: &ImpactBoundData) -> Result<(f64, f64)> {
    let s = data.q.sigma(x0)?;
    if x0.norm() < data.l {
        return Err(SphsError::Precondition(format!(
            "|x0| = {} is below l = {}",
            x0.norm(),
            data.l
        )));
    }
    if s.0 == 0.0 {
        return Err(SphsError::Precondition("x0 lies on S".into()));
    }
    Ok((data.d_min, s.hamiltonian() / data.d_min))
}

/// Compares the simulated first impact time with the bound. Runs that
/// leave `|x| >= l` before impact are outside the bound's hypotheses and
/// give an inconclusive verdict, as do runs without impact.
pub fn check_impact_bound(traj: &Trajectory, log: &EventLog, data: &ImpactBoundData) -> Result<CheckResult> {
    let mut c = CheckResult::new("impact_bound", IMPACT_CLAIM);
    let first = traj
        .first()
        .ok_or_else(|| SphsError::Precondition("empty trajectory".into()))?;
    let (d_min, t_bound) = compute_impact_bound(&first.x, data)?;
    c.tolerance = t_bound;
    c.metrics.push(("d_min", d_min));
    c.metrics.push(("t_bound", t_bound));
    let Some(t_imp) = sim::first_impact_time(traj, log) else {
        c.note = Some("no impact within the horizon".into());
        return Ok(c);
    };
    c.metrics.push(("t_impact", t_imp));
    let before: Vec<&Sample> = traj.samples().iter().filter(|s| s.t < t_imp).collect();
    c.usable = before.len();
    if before.iter().any(|s| s.x.norm() < data.l) {
        c.excluded = 1;
        c.note = Some("trajectory left |x| >= l before impact".into());
        return Ok(c);
    }
    c.track(t_bound - t_imp, t_imp, &first.x);
    c.verdict = if t_imp <= t_bound {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(c)
}

/// Passes when `|sigma| <= band` over the final `settle_frac` of the run.
pub fn check_convergence_to_s(traj: &Trajectory, band: f64, settle_frac: f64) -> Result<CheckResult> {
    let first = traj
        .first()
        .ok_or_else(|| SphsError::Precondition("empty trajectory".into()))?;
    if first.x.iter().all(|v| *v == 0.0) {
        return Err(SphsError::Precondition(
            "convergence to S is only claimed for x0 != 0".into(),
        ));
    }
    if !(settle_frac > 0.0 && settle_frac <= 1.0) {
        return Err(SphsError::InvalidParameter {
            name: "settle_frac",
            value: settle_frac,
            reason: "must lie in (0, 1]",
        });
    }
    let mut c = CheckResult::new("convergence_to_s", CONVERGENCE_CLAIM);
    c.tolerance = band;
    let t0 = first.t;
    let t1 = traj.last().map_or(t0, |s| s.t);
    let start = t1 - settle_frac * (t1 - t0);
    let mut max_sigma = 0.0_f64;
    for s in traj.step_samples().filter(|s| s.t >= start) {
        c.usable += 1;
        max_sigma = max_sigma.max(s.sigma.abs());
        c.track(band - s.sigma.abs(), s.t, &s.x);
    }
    c.metrics.push(("max_abs_sigma", max_sigma));
    c.metrics.push(("window_start", start));
    c.verdict = if c.usable == 0 {
        Verdict::Inconclusive
    } else if c.worst_margin >= 0.0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(c)
}

/// How far `|sigma|` strays once the trajectory has entered the layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaExcursion {
    /// First time with `|sigma| <= 1/M` (`tol_S` for the exact variant).
    pub entry_time: Option<f64>,
    /// `integral of |sigma| dt` from entry to the end of the run.
    pub integrated: f64,
    pub peak_after_entry: f64,
    /// Largest rise of `|sigma|` above its running minimum after entry.
    pub detour_peak: f64,
}

pub fn sigma_excursion(traj: &Trajectory) -> SigmaExcursion {
    let band = traj.variant.layer().map_or(traj.tol_s, |m| 1.0 / m);
    let samples = step_samples(traj);
    let Some(k0) = samples.iter().position(|s| s.sigma.abs() <= band) else {
        return SigmaExcursion {
            entry_time: None,
            integrated: 0.0,
            peak_after_entry: 0.0,
            detour_peak: 0.0,
        };
    };
    let post = &samples[k0..];
    let integrated = post
        .windows(2)
        .map(|w| 0.5 * (w[0].sigma.abs() + w[1].sigma.abs()) * (w[1].t - w[0].t))
        .sum();
    let mut running_min = f64::INFINITY;
    let mut detour_peak = 0.0_f64;
    let mut peak = 0.0_f64;
    for s in post {
        let a = s.sigma.abs();
        running_min = running_min.min(a);
        detour_peak = detour_peak.max(a - running_min);
        peak = peak.max(a);
    }
    SigmaExcursion {
        entry_time: Some(post[0].t),
        integrated,
        peak_after_entry: peak,
        detour_peak,
    }
}

/// Phase tracking over the final 10% of the run: the mean wrapped phase
/// error must be within `band_phase` and `|sigma|` within `band_sigma`.
/// The reported margin is the smaller of the two margins, each relative to
/// its band. Excursion metrics are attached.
pub fn check_phase_tracking(
    traj: &Trajectory,
    phi_ref: f64,
    band_phase: f64,
    band_sigma: f64,
) -> Result<CheckResult> {
    if traj.n != 2 {
        return Err(SphsError::DimensionMismatch {
            what: "phase tracking plant",
            expected: 2,
            found: traj.n,
        });
    }
    let mut c = CheckResult::new("phase_tracking", PHASE_CLAIM);
    c.tolerance = band_phase;
    let samples = step_samples(traj);
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(SphsError::Precondition("empty trajectory".into()));
    };
    let start = last.t - 0.1 * (last.t - first.t);
    let window: Vec<&&Sample> = samples.iter().filter(|s| s.t >= start).collect();
    let mut err_sum = 0.0;
    let mut max_sigma = 0.0_f64;
    for s in &window {
        err_sum += crate::interconnect::wrap_phase(s.x[1].atan2(s.x[0]) - phi_ref).abs();
        max_sigma = max_sigma.max(s.sigma.abs());
    }
    c.usable = window.len();
    let mean_err = err_sum / window.len() as f64;
    let margin = ((band_phase - mean_err) / band_phase).min((band_sigma - max_sigma) / band_sigma);
    c.track(margin, last.t, &last.x);
    let ex = sigma_excursion(traj);
    c.metrics = vec![
        ("mean_phase_error", mean_err),
        ("final_phase_error", crate::interconnect::wrap_phase(last.x[1].atan2(last.x[0]) - phi_ref)),
        ("max_abs_sigma_final_window", max_sigma),
        ("entry_time", ex.entry_time.unwrap_or(f64::NAN)),
        ("sigma_excursion", ex.integrated),
        ("peak_after_entry", ex.peak_after_entry),
        ("detour_peak", ex.detour_peak),
    ];
    c.verdict = if mean_err <= band_phase && max_sigma <= band_sigma {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(c)
}

/// The integrated post-entry excursion decreases strictly as the swept
/// parameter increases. Takes `(parameter, excursion)` pairs in any order.
pub fn check_excursion_trend(points: &[(f64, f64)]) -> CheckResult {
    let mut c = CheckResult::new("excursion_trend", TREND_CLAIM);
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in pts.windows(2) {
        c.usable += 1;
        let margin = if w[0].1 > 0.0 { (w[0].1 - w[1].1) / w[0].1 } else { w[0].1 - w[1].1 };
        c.track(margin, w[1].0, &DVector::from_vec(vec![w[1].0, w[1].1]));
    }
    for (k, (_, e)) in pts.iter().enumerate().take(8) {
        const KEYS: [&str; 8] = [
            "excursion_0", "excursion_1", "excursion_2", "excursion_3",
            "excursion_4", "excursion_5", "excursion_6", "excursion_7",
        ];
        c.metrics.push((KEYS[k], *e));
    }
    let distinct = pts.windows(2).all(|w| w[1].0 > w[0].0);
    c.verdict = if c.usable == 0 || !distinct {
        c.note = Some("need at least two distinct parameter values".into());
        Verdict::Inconclusive
    } else if c.worst_margin > 0.0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    c
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Inner and outer branches of `H_sat` and `H_lin` agree at
/// `|sigma| = 1/M` for every `M` given.
pub fn check_storage_continuity(ms: &[f64], rel_tol: f64) -> CheckResult {
    let mut c = CheckResult::new("storage_continuity", CONTINUITY_CLAIM);
    c.tolerance = rel_tol;
    let mut worst = 0.0_f64;
    for &m in ms {
        let b = 1.0 / m;
        for sigma in [b, -b] {
            let d_sat = rel_diff(
                branches::storage_sat_outer(sigma, m),
                branches::storage_sat_inner(sigma, m),
            );
            let d_lin = rel_diff(
                branches::storage_lin_outer(sigma, m),
                branches::storage_lin_inner(sigma, m),
            );
            let d = d_sat.max(d_lin);
            worst = worst.max(d);
            c.usable += 1;
            c.track(rel_tol - d, m, &DVector::from_element(1, sigma));
        }
    }
    c.metrics.push(("max_rel_gap", worst));
    c.verdict = if c.usable == 0 {
        Verdict::Inconclusive
    } else if worst <= rel_tol {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    c
}

/// `|H_lin|` on the layer boundary decreases strictly along the increasing
/// sequence `ms`.
pub fn check_storage_limit(ms: &[f64]) -> CheckResult {
    let mut c = CheckResult::new("storage_limit", LIMIT_CLAIM);
    let values: Vec<f64> = ms
        .iter()
        .map(|&m| branches::storage_lin_outer(1.0 / m, m).abs())
        .collect();
    for (k, w) in values.windows(2).enumerate() {
        c.usable += 1;
        c.track(w[0] - w[1], ms[k + 1], &DVector::from_element(1, 1.0 / ms[k + 1]));
    }
    if let (Some(first), Some(last)) = (values.first(), values.last()) {
        c.metrics.push(("abs_h_lin_boundary_first", *first));
        c.metrics.push(("abs_h_lin_boundary_last", *last));
    }
    let increasing_m = ms.windows(2).all(|w| w[1] > w[0]);
    c.verdict = if !increasing_m || c.usable == 0 {
        c.note = Some("need at least two increasing values of M".into());
        Verdict::Inconclusive
    } else if c.worst_margin > 0.0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    c
}
