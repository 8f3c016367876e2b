//! Passive loads, the phase PI controller, and closed-loop assembly.
//!
//! All loads close the loop with negative feedback, `u = -(load response)`.
//! The closed-loop state is laid out as `[x | z | x_i]`: plant state, load
//! state (LTI loads only) and the phase integrator (when a controller is
//! attached).

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Result, SphsError};
use crate::linalg;
use crate::system::{SigmaLevel, SingularPHSystem};

/// Callback `y -> K(y)` for nonlinear static loads.
pub type GainFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
enum Gain {
    Constant(DMatrix<f64>),
    Function(GainFn),
}

/// Static passive load `u = -K(y) y` with `kappa1 I < K(y) < kappa2 I`.
#[derive(Clone)]
pub struct StaticLoad {
    gain: Gain,
    m: usize,
    kappa1: f64,
    kappa2: f64,
}

/// Result of evaluating a static load. A gain outside its declared bounds is
/// reported, not rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadEval {
    pub u: DVector<f64>,
    pub warning: Option<String>,
}

impl StaticLoad {
    pub fn constant(k: DMatrix<f64>, kappa1: f64, kappa2: f64) -> Result<Self> {
        linalg::ensure_symmetric("K", &k)?;
        check_kappa(kappa1, kappa2)?;
        Ok(Self {
            m: k.nrows(),
            gain: Gain::Constant(k),
            kappa1,
            kappa2,
        })
    }

    /// `K = k I_m` with bounds tight around `k`.
    pub fn scalar(k: f64, m: usize) -> Result<Self> {
        if !(k > 0.0) {
            return Err(SphsError::InvalidParameter {
                name: "K",
                value: k,
                reason: "static gain must be positive",
            });
        }
        let slack = 1e-9 * k;
        Self::constant(DMatrix::identity(m, m) * k, k - slack, k + slack)
    }

    pub fn function<F>(m: usize, kappa1: f64, kappa2: f64, k: F) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        check_kappa(kappa1, kappa2)?;
        Ok(Self {
            gain: Gain::Function(Arc::new(k)),
            m,
            kappa1,
            kappa2,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn gain_at(&self, y: &DVector<f64>) -> DMatrix<f64> {
        match &self.gain {
            Gain::Constant(k) => k.clone(),
            Gain::Function(f) => f(y),
        }
    }

    /// `u = -K(y) y`.
    pub fn eval(&self, y: &DVector<f64>) -> Result<LoadEval> {
        linalg::ensure_len("load input y", y, self.m)?;
        let (u, warning) = match &self.gain {
            Gain::Constant(k) => (-(k * y), None),
            Gain::Function(f) => {
                let k = f(y);
                let warning = self.bound_violation(&k);
                (-(&k * y), warning)
            }
        };
        Ok(LoadEval { u, warning })
    }

    /// Describes how `K` violates `kappa1 < eig(K) < kappa2`, if it does.
    pub fn bound_violation(&self, k: &DMatrix<f64>) -> Option<String> {
        if linalg::relative_asymmetry(k) > linalg::SYMMETRY_TOL {
            return Some("K(y) not symmetric".into());
        }
        let (lo, hi) = linalg::symmetric_eigen_bounds(k);
        if lo <= self.kappa1 || hi >= self.kappa2 {
            Some(format!(
                "eig(K) = [{lo}, {hi}] outside ({}, {})",
                self.kappa1, self.kappa2
            ))
        } else {
            None
        }
    }
}

impl fmt::Debug for StaticLoad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("StaticLoad");
        if let Gain::Constant(k) = &self.gain {
            d.field("k", k);
        }
        d.field("m", &self.m)
            .field("kappa1", &self.kappa1)
            .field("kappa2", &self.kappa2)
            .finish()
    }
}

fn check_kappa(kappa1: f64, kappa2: f64) -> Result<()> {
    if !(kappa1 > 0.0 && kappa2 > kappa1) {
        return Err(SphsError::InvalidParameter {
            name: "kappa1",
            value: kappa1,
            reason: "need 0 < kappa1 < kappa2",
        });
    }
    Ok(())
}

/// SISO LTI load in controllable canonical form, built from a transfer
/// function given in descending powers of `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiLoad {
    num: Vec<f64>,
    den: Vec<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    d: f64,
}

/// Controllable canonical realization of `num(s)/den(s)`.
///
/// With `den = s^n + a_1 s^{n-1} + ... + a_n` (after normalisation) the
/// realization is the companion matrix with last row `[-a_n .. -a_1]`,
/// `B = e_n`, and `C` the reversed remainder of `num - D den`.
pub fn realize_tf(num: &[f64], den: &[f64]) -> Result<LtiLoad> {
    if num.is_empty() || den.is_empty() {
        return Err(SphsError::InvalidTransferFunction("empty coefficient list"));
    }
    if num.iter().chain(den).any(|c| !c.is_finite()) {
        return Err(SphsError::InvalidTransferFunction("non-finite coefficient"));
    }
    if den[0] == 0.0 {
        return Err(SphsError::InvalidTransferFunction(
            "leading denominator coefficient is zero",
        ));
    }
    let first_nz = num.iter().position(|&c| c != 0.0).unwrap_or(num.len() - 1);
    let num = &num[first_nz..];
    let n = den.len() - 1;
    if num.len() - 1 > n {
        return Err(SphsError::ImproperTransferFunction {
            num_degree: num.len() - 1,
            den_degree: n,
        });
    }

    let lead = den[0];
    let den_n: Vec<f64> = den.iter().map(|c| c / lead).collect();
    let mut num_n = vec![0.0; n + 1 - num.len()];
    num_n.extend(num.iter().map(|c| c / lead));

    let d = num_n[0];
    let a = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 < n {
            if j == i + 1 {
                1.0
            } else {
                0.0
            }
        } else {
            -den_n[n - j]
        }
    });
    let mut b = DVector::zeros(n);
    if n > 0 {
        b[n - 1] = 1.0;
    }
    let c = DVector::from_fn(n, |j, _| num_n[n - j] - d * den_n[n - j]);

    Ok(LtiLoad {
        num: num_n,
        den: den_n,
        a,
        b,
        c,
        d,
    })
}

impl LtiLoad {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    /// Normalised (monic) denominator.
    pub fn den(&self) -> &[f64] {
        &self.den
    }

    /// Numerator scaled by the same factor, padded to the denominator length.
    pub fn num(&self) -> &[f64] {
        &self.num
    }

    /// `num(s)/den(s)` evaluated directly from the coefficients.
    pub fn transfer(&self, s: Complex<f64>) -> Complex<f64> {
        poly_eval(&self.num, s) / poly_eval(&self.den, s)
    }

    /// `C (sI - A)^{-1} B + D` evaluated from the realization.
    pub fn realization_response(&self, s: Complex<f64>) -> Option<Complex<f64>> {
        let n = self.order();
        if n == 0 {
            return Some(Complex::new(self.d, 0.0));
        }
        let m = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { Complex::new(0.0, 0.0) };
            diag - Complex::new(self.a[(i, j)], 0.0)
        });
        let b = self.b.map(|v| Complex::new(v, 0.0));
        let x = m.lu().solve(&b)?;
        let cx: Complex<f64> = self
            .c
            .iter()
            .zip(x.iter())
            .map(|(&c, &xi)| xi * c)
            .sum();
        Some(cx + self.d)
    }

    /// `zdot = A z + B y`, `u = -(C z + D y)`.
    pub fn step_derivative(&self, z: &DVector<f64>, y: f64) -> Result<(DVector<f64>, f64)> {
        linalg::ensure_len("load state", z, self.order())?;
        let zdot = &self.a * z + &self.b * y;
        let u = -(self.c.dot(z) + self.d * y);
        Ok((zdot, u))
    }

    /// Equilibrium load state under constant input `y`: solves `A z = -B y`.
    pub fn steady_state(&self, y: f64) -> Option<DVector<f64>> {
        if self.order() == 0 {
            return Some(DVector::zeros(0));
        }
        self.a.clone().lu().solve(&(-&self.b * y))
    }
}

fn poly_eval(coeffs: &[f64], s: Complex<f64>) -> Complex<f64> {
    coeffs
        .iter()
        .fold(Complex::new(0.0, 0.0), |acc, &c| acc * s + c)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(angle: f64) -> f64 {
    let w = (angle + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Phase PI control acting through the interconnection matrix:
/// `Jbar = [[0, -w], [w, 0]]` with `w = omega0 + kp e + ki x_i` and
/// `e = phi_ref - arg(x1 + j x2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePIController {
    pub omega0: f64,
    pub kp: f64,
    pub ki: f64,
    pub phi_ref: f64,
}

impl PhasePIController {
    pub fn phase_error(&self, x: &DVector<f64>) -> Result<f64> {
        linalg::ensure_len("phase controller state", x, 2)?;
        if x.norm() < 1e-12 {
            return Err(SphsError::PhaseUndefined);
        }
        Ok(wrap_phase(self.phi_ref - x[1].atan2(x[0])))
    }

    /// Returns `(Jbar, e)`.
    pub fn jbar(&self, x: &DVector<f64>, xi: f64) -> Result<(DMatrix<f64>, f64)> {
        let e = self.phase_error(x)?;
        let w = self.omega0 + self.kp * e + self.ki * xi;
        Ok((linalg::rotation_generator(w), e))
    }
}

/// One sinusoidal component `amplitude * sin(omega t + phase)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SineComponent {
    pub amplitude: DVector<f64>,
    pub omega: f64,
    pub phase: f64,
}

/// Open-loop input `u(t)`.
#[derive(Clone)]
pub enum InputSignal {
    Zero { m: usize },
    Constant(DVector<f64>),
    Sines { m: usize, components: Vec<SineComponent> },
    Custom {
        m: usize,
        f: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    },
}

impl InputSignal {
    pub fn m(&self) -> usize {
        match self {
            InputSignal::Zero { m } | InputSignal::Sines { m, .. } | InputSignal::Custom { m, .. } => *m,
            InputSignal::Constant(v) => v.len(),
        }
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        match self {
            InputSignal::Zero { m } => DVector::zeros(*m),
            InputSignal::Constant(v) => v.clone(),
            InputSignal::Sines { m, components } => {
                let mut u = DVector::zeros(*m);
                for c in components {
                    u += &c.amplitude * (c.omega * t + c.phase).sin();
                }
                u
            }
            InputSignal::Custom { f, .. } => f(t),
        }
    }
}

impl fmt::Debug for InputSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSignal::Zero { m } => f.debug_struct("Zero").field("m", m).finish(),
            InputSignal::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            InputSignal::Sines { m, components } => f
                .debug_struct("Sines")
                .field("m", m)
                .field("components", components)
                .finish(),
            InputSignal::Custom { m, .. } => {
                f.debug_struct("Custom").field("m", m).finish_non_exhaustive()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Load {
    Static(StaticLoad),
    Lti(LtiLoad),
    OpenLoop(InputSignal),
}

impl Load {
    pub fn order(&self) -> usize {
        match self {
            Load::Lti(l) => l.order(),
            _ => 0,
        }
    }
}

/// Freezes the sign of `sigma` used by the input gain while `|sigma|` is
/// below `width`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignHold {
    pub width: f64,
    pub sign: f64,
}

/// Everything computed during one evaluation of the closed loop.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub derivative: DVector<f64>,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub sigma: SigmaLevel,
    /// Phase error, when a phase controller is attached.
    pub phase_error: Option<f64>,
    pub warning: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ClosedLoopSystem {
    plant: SingularPHSystem,
    load: Load,
    controller: Option<PhasePIController>,
}

impl ClosedLoopSystem {
    /// Validates the interconnection dimensions. When a controller is
    /// attached it supplies `Jbar`, replacing the plant's own field.
    pub fn new(
        plant: SingularPHSystem,
        load: Load,
        controller: Option<PhasePIController>,
    ) -> Result<Self> {
        let m = plant.m();
        match &load {
            Load::Static(s) => {
                if s.m() != m {
                    return Err(SphsError::DimensionMismatch {
                        what: "static load",
                        expected: m,
                        found: s.m(),
                    });
                }
            }
            Load::Lti(_) => {
                if m != 1 {
                    return Err(SphsError::DimensionMismatch {
                        what: "LTI load (SISO only)",
                        expected: 1,
                        found: m,
                    });
                }
            }
            Load::OpenLoop(sig) => {
                if sig.m() != m {
                    return Err(SphsError::DimensionMismatch {
                        what: "open-loop input",
                        expected: m,
                        found: sig.m(),
                    });
                }
            }
        }
        if controller.is_some() && plant.n() != 2 {
            return Err(SphsError::DimensionMismatch {
                what: "phase controller plant",
                expected: 2,
                found: plant.n(),
            });
        }
        Ok(Self {
            plant,
            load,
            controller,
        })
    }

    pub fn open_loop(plant: SingularPHSystem, signal: InputSignal) -> Result<Self> {
        Self::new(plant, Load::OpenLoop(signal), None)
    }

    pub fn plant(&self) -> &SingularPHSystem {
        &self.plant
    }

    pub fn load(&self) -> &Load {
        &self.load
    }

    pub fn controller(&self) -> Option<&PhasePIController> {
        self.controller.as_ref()
    }

    pub fn with_plant(&self, plant: SingularPHSystem) -> Result<Self> {
        Self::new(plant, self.load.clone(), self.controller)
    }

    pub fn total_dim(&self) -> usize {
        self.plant.n() + self.load.order() + usize::from(self.controller.is_some())
    }

    pub fn plant_state(&self, state: &DVector<f64>) -> DVector<f64> {
        state.rows(0, self.plant.n()).into_owned()
    }

    fn ctrl_slice<'a>(&self, state: &'a DVector<f64>) -> &'a [f64] {
        let start = self.plant.n() + self.load.order();
        &state.as_slice()[start..]
    }

    /// Assembles `[x0 | 0 | 0]`.
    pub fn initial_state(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::ensure_len("initial plant state", x0, self.plant.n())?;
        let mut s = DVector::zeros(self.total_dim());
        s.rows_mut(0, self.plant.n()).copy_from(x0);
        Ok(s)
    }

    pub fn evaluate(
        &self,
        t: f64,
        state: &DVector<f64>,
        hold: Option<SignHold>,
    ) -> Result<Evaluation> {
        linalg::ensure_len("closed-loop state", state, self.total_dim())?;
        let n = self.plant.n();
        let nz = self.load.order();
        let x = self.plant_state(state);
        let ctrl = self.ctrl_slice(state);
        let y = self.plant.output(&x, t, ctrl)?;

        let mut warning = None;
        let (u, zdot) = match &self.load {
            Load::Static(s) => {
                let ev = s.eval(&y)?;
                warning = ev.warning;
                (ev.u, None)
            }
            Load::Lti(l) => {
                let z = state.rows(n, nz).into_owned();
                let (zdot, u) = l.step_derivative(&z, y[0])?;
                (DVector::from_element(1, u), Some(zdot))
            }
            Load::OpenLoop(sig) => (sig.eval(t), None),
        };

        let sigma = self.plant.q().sigma_unchecked(&x);
        let gain_sigma = hold.and_then(|h| {
            (sigma.0.abs() < h.width).then(|| SigmaLevel(h.sign * sigma.0.abs()))
        });

        let (xdot, phase_error) = match &self.controller {
            Some(c) => {
                let (jbar, e) = c.jbar(&x, ctrl[0])?;
                let xdot = self
                    .plant
                    .vector_field_with_jbar(&x, t, &u, ctrl, &jbar, gain_sigma)?;
                (xdot, Some(e))
            }
            None => {
                let jbar = self.plant.eval_jbar(&x, t, ctrl);
                let xdot = self
                    .plant
                    .vector_field_with_jbar(&x, t, &u, ctrl, &jbar, gain_sigma)?;
                (xdot, None)
            }
        };

        let mut derivative = DVector::zeros(self.total_dim());
        derivative.rows_mut(0, n).copy_from(&xdot);
        if let Some(zdot) = zdot {
            derivative.rows_mut(n, nz).copy_from(&zdot);
        }
        if let Some(e) = phase_error {
            derivative[n + nz] = e;
        }

        Ok(Evaluation {
            derivative,
            y,
            u,
            sigma,
            phase_error,
            warning,
        })
    }

    pub fn derivative(&self, t: f64, state: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(t, state, None)?.derivative)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{QuadraticForm, Variant};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn static_load_examples() {
        let k1 = StaticLoad::scalar(1.0, 1).unwrap();
        assert_eq!(k1.eval(&v(&[0.3])).unwrap().u, v(&[-0.3]));
        let k5 = StaticLoad::scalar(5.0, 1).unwrap();
        assert_eq!(k5.eval(&v(&[-0.2])).unwrap().u, v(&[1.0]));
        assert_eq!(k5.eval(&v(&[0.0])).unwrap().u, v(&[0.0]));
    }

    #[test]
    fn static_load_out_of_bounds_warns_but_evaluates() {
        let load = StaticLoad::function(1, 0.5, 2.0, |y: &DVector<f64>| {
            DMatrix::from_element(1, 1, 1.0 + y[0] * y[0])
        })
        .unwrap();
        let ok = load.eval(&v(&[0.5])).unwrap();
        assert!(ok.warning.is_none());
        let bad = load.eval(&v(&[2.0])).unwrap();
        assert!(bad.warning.is_some());
        assert_eq!(bad.u, v(&[-10.0]));
    }

    #[test]
    fn realize_example_two_load() {
        let l = realize_tf(&[1.0, 3.0], &[1.0, 4.0, 4.0]).unwrap();
        assert_eq!(l.a(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -4.0]));
        assert_eq!(l.b(), &v(&[0.0, 1.0]));
        assert_eq!(l.c(), &v(&[3.0, 1.0]));
        assert_eq!(l.d(), 0.0);
    }

    #[test]
    fn realization_matches_rational_evaluation() {
        let l = realize_tf(&[1.0, 3.0], &[1.0, 4.0, 4.0]).unwrap();
        // Direct rational evaluation of (s+3)/(s^2+4s+4).
        let direct = |s: Complex<f64>| (s + 3.0) / (s * s + s * 4.0 + 4.0);
        for s in [c(0.0, 0.0), c(1.0, 0.0), c(0.0, 2.0)] {
            let r = l.realization_response(s).unwrap();
            assert!((r - direct(s)).norm() < 1e-14);
        }
        assert_relative_eq!(l.realization_response(c(0.0, 0.0)).unwrap().re, 0.75);
        assert_relative_eq!(l.realization_response(c(1.0, 0.0)).unwrap().re, 4.0 / 9.0);
        // K(2j) = (3+2j)/(8j) = 0.25 - 0.375j
        let k2j = l.realization_response(c(0.0, 2.0)).unwrap();
        assert_relative_eq!(k2j.re, 0.25, epsilon = 1e-15);
        assert_relative_eq!(k2j.im, -0.375, epsilon = 1e-15);
    }

    #[test]
    fn realize_pure_gain_and_zero_system() {
        let g = realize_tf(&[1.0], &[1.0]).unwrap();
        assert_eq!(g.order(), 0);
        assert_eq!(g.d(), 1.0);
        let (zdot, u) = g.step_derivative(&DVector::zeros(0), 2.0).unwrap();
        assert_eq!(zdot.len(), 0);
        assert_eq!(u, -2.0);

        let z = realize_tf(&[0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(z.order(), 1);
        assert_eq!(z.d(), 0.0);
        assert_eq!(z.c(), &v(&[0.0]));
        let (_, u) = z.step_derivative(&v(&[5.0]), 3.0).unwrap();
        assert_eq!(u, 0.0);
    }

    #[test]
    fn biproper_transfer_function_has_feedthrough() {
        // (2s + 3)/(s + 1) = 2 + 1/(s+1)
        let l = realize_tf(&[2.0, 3.0], &[1.0, 1.0]).unwrap();
        assert_eq!(l.d(), 2.0);
        assert_eq!(l.c(), &v(&[1.0]));
        let s = c(0.3, 1.7);
        assert!((l.realization_response(s).unwrap() - l.transfer(s)).norm() < 1e-14);
    }

    #[test]
    fn improper_transfer_function_is_rejected() {
        assert!(matches!(
            realize_tf(&[1.0, 0.0, 0.0], &[1.0, 1.0]),
            Err(SphsError::ImproperTransferFunction { .. })
        ));
        assert!(realize_tf(&[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn lti_derivative_examples() {
        let l = realize_tf(&[1.0, 3.0], &[1.0, 4.0, 4.0]).unwrap();
        let (zdot, u) = l.step_derivative(&v(&[0.0, 0.0]), 0.0).unwrap();
        assert_eq!(zdot, v(&[0.0, 0.0]));
        assert_eq!(u, 0.0);
        let (zdot, u) = l.step_derivative(&v(&[0.0, 0.0]), 1.0).unwrap();
        assert_eq!(zdot, v(&[0.0, 1.0]));
        assert_eq!(u, 0.0);

        // A z* = -B: [[0,1],[-4,-4]] z = [0,-1] -> z* = (1/4, 0), u* = -3/4.
        let zs = l.steady_state(1.0).unwrap();
        assert_relative_eq!(zs[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(zs[1], 0.0, epsilon = 1e-15);
        let (zdot, u) = l.step_derivative(&zs, 1.0).unwrap();
        assert!(zdot.norm() < 1e-15);
        assert_relative_eq!(u, -0.75, epsilon = 1e-15);
    }

    #[test]
    fn example_two_load_is_positive_real_on_log_grid() {
        let l = realize_tf(&[1.0, 3.0], &[1.0, 4.0, 4.0]).unwrap();
        for k in 0..=600 {
            let w = 10f64.powf(-3.0 + 6.0 * k as f64 / 600.0);
            assert!(l.realization_response(c(0.0, w)).unwrap().re >= 0.0);
        }
    }

    #[test]
    fn phase_controller_examples() {
        let w0 = 2.0 * PI;
        let ctrl = PhasePIController {
            omega0: w0,
            kp: 50.0,
            ki: 200.0,
            phi_ref: 0.0,
        };
        let (j, e) = ctrl.jbar(&v(&[1.0, 0.0]), 0.0).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(j[(1, 0)], w0);
        assert_eq!(j[(0, 1)], -w0);

        let ctrl = PhasePIController {
            phi_ref: 3.0 * PI / 4.0,
            ..ctrl
        };
        let (j, e) = ctrl.jbar(&v(&[0.0, 1.0]), 0.0).unwrap();
        assert_relative_eq!(e, PI / 4.0, epsilon = 1e-15);
        assert_relative_eq!(j[(1, 0)], w0 + 50.0 * PI / 4.0, epsilon = 1e-12);

        let below = ctrl.phase_error(&v(&[-1.0, -1e-9])).unwrap();
        let above = ctrl.phase_error(&v(&[-1.0, 1e-9])).unwrap();
        assert!((below - above).abs() < 1e-6);

        assert_eq!(
            ctrl.jbar(&v(&[0.0, 0.0]), 0.0).unwrap_err(),
            SphsError::PhaseUndefined
        );
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert_relative_eq!(wrap_phase(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(wrap_phase(-7.0 * PI / 4.0), PI / 4.0, epsilon = 1e-14);
    }

    fn example_one(variant: Variant, k: f64) -> ClosedLoopSystem {
        let plant = SingularPHSystem::builder(QuadraticForm::identity(2))
            .r(DMatrix::identity(2, 2))
            .jbar(linalg::rotation_generator(2.0 * PI))
            .bbar(DMatrix::from_row_slice(2, 1, &[1.0, 0.0]))
            .variant(variant)
            .build()
            .unwrap();
        ClosedLoopSystem::new(plant, Load::Static(StaticLoad::scalar(k, 1).unwrap()), None)
            .unwrap()
    }

    #[test]
    fn closed_loop_on_s_is_input_free() {
        let cl = example_one(Variant::Exact, 1.0);
        let s = v(&[0.6, 0.8]);
        let d = cl.derivative(0.0, &s).unwrap();
        let w = 2.0 * PI;
        assert_relative_eq!(d[0], -w * 0.8, epsilon = 1e-14);
        assert_relative_eq!(d[1], w * 0.6, epsilon = 1e-14);
    }

    #[test]
    fn closed_loop_example_one_composition() {
        let cl = example_one(Variant::Linear { m: 3.0 }, 1.0);
        let x = v(&[2.0, 0.0]);
        let ev = cl.evaluate(0.0, &x, None).unwrap();
        assert_eq!(ev.y, v(&[2.0]));
        assert_eq!(ev.u, v(&[-2.0]));
        // drift (-3, 4 pi) plus (1/1.5) * (1,0) * (-2)
        let expect = cl
            .plant()
            .vector_field(&x, 0.0, &v(&[-2.0]), &[])
            .unwrap();
        assert_eq!(ev.derivative, expect);
        assert_relative_eq!(expect[0], -3.0 - 2.0 / 1.5, epsilon = 1e-14);
        assert_relative_eq!(expect[1], 4.0 * PI, epsilon = 1e-14);
    }

    #[test]
    fn closed_loop_rejects_mismatched_load() {
        let plant = SingularPHSystem::builder(QuadraticForm::identity(2))
            .bbar(DMatrix::identity(2, 2))
            .build()
            .unwrap();
        let lti = realize_tf(&[1.0], &[1.0, 1.0]).unwrap();
        assert!(ClosedLoopSystem::new(plant.clone(), Load::Lti(lti), None).is_err());
        assert!(
            ClosedLoopSystem::new(plant, Load::Static(StaticLoad::scalar(1.0, 1).unwrap()), None)
                .is_err()
        );
    }

    #[test]
    fn closed_loop_with_controller_and_lti_load_layout() {
        let plant = SingularPHSystem::builder(QuadraticForm::identity(2))
            .bbar(DMatrix::from_row_slice(2, 1, &[1.0, 0.0]))
            .variant(Variant::Linear { m: 3.0 })
            .build()
            .unwrap();
        let ctrl = PhasePIController {
            omega0: 2.0 * PI,
            kp: 50.0,
            ki: 200.0,
            phi_ref: 3.0 * PI / 4.0,
        };
        let lti = realize_tf(&[1.0, 3.0], &[1.0, 4.0, 4.0]).unwrap();
        let cl = ClosedLoopSystem::new(plant, Load::Lti(lti), Some(ctrl)).unwrap();
        assert_eq!(cl.total_dim(), 5);
        let s = cl.initial_state(&v(&[1.2, 0.0])).unwrap();
        let ev = cl.evaluate(0.0, &s, None).unwrap();
        let e = ev.phase_error.unwrap();
        assert_relative_eq!(e, 3.0 * PI / 4.0, epsilon = 1e-15);
        assert_eq!(ev.derivative[4], e);
        // zdot = B y = (0, 1.2)
        assert_eq!(ev.derivative[2], 0.0);
        assert_relative_eq!(ev.derivative[3], 1.2, epsilon = 1e-15);
        assert_eq!(ev.u, v(&[0.0]));
    }
}
