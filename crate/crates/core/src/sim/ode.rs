//! Explicit Runge-Kutta steppers and cubic Hermite dense output.

use nalgebra::DVector;

/// Classic fourth-order Runge-Kutta step. `k1` is the derivative at `(t, y)`,
/// passed in so callers can reuse the evaluation made when recording `y`.
pub fn rk4_step<F, E>(f: &mut F, t: f64, y: &DVector<f64>, k1: &DVector<f64>, h: f64) -> Result<DVector<f64>, E>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, E>,
{
    let k2 = f(t + 0.5 * h, &(y + k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(y + &k3 * h))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

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

// b - b* (fifth minus embedded fourth order weights).
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Output of one Dormand-Prince trial step.
pub struct DopriTrial {
    pub y: DVector<f64>,
    /// Derivative at the new point (first-same-as-last stage).
    pub f_new: DVector<f64>,
    pub error: DVector<f64>,
}

pub fn dopri_step<F, E>(f: &mut F, t: f64, y: &DVector<f64>, k1: &DVector<f64>, h: f64) -> Result<DopriTrial, E>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, E>,
{
    let k2 = f(t + C2 * h, &(y + k1 * (h * A21)))?;
    let k3 = f(t + C3 * h, &(y + (k1 * A31 + &k2 * A32) * h))?;
    let k4 = f(t + C4 * h, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h))?;
    let k5 = f(
        t + C5 * h,
        &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
    )?;
    let k6 = f(
        t + h,
        &(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
    )?;
    let y_new = y + (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
    let k7 = f(t + h, &y_new)?;
    let error = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    Ok(DopriTrial {
        y: y_new,
        f_new: k7,
        error,
    })
}

/// Weighted RMS norm of a local error estimate.
pub fn error_norm(err: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, rtol: f64, atol: f64) -> f64 {
    if err.is_empty() {
        return 0.0;
    }
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / err.len() as f64).sqrt()
}

/// Cubic Hermite interpolant on one step.
#[derive(Clone, Copy, Debug)]
pub struct Hermite<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y0: &'a DVector<f64>,
    pub f0: &'a DVector<f64>,
    pub y1: &'a DVector<f64>,
    pub f1: &'a DVector<f64>,
}

impl Hermite<'_> {
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        self.y0 * h00 + self.f0 * (h10 * h) + self.y1 * h01 + self.f1 * (h11 * h)
    }

    /// Locates a sign change of `g` along the interpolant by bisection.
    /// Requires `g(t0)` and `g(t1)` to have opposite signs.
    pub fn bisect<G>(&self, mut g: G, tol: f64) -> (f64, DVector<f64>)
    where
        G: FnMut(&DVector<f64>) -> f64,
    {
        let (mut lo, mut hi) = (self.t0, self.t1);
        let g_lo = g(self.y0);
        let lo_sign = g_lo > 0.0;
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if (g(&self.eval(mid)) > 0.0) == lo_sign {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        (t, self.eval(t))
    }
}
