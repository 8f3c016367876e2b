//! Closed-form mathematics of singular port-Hamiltonian systems.
//!
//! The class is parametrised by a positive definite `Q` through the scalar
//! level function `sigma(x) = (x^T Q x - 1) / 2`, whose zero set `S` is an
//! ellipsoid. The energy is `H = sigma^2 / 2` and the dynamics read
//!
//! ```text
//! xdot = [Jbar(x,t) - sigma(x) R(x,t)] Q x + sigma*(x) Bbar(x) u
//! y    = Bbar(x)^T Q x
//! ```
//!
//! where `sigma*` is one of three "inverses" of `sigma`:
//!
//! * [`Variant::Exact`]: `1/sigma` off `S`, `0` on `S` (infinite jump).
//! * [`Variant::Saturated`]: clipped to `M sign(sigma)` inside the boundary
//!   layer `|sigma| <= 1/M` (finite jump).
//! * [`Variant::Linear`]: `M^2 sigma` inside the layer (continuous).
//!
//! The drift `[Jbar - sigma R] Q x` is shared by all variants; `Jbar` is never
//! multiplied by `sigma * sigma*`.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SphsError};
use crate::linalg;

/// Default half-width of the numerical band standing in for `x in S`.
pub const DEFAULT_TOL_S: f64 = 1e-9;

/// Symmetric positive definite weight `Q` defining the ellipsoid `x^T Q x = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    q: DMatrix<f64>,
    lambda_min: f64,
    lambda_max: f64,
}

impl QuadraticForm {
    /// Validates symmetry and positive definiteness once, via a symmetric
    /// eigendecomposition.
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        linalg::ensure_symmetric("Q", &q)?;
        if q.nrows() == 0 {
            return Err(SphsError::InvalidParameter {
                name: "n",
                value: 0.0,
                reason: "state dimension must be positive",
            });
        }
        let (lambda_min, lambda_max) = linalg::symmetric_eigen_bounds(&q);
        if !(lambda_min > 0.0) {
            return Err(SphsError::NotPositiveDefinite {
                what: "Q",
                lambda_min,
            });
        }
        // Store the exactly symmetric part so that x^T Q x is well defined.
        let q = (&q + q.transpose()) * 0.5;
        Ok(Self {
            q,
            lambda_min,
            lambda_max,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `x^T Q x`.
    pub fn quad(&self, x: &DVector<f64>) -> f64 {
        linalg::quad_form(&self.q, x)
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x
    }

    pub fn sigma(&self, x: &DVector<f64>) -> Result<SigmaLevel> {
        linalg::ensure_len("state", x, self.dim())?;
        Ok(self.sigma_unchecked(x))
    }

    pub(crate) fn sigma_unchecked(&self, x: &DVector<f64>) -> SigmaLevel {
        SigmaLevel(0.5 * (self.quad(x) - 1.0))
    }

    /// Scales a nonzero direction `v` onto the level set `sigma = level`.
    ///
    /// Requires `1 + 2 level > 0`; the level set is empty otherwise.
    pub fn scale_to_level(&self, v: &DVector<f64>, level: f64) -> Result<DVector<f64>> {
        linalg::ensure_len("direction", v, self.dim())?;
        let target = 1.0 + 2.0 * level;
        if !(target > 0.0) {
            return Err(SphsError::InvalidParameter {
                name: "level",
                value: level,
                reason: "level set sigma = level is empty",
            });
        }
        let vqv = self.quad(v);
        if !(vqv > 0.0) {
            return Err(SphsError::Precondition("direction must be nonzero".into()));
        }
        Ok(v * (target / vqv).sqrt())
    }
}

/// Value of `sigma(x) = (x^T Q x - 1) / 2`.
///
/// Negative strictly inside the ellipsoid, positive strictly outside, zero on
/// `S`. All the scalar branch formulas of the model hang off this type.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct SigmaLevel(pub f64);

impl SigmaLevel {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_on_s(self, tol_s: f64) -> bool {
        self.0.abs() <= tol_s
    }

    /// `1/sigma` off the band, `0` inside it.
    pub fn inverse(self, tol_s: f64) -> f64 {
        if self.is_on_s(tol_s) {
            0.0
        } else {
            1.0 / self.0
        }
    }

    /// `1/sigma` outside the layer, `M sign(sigma)` inside it, `0` on `S`.
    pub fn inverse_sat(self, m: f64, tol_s: f64) -> f64 {
        let s = self.0;
        if s.abs() > 1.0 / m {
            1.0 / s
        } else if s.abs() > tol_s {
            m * s.signum()
        } else {
            0.0
        }
    }

    /// `1/sigma` outside the layer, `M^2 sigma` inside it.
    pub fn inverse_lin(self, m: f64) -> f64 {
        let s = self.0;
        if s.abs() > 1.0 / m {
            1.0 / s
        } else {
            m * m * s
        }
    }

    /// `H = sigma^2 / 2`.
    pub fn hamiltonian(self) -> f64 {
        0.5 * self.0 * self.0
    }

    /// Passive storage of the saturated variant; continuous across the
    /// layer boundary and zero exactly on `S`.
    pub fn storage_sat(self, m: f64) -> f64 {
        if self.0.abs() > 1.0 / m {
            branches::storage_sat_outer(self.0, m)
        } else {
            branches::storage_sat_inner(self.0, m)
        }
    }

    /// Storage of the linear variant. Unbounded below near `S`: inside the
    /// tolerance band it returns `f64::NEG_INFINITY` instead of evaluating
    /// `ln 0`.
    pub fn storage_lin(self, m: f64, tol_s: f64) -> f64 {
        let s = self.0;
        if s.abs() > 1.0 / m {
            branches::storage_lin_outer(s, m)
        } else if s.abs() > tol_s {
            branches::storage_lin_inner(s, m)
        } else {
            f64::NEG_INFINITY
        }
    }

    /// `d/dsigma` of the variant storage, used to turn `sigma_dot` into a
    /// storage rate by the chain rule. `None` where the storage is not
    /// differentiable (on `S` for the non-smooth storages).
    pub fn storage_slope(self, variant: Variant, tol_s: f64) -> Option<f64> {
        let s = self.0;
        match variant {
            Variant::Exact => Some(s),
            Variant::Saturated { m } => {
                if s.abs() > 1.0 / m {
                    Some(s)
                } else if s.abs() > tol_s {
                    Some(s.signum() / m)
                } else {
                    None
                }
            }
            Variant::Linear { m } => {
                if s.abs() > 1.0 / m {
                    Some(s)
                } else if s.abs() > tol_s {
                    Some(1.0 / (m * m * s))
                } else {
                    None
                }
            }
        }
    }

    pub fn region(self, variant: Variant, tol_s: f64) -> Region {
        if self.is_on_s(tol_s) {
            return Region::OnS;
        }
        match variant.layer() {
            None => Region::OffS,
            Some(m) if self.0.abs() <= 1.0 / m => Region::InM,
            Some(_) => Region::OutsideM,
        }
    }
}

/// Raw branch formulas of the modified storages, exposed so the continuity
/// of each storage at `|sigma| = 1/M` can be checked branch against branch.
pub mod branches {
    pub fn storage_sat_outer(sigma: f64, m: f64) -> f64 {
        0.5 * sigma * sigma + 1.0 / (2.0 * m * m)
    }

    pub fn storage_sat_inner(sigma: f64, m: f64) -> f64 {
        sigma.abs() / m
    }

    pub fn storage_lin_outer(sigma: f64, m: f64) -> f64 {
        let two_m2 = 2.0 * m * m;
        0.5 * sigma * sigma - (1.0 + two_m2.ln()) / two_m2
    }

    pub fn storage_lin_inner(sigma: f64, m: f64) -> f64 {
        (0.5 * sigma * sigma).ln() / (2.0 * m * m)
    }

    pub fn dissipation_outer(sigma: f64, qrq: f64) -> f64 {
        sigma * sigma * qrq
    }

    pub fn dissipation_sat_inner(sigma: f64, m: f64, qrq: f64) -> f64 {
        sigma.abs() / m * qrq
    }

    pub fn dissipation_lin_inner(m: f64, qrq: f64) -> f64 {
        qrq / (m * m)
    }
}

/// How the singular input gain is regularised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    Exact,
    Saturated { m: f64 },
    Linear { m: f64 },
}

impl Variant {
    /// Boundary-layer parameter `M`, absent for the exact model.
    pub fn layer(self) -> Option<f64> {
        match self {
            Variant::Exact => None,
            Variant::Saturated { m } | Variant::Linear { m } => Some(m),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Exact => "exact",
            Variant::Saturated { .. } => "saturated",
            Variant::Linear { .. } => "linear",
        }
    }

    /// Builds a variant from its name; `m` is ignored for `exact`.
    pub fn from_name(name: &str, m: f64) -> Result<Self> {
        let v = match name {
            "exact" => Variant::Exact,
            "saturated" => Variant::Saturated { m },
            "linear" => Variant::Linear { m },
            _ => return Err(SphsError::Precondition(format!("unknown variant '{name}'"))),
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(self) -> Result<()> {
        if let Some(m) = self.layer() {
            if !(m > 0.0 && m.is_finite()) {
                return Err(SphsError::InvalidParameter {
                    name: "M",
                    value: m,
                    reason: "boundary layer parameter must be positive and finite",
                });
            }
        }
        Ok(())
    }

    /// The variant's inverse `sigma*`.
    pub fn input_gain(self, sigma: SigmaLevel, tol_s: f64) -> f64 {
        match self {
            Variant::Exact => sigma.inverse(tol_s),
            Variant::Saturated { m } => sigma.inverse_sat(m, tol_s),
            Variant::Linear { m } => sigma.inverse_lin(m),
        }
    }

    /// Storage function paired with this variant: `H`, `H_sat` or `H_lin`.
    pub fn storage(self, sigma: SigmaLevel, tol_s: f64) -> f64 {
        match self {
            Variant::Exact => sigma.hamiltonian(),
            Variant::Saturated { m } => sigma.storage_sat(m),
            Variant::Linear { m } => sigma.storage_lin(m, tol_s),
        }
    }

    /// Dissipation rate given `qrq = x^T Q R Q x`.
    pub fn dissipation(self, sigma: SigmaLevel, qrq: f64) -> f64 {
        let s = sigma.0;
        match self {
            Variant::Exact => branches::dissipation_outer(s, qrq),
            Variant::Saturated { m } => {
                if s.abs() > 1.0 / m {
                    branches::dissipation_outer(s, qrq)
                } else {
                    branches::dissipation_sat_inner(s, m, qrq)
                }
            }
            Variant::Linear { m } => {
                if s.abs() > 1.0 / m {
                    branches::dissipation_outer(s, qrq)
                } else {
                    branches::dissipation_lin_inner(m, qrq)
                }
            }
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer() {
            Some(m) => write!(f, "{}(M={})", self.name(), m),
            None => f.write_str(self.name()),
        }
    }
}

/// Where a state sits relative to `S` and the boundary layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    OnS,
    /// Off `S`; used by the exact variant, which has no layer.
    OffS,
    InM,
    OutsideM,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::OnS => "on_s",
            Region::OffS => "off_s",
            Region::InM => "in_m",
            Region::OutsideM => "outside_m",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constancy {
    Constant,
    TimeVarying,
    StateDependent,
}

/// Callback `(x, t, controller_state) -> matrix`.
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>, f64, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// A matrix-valued coefficient of the model, either constant or evaluated on
/// demand.
#[derive(Clone)]
pub enum MatrixField {
    Constant(DMatrix<f64>),
    Function {
        f: MatrixFn,
        constancy: Constancy,
        shape: (usize, usize),
    },
}

impl MatrixField {
    pub fn function<F>(shape: (usize, usize), constancy: Constancy, f: F) -> Self
    where
        F: Fn(&DVector<f64>, f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        MatrixField::Function {
            f: Arc::new(f),
            constancy,
            shape,
        }
    }

    pub fn eval(&self, x: &DVector<f64>, t: f64, ctrl: &[f64]) -> Cow<'_, DMatrix<f64>> {
        match self {
            MatrixField::Constant(m) => Cow::Borrowed(m),
            MatrixField::Function { f, .. } => Cow::Owned(f(x, t, ctrl)),
        }
    }

    pub fn constancy(&self) -> Constancy {
        match self {
            MatrixField::Constant(_) => Constancy::Constant,
            MatrixField::Function { constancy, .. } => *constancy,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixField::Constant(m) => m.shape(),
            MatrixField::Function { shape, .. } => *shape,
        }
    }

    pub fn as_constant(&self) -> Option<&DMatrix<f64>> {
        match self {
            MatrixField::Constant(m) => Some(m),
            MatrixField::Function { .. } => None,
        }
    }
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixField::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            MatrixField::Function {
                constancy, shape, ..
            } => f
                .debug_struct("Function")
                .field("constancy", constancy)
                .field("shape", shape)
                .finish_non_exhaustive(),
        }
    }
}

impl From<DMatrix<f64>> for MatrixField {
    fn from(m: DMatrix<f64>) -> Self {
        MatrixField::Constant(m)
    }
}

/// A member of the singular port-Hamiltonian class together with the chosen
/// regularisation of its input gain. Immutable once built.
#[derive(Clone, Debug)]
pub struct SingularPHSystem {
    q: QuadraticForm,
    r: MatrixField,
    jbar: MatrixField,
    bbar: MatrixField,
    variant: Variant,
    tol_s: f64,
    r_bounds: (f64, f64),
}

/// Builder for [`SingularPHSystem`].
#[derive(Clone, Debug)]
pub struct SystemBuilder {
    q: QuadraticForm,
    r: Option<MatrixField>,
    jbar: Option<MatrixField>,
    bbar: Option<MatrixField>,
    variant: Variant,
    tol_s: f64,
    r_bounds: Option<(f64, f64)>,
}

impl SystemBuilder {
    pub fn r(mut self, r: impl Into<MatrixField>) -> Self {
        self.r = Some(r.into());
        self
    }

    pub fn jbar(mut self, jbar: impl Into<MatrixField>) -> Self {
        self.jbar = Some(jbar.into());
        self
    }

    pub fn bbar(mut self, bbar: impl Into<MatrixField>) -> Self {
        self.bbar = Some(bbar.into());
        self
    }

    pub fn variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn tol_s(mut self, tol_s: f64) -> Self {
        self.tol_s = tol_s;
        self
    }

    /// Declared bounds `eps1 <= eig(R) <= eps2`. Required when `R` is not
    /// constant; derived from the spectrum otherwise.
    pub fn r_bounds(mut self, eps1: f64, eps2: f64) -> Self {
        self.r_bounds = Some((eps1, eps2));
        self
    }

    pub fn build(self) -> Result<SingularPHSystem> {
        let n = self.q.dim();
        let r = self.r.unwrap_or_else(|| DMatrix::identity(n, n).into());
        let jbar = self.jbar.unwrap_or_else(|| DMatrix::zeros(n, n).into());
        let bbar = self
            .bbar
            .ok_or_else(|| SphsError::Precondition("input matrix Bbar is required".into()))?;

        if r.shape() != (n, n) {
            return Err(SphsError::DimensionMismatch {
                what: "R rows",
                expected: n,
                found: r.shape().0,
            });
        }
        if jbar.shape() != (n, n) {
            return Err(SphsError::DimensionMismatch {
                what: "Jbar rows",
                expected: n,
                found: jbar.shape().0,
            });
        }
        if bbar.shape().0 != n {
            return Err(SphsError::DimensionMismatch {
                what: "Bbar rows",
                expected: n,
                found: bbar.shape().0,
            });
        }
        if bbar.shape().1 == 0 {
            return Err(SphsError::InvalidParameter {
                name: "m",
                value: 0.0,
                reason: "input dimension must be positive",
            });
        }
        self.variant.validate()?;
        if !(self.tol_s > 0.0) {
            return Err(SphsError::InvalidParameter {
                name: "tol_s",
                value: self.tol_s,
                reason: "must be positive",
            });
        }
        if let Some(j) = jbar.as_constant() {
            linalg::ensure_skew("Jbar", j)?;
        }

        let r_bounds = match (&r, self.r_bounds) {
            (MatrixField::Constant(rm), bounds) => {
                linalg::ensure_symmetric("R", rm)?;
                let (lo, hi) = linalg::symmetric_eigen_bounds(rm);
                if !(lo > 0.0) {
                    return Err(SphsError::NotPositiveDefinite {
                        what: "R",
                        lambda_min: lo,
                    });
                }
                if let Some((e1, e2)) = bounds {
                    check_r_bounds(e1, e2)?;
                    for v in [lo, hi] {
                        if v < e1 || v > e2 {
                            return Err(SphsError::EigenvalueOutOfBounds {
                                what: "R",
                                value: v,
                                lower: e1,
                                upper: e2,
                            });
                        }
                    }
                    (e1, e2)
                } else {
                    (lo, hi)
                }
            }
            (MatrixField::Function { .. }, Some((e1, e2))) => {
                check_r_bounds(e1, e2)?;
                (e1, e2)
            }
            (MatrixField::Function { .. }, None) => {
                return Err(SphsError::Precondition(
                    "bounds eps1, eps2 must be declared for a non-constant R".into(),
                ))
            }
        };

        Ok(SingularPHSystem {
            q: self.q,
            r,
            jbar,
            bbar,
            variant: self.variant,
            tol_s: self.tol_s,
            r_bounds,
        })
    }
}

fn check_r_bounds(e1: f64, e2: f64) -> Result<()> {
    if !(e1 > 0.0 && e2 >= e1) {
        return Err(SphsError::InvalidParameter {
            name: "eps1",
            value: e1,
            reason: "need 0 < eps1 <= eps2",
        });
    }
    Ok(())
}

impl SingularPHSystem {
    pub fn builder(q: QuadraticForm) -> SystemBuilder {
        SystemBuilder {
            q,
            r: None,
            jbar: None,
            bbar: None,
            variant: Variant::Exact,
            tol_s: DEFAULT_TOL_S,
            r_bounds: None,
        }
    }

    /// State dimension `n`.
    pub fn n(&self) -> usize {
        self.q.dim()
    }

    /// Port dimension `m`.
    pub fn m(&self) -> usize {
        self.bbar.shape().1
    }

    pub fn q(&self) -> &QuadraticForm {
        &self.q
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn tol_s(&self) -> f64 {
        self.tol_s
    }

    pub fn r_bounds(&self) -> (f64, f64) {
        self.r_bounds
    }

    pub fn r_field(&self) -> &MatrixField {
        &self.r
    }

    pub fn jbar_field(&self) -> &MatrixField {
        &self.jbar
    }

    pub fn bbar_field(&self) -> &MatrixField {
        &self.bbar
    }

    /// Same system with a different regularisation of the input gain.
    pub fn with_variant(&self, variant: Variant) -> Result<Self> {
        variant.validate()?;
        Ok(Self {
            variant,
            ..self.clone()
        })
    }

    pub fn with_tol_s(&self, tol_s: f64) -> Result<Self> {
        if !(tol_s > 0.0) {
            return Err(SphsError::InvalidParameter {
                name: "tol_s",
                value: tol_s,
                reason: "must be positive",
            });
        }
        Ok(Self {
            tol_s,
            ..self.clone()
        })
    }

    pub fn sigma(&self, x: &DVector<f64>) -> Result<SigmaLevel> {
        self.q.sigma(x)
    }

    pub fn sigma_inv(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.sigma(x)?.inverse(self.tol_s))
    }

    /// The variant's inverse `sigma*(x)`.
    pub fn input_gain(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.variant.input_gain(self.sigma(x)?, self.tol_s))
    }

    pub fn region(&self, x: &DVector<f64>) -> Result<Region> {
        Ok(self.sigma(x)?.region(self.variant, self.tol_s))
    }

    pub fn hamiltonian(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.sigma(x)?.hamiltonian())
    }

    /// `grad H = sigma(x) Q x`.
    pub fn grad_hamiltonian(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.sigma(x)?;
        Ok(self.q.apply(x) * s.0)
    }

    /// Variant storage: `H`, `H_sat` or `H_lin`.
    pub fn storage(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.variant.storage(self.sigma(x)?, self.tol_s))
    }

    pub fn eval_r(&self, x: &DVector<f64>, t: f64, ctrl: &[f64]) -> Cow<'_, DMatrix<f64>> {
        self.r.eval(x, t, ctrl)
    }

    pub fn eval_jbar(&self, x: &DVector<f64>, t: f64, ctrl: &[f64]) -> Cow<'_, DMatrix<f64>> {
        let j = self.jbar.eval(x, t, ctrl);
        debug_assert!(
            linalg::skew_residual(&j) <= linalg::SKEW_TOL * (1.0 + j.norm()),
            "Jbar is not skew-symmetric"
        );
        j
    }

    pub fn eval_bbar(&self, x: &DVector<f64>, t: f64, ctrl: &[f64]) -> Cow<'_, DMatrix<f64>> {
        self.bbar.eval(x, t, ctrl)
    }

    /// `x^T Q R(x,t) Q x`.
    pub fn qrq(&self, x: &DVector<f64>, t: f64, ctrl: &[f64]) -> f64 {
        let qx = self.q.apply(x);
        linalg::quad_form(&self.eval_r(x, t, ctrl), &qx)
    }

    pub fn dissipation_rate(&self, x: &DVector<f64>, t: f64, ctrl: &[f64]) -> Result<f64> {
        let s = self.sigma(x)?;
        Ok(self.variant.dissipation(s, self.qrq(x, t, ctrl)))
    }

    /// `y = Bbar(x)^T Q x`.
    pub fn output(&self, x: &DVector<f64>, t: f64, ctrl: &[f64]) -> Result<DVector<f64>> {
        linalg::ensure_len("state", x, self.n())?;
        Ok(self.eval_bbar(x, t, ctrl).tr_mul(&self.q.apply(x)))
    }

    /// `[Jbar - sigma R] Q x + sigma* Bbar u` with `Jbar` taken from the
    /// system's own field.
    pub fn vector_field(
        &self,
        x: &DVector<f64>,
        t: f64,
        u: &DVector<f64>,
        ctrl: &[f64],
    ) -> Result<DVector<f64>> {
        let jbar = self.eval_jbar(x, t, ctrl);
        self.vector_field_with_jbar(x, t, u, ctrl, &jbar, None)
    }

    /// Vector field with an externally supplied `Jbar` (e.g. produced by a
    /// phase controller) and an optional override of the `sigma` that enters
    /// the input gain.
    pub fn vector_field_with_jbar(
        &self,
        x: &DVector<f64>,
        t: f64,
        u: &DVector<f64>,
        ctrl: &[f64],
        jbar: &DMatrix<f64>,
        gain_sigma: Option<SigmaLevel>,
    ) -> Result<DVector<f64>> {
        linalg::ensure_len("state", x, self.n())?;
        linalg::ensure_len("input", u, self.m())?;
        if jbar.shape() != (self.n(), self.n()) {
            return Err(SphsError::DimensionMismatch {
                what: "Jbar",
                expected: self.n(),
                found: jbar.nrows(),
            });
        }
        let s = self.q.sigma_unchecked(x);
        let qx = self.q.apply(x);
        let r = self.eval_r(x, t, ctrl);
        let mut dx = jbar * &qx - (&*r * &qx) * s.0;
        let gain = self
            .variant
            .input_gain(gain_sigma.unwrap_or(s), self.tol_s);
        if gain != 0.0 {
            let bbar = self.eval_bbar(x, t, ctrl);
            dx += (&*bbar * u) * gain;
        }
        Ok(dx)
    }

    /// Runtime check of the structural assumptions at one point: `Jbar`
    /// skew and `eig(R)` within the declared bounds. Returns a description of
    /// every violation found.
    pub fn validate_at(&self, x: &DVector<f64>, t: f64, ctrl: &[f64]) -> Vec<String> {
        let mut issues = Vec::new();
        let j = self.jbar.eval(x, t, ctrl);
        let res = linalg::skew_residual(&j);
        if res > linalg::SKEW_TOL {
            issues.push(format!("Jbar not skew at t={t}: |J+J^T| = {res:e}"));
        }
        if self.r.constancy() != Constancy::Constant {
            let r = self.r.eval(x, t, ctrl);
            if linalg::relative_asymmetry(&r) > linalg::SYMMETRY_TOL {
                issues.push(format!("R not symmetric at t={t}"));
            }
            let (lo, hi) = linalg::symmetric_eigen_bounds(&r);
            let (e1, e2) = self.r_bounds;
            if lo < e1 || hi > e2 {
                issues.push(format!(
                    "eig(R) = [{lo}, {hi}] outside [{e1}, {e2}] at t={t}"
                ));
            }
        }
        issues
    }
}
