//! Scenario files.
//!
//! A scenario is a TOML document. Top-level keys come first, then the
//! `[plant]`, `[plant.jbar]`, `[load]`, `[integrator]`, `[audit]` and
//! optional `[sweep]` tables. See `scenarios/` for complete examples and the
//! README for the full grammar.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sphs_core::interconnect::{
    realize_tf, ClosedLoopSystem, InputSignal, Load, PhasePIController, SineComponent, StaticLoad,
};
use sphs_core::linalg::rotation_generator;
use sphs_core::sim::IntegratorConfig;
use sphs_core::system::{QuadraticForm, SingularPHSystem, Variant};

use crate::error::CliError;

pub type Matrix = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Seeds randomly drawn initial states; recorded in the run manifest.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub initial_states: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_initial_states: Option<RandomStates>,
    pub plant: PlantSpec,
    pub load: LoadSpec,
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub audit: AuditSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

/// `count` extra initial states drawn on level sets `sigma` uniform in
/// `[sigma_min, sigma_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomStates {
    pub count: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub n: usize,
    pub variant: VariantName,
    /// Layer parameter `M`, required for the saturated and linear variants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_s: Option<f64>,
    /// Defaults to the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Matrix>,
    /// A scalar `r` means `r I`.
    #[serde(default = "default_r")]
    pub r: RSpec,
    pub bbar: Matrix,
    pub jbar: JbarSpec,
}

fn default_r() -> RSpec {
    RSpec::Scalar(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    Exact,
    Saturated,
    Linear,
}

impl VariantName {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact" => Some(Self::Exact),
            "saturated" => Some(Self::Saturated),
            "linear" => Some(Self::Linear),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RSpec {
    Scalar(f64),
    Matrix(Matrix),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JbarSpec {
    Skew { matrix: Matrix },
    Rotation { omega0: f64 },
    PhasePi { omega0: f64, kp: f64, ki: f64, phi_ref: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadSpec {
    /// `u = -k y`.
    StaticGain { k: f64 },
    StaticMatrix { k: Matrix, kappa1: f64, kappa2: f64 },
    /// SISO transfer function, coefficients in descending powers of `s`.
    Tf { num: Vec<f64>, den: Vec<f64> },
    OpenLoop { signal: SignalSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Zero,
    Constant { value: Vec<f64> },
    Sines { components: Vec<SineSpec> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineSpec {
    pub amplitude: Vec<f64>,
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Rk4,
    Rk45,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub method: MethodName,
    /// Fixed step for RK4; initial step for RK45.
    pub dt: f64,
    pub t_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    #[serde(default)]
    pub stop_on_impact: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chatter_guard: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Passivity,
    DissipationIdentity,
    ZeroInputMonotone,
    ConvergenceToS,
    PhaseTracking,
    CycleSupply,
    ImpactBound,
    /// Across the sweep: the post-entry sigma excursion shrinks as the swept
    /// parameter grows.
    ExcursionTrend,
}

impl CheckName {
    pub const ALL: [CheckName; 8] = [
        CheckName::Passivity,
        CheckName::DissipationIdentity,
        CheckName::ZeroInputMonotone,
        CheckName::ConvergenceToS,
        CheckName::PhaseTracking,
        CheckName::CycleSupply,
        CheckName::ImpactBound,
        CheckName::ExcursionTrend,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::Passivity => "passivity",
            CheckName::DissipationIdentity => "dissipation_identity",
            CheckName::ZeroInputMonotone => "zero_input_monotone",
            CheckName::ConvergenceToS => "convergence_to_s",
            CheckName::PhaseTracking => "phase_tracking",
            CheckName::CycleSupply => "cycle_supply",
            CheckName::ImpactBound => "impact_bound",
            CheckName::ExcursionTrend => "excursion_trend",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Check selection and thresholds. Unset thresholds take the defaults in
/// [`AuditSpec::DEFAULTS`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    #[serde(default)]
    pub checks: Vec<CheckName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_band: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settle_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_min_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotone_slack: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_band: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_band: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle_closure_tol: Option<f64>,
    /// Radius `l` of the region `|x| >= l` used by the impact bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact_l: Option<f64>,
}

/// Resolved audit thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditThresholds {
    pub convergence_band: f64,
    pub settle_fraction: f64,
    pub identity_rel_tol: f64,
    pub identity_min_fraction: f64,
    pub monotone_slack: f64,
    pub phase_band: f64,
    pub sigma_band: f64,
    pub cycle_closure_tol: f64,
}

impl AuditSpec {
    pub const DEFAULTS: AuditThresholds = AuditThresholds {
        convergence_band: 0.02,
        settle_fraction: 0.5,
        identity_rel_tol: 1e-3,
        identity_min_fraction: 0.99,
        monotone_slack: 10.0,
        phase_band: 0.05,
        sigma_band: 0.02,
        cycle_closure_tol: 1e-3,
    };

    pub fn thresholds(&self) -> AuditThresholds {
        let d = Self::DEFAULTS;
        AuditThresholds {
            convergence_band: self.convergence_band.unwrap_or(d.convergence_band),
            settle_fraction: self.settle_fraction.unwrap_or(d.settle_fraction),
            identity_rel_tol: self.identity_rel_tol.unwrap_or(d.identity_rel_tol),
            identity_min_fraction: self.identity_min_fraction.unwrap_or(d.identity_min_fraction),
            monotone_slack: self.monotone_slack.unwrap_or(d.monotone_slack),
            phase_band: self.phase_band.unwrap_or(d.phase_band),
            sigma_band: self.sigma_band.unwrap_or(d.sigma_band),
            cycle_closure_tol: self.cycle_closure_tol.unwrap_or(d.cycle_closure_tol),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// Replaces `R` by `r I`.
    R,
    /// Replaces the gain of a `static_gain` load.
    K,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::R => "r",
            SweepParam::K => "k",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

/// One simulation of a scenario: a sweep value (if any) and an initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub index: usize,
    pub sweep_value: Option<f64>,
    pub x0: DVector<f64>,
}

/// Parses a scenario document and validates it.
pub fn parse_str(text: &str) -> Result<Scenario, CliError> {
    let de = toml::Deserializer::new(text);
    let mut unknown = Vec::new();
    let scenario: Scenario = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| CliError::Parse(e.to_string()))?;
    if !unknown.is_empty() {
        return Err(CliError::UnknownKeys(unknown));
    }
    scenario.validate()?;
    Ok(scenario)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_str(&text)
}

/// Serializes back to the document format. `parse_str(&to_toml(s))`
/// returns `s`.
pub fn to_toml(s: &Scenario) -> Result<String, CliError> {
    toml::to_string(s).map_err(|e| CliError::Serialize(e.to_string()))
}

fn invalid(field: impl Into<String>, reason: impl fmt::Display) -> CliError {
    CliError::Invalid {
        field: field.into(),
        reason: reason.to_string(),
    }
}

fn matrix(field: &str, rows: &Matrix, shape: Option<(usize, usize)>) -> Result<DMatrix<f64>, CliError> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 {
        return Err(invalid(field, "matrix is empty"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != nc {
            return Err(invalid(
                field,
                format!("row {} has {} entries, expected {nc}", i + 1, row.len()),
            ));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(invalid(field, format!("non-finite entry {v}")));
        }
    }
    if let Some((er, ec)) = shape {
        if (nr, nc) != (er, ec) {
            return Err(invalid(field, format!("shape {nr}x{nc}, expected {er}x{ec}")));
        }
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("value {v} must be positive and finite")))
    }
}

impl Scenario {
    pub fn variant(&self) -> Result<Variant, CliError> {
        let m = self.plant.layer_m;
        let need_m = |v: fn(f64) -> Variant| {
            m.map(v)
                .ok_or_else(|| invalid("plant.layer_m", "required for the saturated and linear variants"))
        };
        let v = match self.plant.variant {
            VariantName::Exact => Variant::Exact,
            VariantName::Saturated => need_m(|m| Variant::Saturated { m })?,
            VariantName::Linear => need_m(|m| Variant::Linear { m })?,
        };
        v.validate().map_err(|e| invalid("plant.layer_m", e))?;
        Ok(v)
    }

    pub fn q(&self) -> Result<QuadraticForm, CliError> {
        let n = self.plant.n;
        match &self.plant.q {
            None => Ok(QuadraticForm::identity(n)),
            Some(rows) => QuadraticForm::new(matrix("plant.q", rows, Some((n, n)))?)
                .map_err(|e| invalid("plant.q", e)),
        }
    }

    pub fn controller(&self) -> Option<PhasePIController> {
        match self.plant.jbar {
            JbarSpec::PhasePi { omega0, kp, ki, phi_ref } => Some(PhasePIController {
                omega0,
                kp,
                ki,
                phi_ref,
            }),
            _ => None,
        }
    }

    /// Sweep values, or a single `None` when there is no sweep.
    pub fn sweep_values(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }

    /// Builds the closed loop for one sweep value.
    pub fn build(&self, sweep_value: Option<f64>) -> Result<ClosedLoopSystem, CliError> {
        let p = &self.plant;
        let n = p.n;
        let q = self.q()?;
        let sweep = self.sweep.as_ref().map(|s| s.parameter).zip(sweep_value);

        let r = match (sweep, &p.r) {
            (Some((SweepParam::R, r)), _) | (_, &RSpec::Scalar(r)) => {
                positive("plant.r", r)?;
                DMatrix::identity(n, n) * r
            }
            (_, RSpec::Matrix(rows)) => matrix("plant.r", rows, Some((n, n)))?,
        };
        let bbar = matrix("plant.bbar", &p.bbar, None)?;
        if bbar.nrows() != n {
            return Err(invalid(
                "plant.bbar",
                format!("has {} rows, expected n = {n}", bbar.nrows()),
            ));
        }
        let m = bbar.ncols();
        let jbar = match &p.jbar {
            JbarSpec::Skew { matrix: rows } => matrix("plant.jbar.matrix", rows, Some((n, n)))?,
            JbarSpec::Rotation { omega0 } | JbarSpec::PhasePi { omega0, .. } => {
                if n != 2 {
                    return Err(invalid("plant.jbar", format!("rotation needs n = 2, got n = {n}")));
                }
                rotation_generator(*omega0)
            }
        };
        let mut builder = SingularPHSystem::builder(q)
            .r(r)
            .jbar(jbar)
            .bbar(bbar)
            .variant(self.variant()?);
        if let Some(t) = p.tol_s {
            builder = builder.tol_s(t);
        }
        let plant = builder.build().map_err(|e| invalid("plant", e))?;

        let load = match &self.load {
            LoadSpec::StaticGain { k } => {
                let k = match sweep {
                    Some((SweepParam::K, k)) => k,
                    _ => *k,
                };
                Load::Static(StaticLoad::scalar(k, m).map_err(|e| invalid("load.k", e))?)
            }
            LoadSpec::StaticMatrix { k, kappa1, kappa2 } => Load::Static(
                StaticLoad::constant(matrix("load.k", k, Some((m, m)))?, *kappa1, *kappa2)
                    .map_err(|e| invalid("load.k", e))?,
            ),
            LoadSpec::Tf { num, den } => {
                Load::Lti(realize_tf(num, den).map_err(|e| invalid("load", e))?)
            }
            LoadSpec::OpenLoop { signal } => Load::OpenLoop(signal_of(signal, m)?),
        };
        ClosedLoopSystem::new(plant, load, self.controller()).map_err(|e| invalid("load", e))
    }

    pub fn integrator_config(&self) -> Result<IntegratorConfig, CliError> {
        let s = &self.integrator;
        let mut cfg = match s.method {
            MethodName::Rk4 => IntegratorConfig::rk4(s.dt, s.t_final),
            MethodName::Rk45 => {
                let mut c = IntegratorConfig::rk45(
                    s.rtol.unwrap_or(1e-9),
                    s.atol.unwrap_or(1e-12),
                    s.dt_max.unwrap_or(1e-2),
                    s.t_final,
                );
                c.dt = s.dt;
                c.event_refine_tol = 1e-10_f64.min(s.dt * 1e-3);
                c
            }
        };
        cfg.stop_on_impact = s.stop_on_impact;
        cfg.chatter_guard = s.chatter_guard;
        cfg.validate().map_err(|e| invalid("integrator", e))?;
        Ok(cfg)
    }

    /// Explicit initial states followed by the seeded random ones.
    pub fn initial_states(&self) -> Result<Vec<DVector<f64>>, CliError> {
        use rand::{Rng, SeedableRng};
        use sphs_core::audit::random::random_point_on_level;

        let n = self.plant.n;
        let mut out = Vec::new();
        for (i, x) in self.initial_states.iter().enumerate() {
            let field = format!("initial_states[{i}]");
            if x.len() != n {
                return Err(invalid(field, format!("has {} entries, expected n = {n}", x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(invalid(field, "non-finite entry"));
            }
            out.push(DVector::from_column_slice(x));
        }
        if let Some(r) = &self.random_initial_states {
            if !(r.sigma_min <= r.sigma_max && r.sigma_min >= -0.5) {
                return Err(invalid(
                    "random_initial_states",
                    "need -0.5 <= sigma_min <= sigma_max",
                ));
            }
            let q = self.q()?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
            for _ in 0..r.count {
                let level = if r.sigma_min == r.sigma_max {
                    r.sigma_min
                } else {
                    rng.random_range(r.sigma_min..r.sigma_max)
                };
                out.push(random_point_on_level(&mut rng, &q, level));
            }
        }
        if out.is_empty() {
            return Err(invalid("initial_states", "no initial states given"));
        }
        Ok(out)
    }

    pub fn runs(&self) -> Result<Vec<RunSpec>, CliError> {
        let states = self.initial_states()?;
        let mut runs = Vec::new();
        for v in self.sweep_values() {
            for x0 in &states {
                runs.push(RunSpec {
                    index: runs.len(),
                    sweep_value: v,
                    x0: x0.clone(),
                });
            }
        }
        Ok(runs)
    }

    /// Checks every invariant that can be checked without simulating.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(invalid(
                "name",
                format!("{:?} must be non-empty and use only [A-Za-z0-9_-]", self.name),
            ));
        }
        if self.plant.n == 0 {
            return Err(invalid("plant.n", "must be at least 1"));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(invalid("sweep.values", "empty"));
            }
            for v in &s.values {
                positive("sweep.values", *v)?;
            }
            if s.parameter == SweepParam::K && !matches!(self.load, LoadSpec::StaticGain { .. }) {
                return Err(invalid("sweep.parameter", "k sweeps need a static_gain load"));
            }
        }
        for v in self.sweep_values() {
            self.build(v)?;
        }
        self.integrator_config()?;
        let states = self.initial_states()?;
        self.validate_audits(&states)
    }

    fn validate_audits(&self, states: &[DVector<f64>]) -> Result<(), CliError> {
        let a = &self.audit;
        for (field, v) in [
            ("audit.convergence_band", a.convergence_band),
            ("audit.identity_rel_tol", a.identity_rel_tol),
            ("audit.monotone_slack", a.monotone_slack),
            ("audit.phase_band", a.phase_band),
            ("audit.sigma_band", a.sigma_band),
            ("audit.cycle_closure_tol", a.cycle_closure_tol),
            ("audit.impact_l", a.impact_l),
        ] {
            if let Some(v) = v {
                positive(field, v)?;
            }
        }
        for (field, v) in [
            ("audit.settle_fraction", a.settle_fraction),
            ("audit.identity_min_fraction", a.identity_min_fraction),
        ] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(invalid(field, format!("value {v} must lie in [0, 1]")));
                }
            }
        }
        for c in &a.checks {
            match c {
                CheckName::PhaseTracking if self.controller().is_none() => {
                    return Err(invalid("audit.checks", "phase_tracking needs a phase_pi jbar"));
                }
                CheckName::ConvergenceToS if states.iter().any(|x| x.iter().all(|v| *v == 0.0)) => {
                    return Err(invalid(
                        "initial_states",
                        "convergence_to_s is undefined from x0 = 0",
                    ));
                }
                CheckName::ImpactBound => {
                    if a.impact_l.is_none() {
                        return Err(invalid("audit.impact_l", "required by impact_bound"));
                    }
                    if !matches!(self.load, LoadSpec::StaticGain { .. } | LoadSpec::StaticMatrix { .. }) {
                        return Err(invalid("audit.checks", "impact_bound needs a static load"));
                    }
                    if self.controller().is_some() {
                        return Err(invalid("audit.checks", "impact_bound needs a constant jbar"));
                    }
                }
                CheckName::ExcursionTrend if self.sweep.is_none() => {
                    return Err(invalid("audit.checks", "excursion_trend needs a [sweep]"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn signal_of(s: &SignalSpec, m: usize) -> Result<InputSignal, CliError> {
    let check_len = |field: &str, v: &[f64]| {
        if v.len() == m {
            Ok(DVector::from_column_slice(v))
        } else {
            Err(invalid(field, format!("has {} entries, expected m = {m}", v.len())))
        }
    };
    Ok(match s {
        SignalSpec::Zero => InputSignal::Zero { m },
        SignalSpec::Constant { value } => InputSignal::Constant(check_len("load.signal.value", value)?),
        SignalSpec::Sines { components } => InputSignal::Sines {
            m,
            components: components
                .iter()
                .map(|c| {
                    Ok(SineComponent {
                        amplitude: check_len("load.signal.components.amplitude", &c.amplitude)?,
                        omega: c.omega,
                        phase: c.phase,
                    })
                })
                .collect::<Result<_, CliError>>()?,
        },
    })
}
