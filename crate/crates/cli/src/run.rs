//! Running scenarios: integration, audits and output files.
//!
//! For scenario `name` and run `i` the output directory receives
//! `name_i_traj.csv`, `name_i_events.csv`, `name_i_audit.csv`,
//! `name_i_timeseries.csv` and, for planar plants, `name_i_phase.csv`.
//! Sweep-level checks go to `name_sweep_audit.csv`. The effective scenario is
//! written to `name_scenario.toml` and `name_manifest.json` records its
//! SHA-256, the seed and the SHA-256 of every output file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use sphs_core::audit::{self, AuditReport, CheckResult, ImpactBoundData, Verdict};
use sphs_core::interconnect::{ClosedLoopSystem, Load};
use sphs_core::sim::{self, export, EventLog, Trajectory, TrajectoryMeta};

use crate::error::CliError;
use crate::plot;
use crate::scenario::{to_toml, AuditThresholds, CheckName, RunSpec, Scenario, VariantName};

/// Command-line overrides applied on top of a scenario file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub variant: Option<VariantName>,
    pub checks: Option<Vec<CheckName>>,
}

pub fn apply_overrides(s: &Scenario, o: &Overrides) -> Result<Scenario, CliError> {
    let mut s = s.clone();
    if let Some(seed) = o.seed {
        s.seed = seed;
    }
    if let Some(dt) = o.dt {
        s.integrator.dt = dt;
    }
    if let Some(t) = o.t_final {
        s.integrator.t_final = t;
    }
    if let Some(v) = o.variant {
        s.plant.variant = v;
    }
    if let Some(c) = &o.checks {
        s.audit.checks = c.clone();
    }
    s.validate()?;
    Ok(s)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub verdict: String,
    pub worst_margin: f64,
}

impl From<&CheckResult> for CheckSummary {
    fn from(c: &CheckResult) -> Self {
        Self {
            name: c.name.clone(),
            verdict: c.verdict.as_str().into(),
            worst_margin: c.worst_margin,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub parameter: &'static str,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub index: usize,
    pub x0: Vec<f64>,
    pub sweep: Option<SweepPoint>,
    pub completed: bool,
    pub abort: Option<String>,
    pub samples: usize,
    pub events: usize,
    /// Integrated `|sigma|` after first entry into the layer.
    pub sigma_excursion: f64,
    pub warnings: Vec<String>,
    pub checks: Vec<CheckSummary>,
    /// Output file name to SHA-256.
    pub files: BTreeMap<String, String>,
    #[serde(skip)]
    pub report: AuditReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub tool_version: &'static str,
    pub seed: u64,
    pub config_sha256: String,
    pub runs: Vec<RunRecord>,
    pub sweep_checks: Vec<CheckSummary>,
    pub files: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub sweep_report: Option<AuditReport>,
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn any_aborted(&self) -> bool {
        self.manifest.runs.iter().any(|r| !r.completed)
    }

    pub fn any_failed(&self) -> bool {
        self.manifest.runs.iter().any(|r| !r.report.passed())
            || self.sweep_report.as_ref().is_some_and(|r| !r.passed())
    }

    /// 0 success, 1 audit failure, 3 integration abort.
    pub fn exit_code(&self) -> u8 {
        if self.any_aborted() {
            3
        } else if self.any_failed() {
            1
        } else {
            0
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<String, CliError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| CliError::Io { path, source })?;
    Ok(sha256_hex(bytes))
}

fn to_bytes<F>(f: F) -> Vec<u8>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

/// Runs every (sweep value, initial state) pair of `s` concurrently and
/// writes all outputs under `out_dir`.
pub fn run_scenario(s: &Scenario, out_dir: &Path) -> Result<RunSummary, CliError> {
    s.validate()?;
    fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let config = to_toml(s)?;
    let config_sha256 = sha256_hex(config.as_bytes());
    let mut files = BTreeMap::new();
    let config_name = format!("{}_scenario.toml", s.name);
    files.insert(config_name.clone(), write_file(out_dir, &config_name, config.as_bytes())?);

    let runs = s.runs()?;
    let records: Vec<RunRecord> = runs
        .par_iter()
        .map(|r| execute(s, r, &config_sha256, out_dir))
        .collect::<Result<_, _>>()?;

    let sweep_report = if s.audit.checks.contains(&CheckName::ExcursionTrend) {
        let mut report = AuditReport::new(records.first().map_or(0.0, |r| r.report.tol_s));
        report.push(excursion_trend(s, &records));
        let name = format!("{}_sweep_audit.csv", s.name);
        let bytes = to_bytes(|w| report.write_csv(w));
        files.insert(name.clone(), write_file(out_dir, &name, &bytes)?);
        Some(report)
    } else {
        None
    };

    let manifest = Manifest {
        scenario: s.name.clone(),
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: s.seed,
        config_sha256,
        sweep_checks: sweep_report
            .as_ref()
            .map(|r| r.checks.iter().map(CheckSummary::from).collect())
            .unwrap_or_default(),
        runs: records,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Serialize(e.to_string()))?;
    write_file(out_dir, &format!("{}_manifest.json", s.name), json.as_bytes())?;
    Ok(RunSummary {
        manifest,
        sweep_report,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Mean excursion over the initial states of each sweep value.
fn excursion_trend(s: &Scenario, records: &[RunRecord]) -> CheckResult {
    let points: Vec<(f64, f64)> = s
        .sweep_values()
        .into_iter()
        .flatten()
        .map(|v| {
            let ex: Vec<f64> = records
                .iter()
                .filter(|r| r.sweep.as_ref().map(|p| p.value) == Some(v))
                .map(|r| r.sigma_excursion)
                .collect();
            (v, ex.iter().sum::<f64>() / ex.len().max(1) as f64)
        })
        .collect();
    audit::check_excursion_trend(&points)
}

fn execute(s: &Scenario, run: &RunSpec, config_sha256: &str, dir: &Path) -> Result<RunRecord, CliError> {
    let cl = s.build(run.sweep_value)?;
    let cfg = s.integrator_config()?;
    let state0 = cl
        .initial_state(&run.x0)
        .map_err(|e| CliError::Invalid {
            field: "initial_states".into(),
            reason: e.to_string(),
        })?;
    let (traj, log, abort) = match sim::integrate(&cl, &state0, &cfg) {
        Ok((t, l)) => (t, l, None),
        Err(a) => (a.trajectory, a.events, Some(a.reason.to_string())),
    };
    let traj = traj.with_meta(TrajectoryMeta {
        scenario: s.name.clone(),
        config_hash: config_sha256.to_string(),
    });
    let report = audit_run(s, &cl, &traj, &log)?;

    let stem = format!("{}_{}", s.name, run.index);
    let mut outputs = vec![
        (format!("{stem}_traj.csv"), to_bytes(|w| export::write_trajectory(w, &traj))),
        (format!("{stem}_events.csv"), to_bytes(|w| export::write_events(w, &log, traj.n))),
        (format!("{stem}_audit.csv"), to_bytes(|w| report.write_csv(w))),
        (format!("{stem}_timeseries.csv"), to_bytes(|w| plot::write_timeseries(w, &traj))),
    ];
    if traj.n == 2 {
        let q = cl.plant().q();
        outputs.push((format!("{stem}_phase.csv"), to_bytes(|w| plot::write_phase(w, &traj, q))));
    }
    let mut files = BTreeMap::new();
    for (name, bytes) in outputs {
        let h = write_file(dir, &name, &bytes)?;
        files.insert(name, h);
    }

    Ok(RunRecord {
        index: run.index,
        x0: run.x0.iter().copied().collect(),
        sweep: s.sweep.as_ref().zip(run.sweep_value).map(|(sw, value)| SweepPoint {
            parameter: sw.parameter.as_str(),
            value,
        }),
        completed: abort.is_none(),
        abort,
        samples: traj.len(),
        events: log.events.len(),
        sigma_excursion: audit::sigma_excursion(&traj).integrated,
        warnings: traj.warnings.clone(),
        checks: report.checks.iter().map(CheckSummary::from).collect(),
        files,
        report,
    })
}

fn audit_run(s: &Scenario, cl: &ClosedLoopSystem, traj: &Trajectory, log: &EventLog) -> Result<AuditReport, CliError> {
    let th: AuditThresholds = s.audit.thresholds();
    let plant = cl.plant();
    let model_err = |check: CheckName| {
        move |e: sphs_core::SphsError| CliError::Invalid {
            field: format!("audit.checks ({check})"),
            reason: e.to_string(),
        }
    };
    let mut report = AuditReport::new(plant.tol_s());
    for &check in &s.audit.checks {
        let c = match check {
            CheckName::Passivity => audit::check_passivity(traj),
            CheckName::DissipationIdentity => {
                audit::check_dissipation_identity(traj, th.identity_rel_tol, th.identity_min_fraction)
            }
            CheckName::ZeroInputMonotone => audit::check_zero_input_monotone(traj, th.monotone_slack),
            CheckName::ConvergenceToS => {
                audit::check_convergence_to_s(traj, th.convergence_band, th.settle_fraction)
                    .map_err(model_err(check))?
            }
            CheckName::PhaseTracking => {
                let phi_ref = cl.controller().map(|c| c.phi_ref).unwrap_or_default();
                audit::check_phase_tracking(traj, phi_ref, th.phase_band, th.sigma_band)
                    .map_err(model_err(check))?
            }
            CheckName::CycleSupply => audit::check_cycle_supply(traj, plant.q(), th.cycle_closure_tol),
            CheckName::ImpactBound => {
                let Load::Static(load) = cl.load() else {
                    unreachable!("validated: impact_bound needs a static load")
                };
                let bbar = plant
                    .bbar_field()
                    .as_constant()
                    .cloned()
                    .expect("scenario input matrices are constant");
                let l = s.audit.impact_l.expect("validated: impact_l is set");
                let data = ImpactBoundData::new(l, load.kappa1(), plant.q().clone(), bbar)
                    .map_err(model_err(check))?;
                audit::check_impact_bound(traj, log, &data).map_err(model_err(check))?
            }
            CheckName::ExcursionTrend => continue,
        };
        report.push(c);
    }
    Ok(report)
}

/// One line per run and per sweep check.
pub fn summary_text(summary: &RunSummary) -> String {
    let mut out = String::new();
    for r in &summary.manifest.runs {
        let sweep = r
            .sweep
            .as_ref()
            .map(|p| format!(" {}={}", p.parameter, p.value))
            .unwrap_or_default();
        let status = match &r.abort {
            None => "completed".to_string(),
            Some(a) => format!("aborted ({a})"),
        };
        out.push_str(&format!("run {}{sweep} x0={:?}: {status}\n", r.index, r.x0));
        for line in r.report.to_text().lines() {
            out.push_str("  ");
            out.push_str(line);
            out.push('\n');
        }
    }
    if let Some(rep) = &summary.sweep_report {
        for c in &rep.checks {
            out.push_str(&format!(
                "sweep [{}] {}: worst_margin={}\n",
                c.verdict.as_str().to_uppercase(),
                c.name,
                c.worst_margin
            ));
        }
    }
    let overall = if summary.any_aborted() {
        "ABORTED"
    } else if summary.any_failed() {
        "FAILED"
    } else if summary
        .manifest
        .runs
        .iter()
        .flat_map(|r| r.report.checks.iter())
        .any(|c| c.verdict == Verdict::Inconclusive)
    {
        "PASSED (some checks inconclusive)"
    } else {
        "PASSED"
    };
    out.push_str(&format!("{}: {overall}\n", summary.manifest.scenario));
    out
}
