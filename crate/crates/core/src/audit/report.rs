use std::fmt::{self, Write as _};
use std::io::{self, Write};

use nalgebra::DVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one check. Margins are signed so that a negative worst margin
/// means the checked inequality was violated.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// The property being checked, in words.
    pub claim: &'static str,
    pub verdict: Verdict,
    pub worst_margin: f64,
    pub t_at_worst: Option<f64>,
    pub x_at_worst: Option<DVector<f64>>,
    pub tolerance: f64,
    pub usable: usize,
    pub excluded: usize,
    pub metrics: Vec<(&'static str, f64)>,
    pub note: Option<String>,
}

impl CheckResult {
    pub(crate) fn new(name: &str, claim: &'static str) -> Self {
        Self {
            name: name.to_string(),
            claim,
            verdict: Verdict::Inconclusive,
            worst_margin: f64::INFINITY,
            t_at_worst: None,
            x_at_worst: None,
            tolerance: 0.0,
            usable: 0,
            excluded: 0,
            metrics: Vec::new(),
            note: None,
        }
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub(crate) fn track(&mut self, margin: f64, t: f64, x: &DVector<f64>) {
        if margin < self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
            self.t_at_worst = Some(t);
            self.x_at_worst = Some(x.clone());
        }
    }
}

/// Collected check results. Every report states the `tol_S` band used to
/// decide membership of `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub tol_s: f64,
    pub checks: Vec<CheckResult>,
}

impl AuditReport {
    pub fn new(tol_s: f64) -> Self {
        Self {
            tol_s,
            checks: Vec::new(),
        }
    }

    pub fn push(&mut self, check: CheckResult) {
        self.checks.push(check);
    }

    /// True unless some check failed. Inconclusive checks do not fail a
    /// report.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "audit report: tol_S = {:e} (samples with |sigma| <= tol_S count as on S and are excluded from off-S checks)",
            self.tol_s
        );
        for c in &self.checks {
            let _ = writeln!(out, "[{}] {}: {}", c.verdict.as_str().to_uppercase(), c.name, c.claim);
            let _ = write!(
                out,
                "    worst_margin={} tolerance={} usable={} excluded={}",
                num(c.worst_margin),
                num(c.tolerance),
                c.usable,
                c.excluded
            );
            if let Some(t) = c.t_at_worst {
                let _ = write!(out, " t_at_worst={}", num(t));
            }
            if let Some(x) = &c.x_at_worst {
                let xs: Vec<String> = x.iter().map(|v| num(*v)).collect();
                let _ = write!(out, " x_at_worst=({})", xs.join(", "));
            }
            out.push('\n');
            if !c.metrics.is_empty() {
                let ms: Vec<String> = c.metrics.iter().map(|(k, v)| format!("{k}={}", num(*v))).collect();
                let _ = writeln!(out, "    {}", ms.join(" "));
            }
            if let Some(n) = &c.note {
                let _ = writeln!(out, "    note: {n}");
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "check,verdict,worst_margin,t_at_worst,tolerance,excluded")?;
        for c in &self.checks {
            let t = c.t_at_worst.map(|t| t.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.name, c.verdict, c.worst_margin, t, c.tolerance, c.excluded
            )?;
        }
        Ok(())
    }
}

/// Plain notation for moderate magnitudes, scientific otherwise.
fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-3..1e6).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut r = AuditReport::new(1e-9);
        let mut c = CheckResult::new("passivity", "storage rate bounded by supply");
        c.verdict = Verdict::Pass;
        c.worst_margin = 0.5;
        c.t_at_worst = Some(1.25);
        c.tolerance = 1e-3;
        c.excluded = 4;
        r.push(c);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "check,verdict,worst_margin,t_at_worst,tolerance,excluded\npassivity,pass,0.5,1.25,0.001,4\n"
        );
        assert!(r.passed());
        assert!(r.to_text().contains("tol_S = 1e-9"));
    }

    #[test]
    fn a_failed_check_fails_the_report() {
        let mut r = AuditReport::new(1e-9);
        let mut c = CheckResult::new("x", "y");
        c.verdict = Verdict::Fail;
        r.push(c);
        r.push(CheckResult::new("z", "inconclusive"));
        assert!(!r.passed());
    }
}
