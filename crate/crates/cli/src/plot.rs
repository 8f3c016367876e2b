//! Plot data: phase portraits and `x1` time series as CSV.
//!
//! `phase.csv` has columns `curve,x1,x2`. Curve `trajectory` holds the
//! simulated states; `S` holds the level set `sigma = 0` and
//! `boundary_outer` / `boundary_inner` the shell `|sigma| = 1/M`, each
//! sampled at [`CURVE_POINTS`] angles. The inner shell is omitted when
//! `-1/M` is below the minimum `-1/2` of `sigma`. Curves are only written
//! for two-dimensional plants.

use std::f64::consts::TAU;
use std::io::{self, Write};

use nalgebra::DVector;
use sphs_core::sim::Trajectory;
use sphs_core::system::QuadraticForm;

pub const CURVE_POINTS: usize = 720;

/// Points of `{sigma = level}` on `count` equally spaced rays.
pub fn level_curve(q: &QuadraticForm, level: f64, count: usize) -> Vec<DVector<f64>> {
    (0..count)
        .filter_map(|k| {
            let th = TAU * k as f64 / count as f64;
            q.scale_to_level(&DVector::from_vec(vec![th.cos(), th.sin()]), level).ok()
        })
        .collect()
}

pub fn write_phase<W: Write>(w: &mut W, traj: &Trajectory, q: &QuadraticForm) -> io::Result<()> {
    writeln!(w, "curve,x1,x2")?;
    for s in traj.samples() {
        writeln!(w, "trajectory,{},{}", s.x[0], s.x[1])?;
    }
    let mut curves = vec![("S", 0.0)];
    if let Some(m) = traj.variant.layer() {
        curves.push(("boundary_outer", 1.0 / m));
        if 1.0 / m < 0.5 {
            curves.push(("boundary_inner", -1.0 / m));
        }
    }
    for (name, level) in curves {
        for p in level_curve(q, level, CURVE_POINTS) {
            writeln!(w, "{name},{},{}", p[0], p[1])?;
        }
    }
    Ok(())
}

pub fn write_timeseries<W: Write>(w: &mut W, traj: &Trajectory) -> io::Result<()> {
    writeln!(w, "t,x1")?;
    for s in traj.samples() {
        writeln!(w, "{},{}", s.t, s.x[0])?;
    }
    Ok(())
}
