//! CSV writers for trajectories and event logs.

use std::io::{self, Write};

use super::{EventLog, Trajectory};

pub fn trajectory_header(n: usize, m: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend(["sigma", "region", "H", "Hstorage"].map(String::from));
    cols.extend((1..=m).map(|i| format!("y{i}")));
    cols.extend((1..=m).map(|i| format!("u{i}")));
    cols.extend(["supply", "diss_rate"].map(String::from));
    cols.join(",")
}

/// One row per recorded sample. Floats use the shortest representation that
/// round-trips.
pub fn write_trajectory<W: Write>(w: &mut W, traj: &Trajectory) -> io::Result<()> {
    writeln!(w, "{}", trajectory_header(traj.n, traj.m))?;
    for s in traj.samples() {
        let mut row = String::with_capacity(128);
        push(&mut row, s.t);
        for v in s.x.iter() {
            push(&mut row, *v);
        }
        push(&mut row, s.sigma);
        row.push_str(s.region.as_str());
        row.push(',');
        push(&mut row, s.h);
        push(&mut row, s.storage);
        for v in s.y.iter().chain(s.u.iter()) {
            push(&mut row, *v);
        }
        push(&mut row, s.supply);
        row.push_str(&s.diss_rate.to_string());
        writeln!(w, "{row}")?;
    }
    Ok(())
}

pub fn write_events<W: Write>(w: &mut W, log: &EventLog, n: usize) -> io::Result<()> {
    let mut header = vec!["t".to_string(), "kind".into(), "direction".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    writeln!(w, "{}", header.join(","))?;
    for e in &log.events {
        let mut row = format!("{},{},{}", e.t, e.kind.as_str(), e.direction.as_str());
        for v in e.x.iter() {
            row.push(',');
            row.push_str(&v.to_string());
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

fn push(row: &mut String, v: f64) {
    row.push_str(&v.to_string());
    row.push(',');
}
