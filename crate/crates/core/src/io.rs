//! CSV encodings shared by the library and the command-line harness.
//! Every float is written with 17 significant digits.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::policy::{PolicyTable, Trajectory};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn header_check<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers()?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::InvalidRecord {
            index: 0,
            reason: format!(
                "header must be `{}`, got `{}`",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(())
}

/// `s,value` rows.
pub fn write_values_csv<W: Write>(values: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "s,value")?;
    for (s, v) in values.iter().enumerate() {
        writeln!(out, "{s},{}", fmt_f64(*v))?;
    }
    Ok(())
}

/// Reads `s,value` rows; every state in `0..n` must appear exactly once.
pub fn read_values_csv<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    header_check(&mut rdr, &["s", "value"])?;
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    let n = rows.len();
    let mut values = vec![f64::NAN; n];
    for (index, (s, v)) in rows.into_iter().enumerate() {
        if s >= n || !values[s].is_nan() {
            return Err(Error::InvalidRecord {
                index,
                reason: format!("state {s} is out of range or repeated"),
            });
        }
        values[s] = v;
    }
    Ok(values)
}

/// `s,a,probability` rows.
pub fn write_policy_csv<W: Write>(policy: &PolicyTable, mut out: W) -> std::io::Result<()> {
    writeln!(out, "s,a,probability")?;
    for (s, row) in policy.probs.iter().enumerate() {
        for (a, p) in row.iter().enumerate() {
            writeln!(out, "{s},{a},{}", fmt_f64(*p))?;
        }
    }
    Ok(())
}

pub fn read_policy_csv<R: Read>(reader: R, n_states: usize, n_actions: usize) -> Result<PolicyTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    header_check(&mut rdr, &["s", "a", "probability"])?;
    let mut probs = vec![vec![f64::NAN; n_actions]; n_states];
    for (index, rec) in rdr.deserialize().enumerate() {
        let (s, a, p): (usize, usize, f64) = rec?;
        if s >= n_states || a >= n_actions {
            return Err(Error::InvalidRecord {
                index,
                reason: format!("({s}, {a}) out of range"),
            });
        }
        probs[s][a] = p;
    }
    if probs.iter().flatten().any(|p| p.is_nan()) {
        return Err(Error::invalid("policy", "missing (s, a) rows"));
    }
    PolicyTable::new(probs)
}

/// `t,s,a,s_next,r,d` rows.
pub fn write_trajectory_csv<W: Write>(trajectory: &Trajectory, mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,s,a,s_next,r,d")?;
    for st in &trajectory.steps {
        writeln!(out, "{},{},{},{},{},{}", st.t, st.s, st.a, st.s_next, fmt_f64(st.r), fmt_f64(st.d))?;
    }
    Ok(())
}
