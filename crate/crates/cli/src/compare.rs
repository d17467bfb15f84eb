//! Aggregates training runs: episodes to reach a fraction of the final
//! return, final returns and feasibility, per seed and per arm.

use std::io::Write;
use std::path::{Path, PathBuf};

use rcmdp::io::fmt_f64;

use crate::output::RunDir;
use crate::run::{Summary, METRICS_FILE, SUMMARY_FILE};
use crate::CliError;

pub const REQUIRED_COLUMNS: [&str; 3] = ["k", "robust_return_r", "robust_return_d"];

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub episodes_to_threshold: u64,
    pub final_r: f64,
    pub final_d: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub header: Vec<String>,
    pub seeds: Vec<SeedResult>,
}

/// First episode count at which `series` reaches `fraction` of its last
/// value, read as `last − (1 − fraction)·|last|` so negative returns work.
pub fn episodes_to_threshold(series: &[f64], fraction: f64) -> u64 {
    let Some(&last) = series.last() else { return 0 };
    let threshold = last - (1.0 - fraction) * last.abs();
    series.iter().position(|&x| x >= threshold).map_or(series.len() as u64, |i| i as u64 + 1)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn seed_dirs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if dir.join(METRICS_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Config(format!("{} holds no seed-* runs", dir.display())));
    }
    Ok(dirs)
}

fn read_seed(dir: &Path, fraction: f64) -> Result<(Vec<String>, SeedResult), CliError> {
    let metrics = dir.join(METRICS_FILE);
    let mut rdr = csv::Reader::from_path(&metrics).map_err(|e| CliError::Config(format!("{}: {e}", metrics.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", metrics.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut idx = [0usize; 3];
    for (slot, col) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = header.iter().position(|h| h == col).ok_or_else(|| {
            CliError::Config(format!("schema error: {} has no column `{col}`", metrics.display()))
        })?;
    }
    let (mut r, mut d) = (Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", metrics.display())))?;
        let field = |i: usize| -> Result<f64, CliError> {
            rec.get(i).and_then(|x| x.parse().ok()).ok_or_else(|| {
                CliError::Config(format!("{} row {}: `{}` is not a number", metrics.display(), row + 1, header[i]))
            })
        };
        r.push(field(idx[1])?);
        d.push(field(idx[2])?);
    }
    if r.is_empty() {
        return Err(CliError::Config(format!("{} has no rows", metrics.display())));
    }
    let summary_path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&summary_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", summary_path.display())))?;
    let summary: Summary =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", summary_path.display())))?;
    let final_d = *d.last().expect("non-empty");
    Ok((
        header,
        SeedResult {
            seed: summary.seed,
            episodes_to_threshold: episodes_to_threshold(&r, fraction),
            final_r: *r.last().expect("non-empty"),
            final_d,
            feasible: summary.feasible.unwrap_or(final_d >= summary.beta),
        },
    ))
}

pub fn load_arm(dir: &Path, fraction: f64) -> Result<Arm, CliError> {
    let mut header: Option<Vec<String>> = None;
    let mut seeds = Vec::new();
    for d in seed_dirs(dir)? {
        let (h, result) = read_seed(&d, fraction)?;
        match &header {
            Some(prev) if *prev != h => {
                return Err(CliError::Config(format!(
                    "schema error: {} has columns `{}`, expected `{}`",
                    d.display(),
                    h.join(","),
                    prev.join(",")
                )))
            }
            _ => header = Some(h),
        }
        seeds.push(result);
    }
    Ok(Arm {
        name: dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
        header: header.expect("at least one seed"),
        seeds,
    })
}

/// Loads every arm, checks the schemas agree and writes
/// `comparison.csv` (per seed) and `comparison_summary.csv` (per arm).
pub fn compare(dirs: &[PathBuf], fraction: f64, out: &RunDir) -> Result<Vec<Arm>, CliError> {
    if dirs.len() < 2 {
        return Err(CliError::Config("compare needs at least two run directories".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::Config(format!("threshold fraction {fraction} is not in (0, 1]")));
    }
    let arms = dirs.iter().map(|d| load_arm(d, fraction)).collect::<Result<Vec<_>, _>>()?;
    for arm in &arms[1..] {
        if arm.header != arms[0].header {
            return Err(CliError::Config(format!(
                "schema error: arm `{}` has columns `{}`, arm `{}` has `{}`",
                arm.name,
                arm.header.join(","),
                arms[0].name,
                arms[0].header.join(",")
            )));
        }
    }

    let reference = &arms[0];
    let paired = |s: &SeedResult| {
        reference
            .seeds
            .iter()
            .find(|r| r.seed == s.seed)
            .map(|r| s.episodes_to_threshold as f64 - r.episodes_to_threshold as f64)
    };
    out.write_with("comparison.csv", |w| {
        writeln!(
            w,
            "arm,seed,episodes_to_threshold,episodes_delta,final_return_r,final_return_d,feasible"
        )?;
        for arm in &arms {
            for s in &arm.seeds {
                let delta = paired(s).map_or(String::new(), fmt_f64);
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    arm.name,
                    s.seed,
                    s.episodes_to_threshold,
                    delta,
                    fmt_f64(s.final_r),
                    fmt_f64(s.final_d),
                    s.feasible
                )?;
            }
        }
        Ok(())
    })?;
    out.write_with("comparison_summary.csv", |w| {
        writeln!(
            w,
            "arm,n_seeds,median_episodes_to_threshold,median_episodes_delta,median_final_return_r,median_final_return_d,feasibility_rate"
        )?;
        for arm in &arms {
            let col = |f: &dyn Fn(&SeedResult) -> f64| arm.seeds.iter().map(f).collect::<Vec<_>>();
            let deltas: Vec<f64> = arm.seeds.iter().filter_map(|s| paired(s)).collect();
            let feasible = arm.seeds.iter().filter(|s| s.feasible).count() as f64 / arm.seeds.len() as f64;
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                arm.name,
                arm.seeds.len(),
                fmt_f64(median(&col(&|s| s.episodes_to_threshold as f64))),
                if deltas.is_empty() { String::new() } else { fmt_f64(median(&deltas)) },
                fmt_f64(median(&col(&|s| s.final_r))),
                fmt_f64(median(&col(&|s| s.final_d))),
                fmt_f64(feasible)
            )?;
        }
        Ok(())
    })?;
    Ok(arms)
}
