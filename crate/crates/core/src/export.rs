//! CSV and JSON artifacts. Numbers are written with 17 significant digits so
//! every double round-trips; files are replaced atomically.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::plant::{SimResult, SweepTable};
use crate::stabilizer::GainSchedule;

/// `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// `t,K_11,...,K_mn,min_sv`, one row per schedule entry.
pub fn gains_csv(schedule: &GainSchedule) -> String {
    let (m, n) = schedule.entries.first().map_or((0, 0), |e| e.k.shape());
    let mut out = String::from("t");
    for i in 1..=m {
        for j in 1..=n {
            let _ = write!(out, ",K_{i}{j}");
        }
    }
    out.push_str(",min_sv\n");
    for e in &schedule.entries {
        out.push_str(&fmt_f64(e.t));
        for i in 0..m {
            for j in 0..n {
                out.push(',');
                out.push_str(&fmt_f64(e.k[(i, j)]));
            }
        }
        out.push(',');
        out.push_str(&fmt_f64(e.min_sv));
        out.push('\n');
    }
    out
}

/// `t,x_1..x_n,u_1..u_m`, one row per sample.
pub fn trajectory_csv(result: &SimResult) -> String {
    let (n, m) = result
        .samples
        .first()
        .map_or((0, 0), |s| (s.x.len(), s.u.len()));
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",x_{i}");
    }
    for i in 1..=m {
        let _ = write!(out, ",u_{i}");
    }
    out.push('\n');
    for s in &result.samples {
        out.push_str(&fmt_f64(s.t));
        for v in s.x.iter().chain(s.u.iter()) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// `k,alpha,settling_time,max_gain_norm,status`; missing values are empty.
pub fn sweep_csv(table: &SweepTable) -> String {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut out = String::from("k,alpha,settling_time,max_gain_norm,status\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.k,
            fmt_f64(r.alpha),
            opt(r.settling_time),
            opt(r.max_gain_norm),
            r.status.as_str()
        );
    }
    out
}
