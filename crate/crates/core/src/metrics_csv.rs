//! Per-iteration metrics as CSV.
//!
//! Floats use Rust's shortest round-trip formatting, which never depends on
//! the process locale. Missing MSE values are written as empty fields.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::error::Result;
use crate::trace::IterationRecord;

pub const HEADER: &str = "iter,mean_reproj_err,max_primal_x,max_primal_y,camera_mse,point_mse,wall_ms,comm_floats";

pub fn format_row(r: &IterationRecord) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{}",
        r.iter,
        r.mean_reproj_err,
        r.max_primal_x,
        r.max_primal_y,
        opt(r.camera_mse),
        opt(r.point_mse),
        r.wall_ms,
        r.comm_floats
    )
}

pub fn write_trace(out: &mut impl Write, records: &[IterationRecord]) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for r in records {
        writeln!(out, "{}", format_row(r))?;
    }
    Ok(())
}

pub fn write_trace_file(path: impl AsRef<Path>, records: &[IterationRecord]) -> Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    write_trace(&mut out, records)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iter: usize, mse: Option<f64>) -> IterationRecord {
        IterationRecord {
            iter,
            mean_reproj_err: 0.125,
            max_primal_x: 1e-7,
            max_primal_y: 0.0,
            camera_mse: mse,
            point_mse: mse,
            wall_ms: 3.5,
            comm_floats: 180,
        }
    }

    #[test]
    fn header_and_rows() {
        let mut buf = Vec::new();
        write_trace(&mut buf, &[rec(1, Some(0.5)), rec(2, None)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], HEADER);
        assert_eq!(lines[1], "1,0.125,0.0000001,0,0.5,0.5,3.5,180");
        assert_eq!(lines[2], "2,0.125,0.0000001,0,,,3.5,180");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn values_round_trip() {
        let r = IterationRecord {
            mean_reproj_err: 0.1 + 0.2,
            ..rec(7, Some(1.0 / 3.0))
        };
        let row = format_row(&r);
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), HEADER.split(',').count());
        assert_eq!(fields[1].parse::<f64>().unwrap(), 0.1 + 0.2);
        assert_eq!(fields[4].parse::<f64>().unwrap(), 1.0 / 3.0);
    }
}
