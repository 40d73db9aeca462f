//! CSV and plain-text file formats.
//!
//! Floats are written in their shortest round-trip form, so a value read
//! back is bit-identical to the one written.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::integrate::{Mesh, Trajectory};
use crate::meshsel::MeshSelection;
use crate::suite::{SweepRow, SweepTable};

/// Shortest decimal that parses back to `x`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    let t = s.trim();
    match t {
        "NaN" | "nan" => Ok(f64::NAN),
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => t
            .parse()
            .map_err(|_| Error::Format(format!("not a number: '{t}'"))),
    }
}

pub fn sweep_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["param", "kappa", "gamma", "sigma"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=dim).map(|i| format!("eta_star_{i}")));
    h.push("status".into());
    h
}

pub fn write_sweep<W: Write>(table: &SweepTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(sweep_header(table.dim))?;
    for r in &table.rows {
        let mut rec = vec![fmt_f64(r.param), fmt_f64(r.kappa), fmt_f64(r.gamma), fmt_f64(r.sigma)];
        rec.extend(r.eta_star.iter().map(|&x| fmt_f64(x)));
        rec.push(r.status.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sweep CSV; `case` and `param` are not stored in the file.
pub fn read_sweep<R: Read>(input: R) -> Result<SweepTable> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let n = header.len();
    if n < 5 || &header[0] != "param" || &header[n - 1] != "status" {
        return Err(Error::Format(format!(
            "unexpected sweep header: {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let dim = n - 5;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != n {
            return Err(Error::Format(format!("row has {} fields, expected {n}", rec.len())));
        }
        rows.push(SweepRow {
            param: parse_f64(&rec[0])?,
            kappa: parse_f64(&rec[1])?,
            gamma: parse_f64(&rec[2])?,
            sigma: parse_f64(&rec[3])?,
            eta_star: (4..4 + dim).map(|i| parse_f64(&rec[i])).collect::<Result<_>>()?,
            status: rec[n - 1].to_string(),
        });
    }
    Ok(SweepTable {
        case: String::new(),
        param: String::new(),
        dim,
        rows,
    })
}

pub fn write_history<W: Write>(sel: &MeshSelection, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "N", "kappa_d", "gamma_d", "sigma_d", "verdict"])?;
    for r in &sel.history {
        let verdict = if r.verdict.pass() {
            "pass".to_string()
        } else {
            format!("fail:{}", r.verdict.failed().join("+"))
        };
        w.write_record([
            r.round.to_string(),
            r.intervals.to_string(),
            fmt_f64(r.kappa_d),
            fmt_f64(r.gamma_d),
            fmt_f64(r.sigma_d),
            verdict,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One node per line.
pub fn write_mesh<W: Write>(mesh: &Mesh, mut out: W) -> Result<()> {
    for &t in mesh.nodes() {
        writeln!(out, "{}", fmt_f64(t))?;
    }
    Ok(())
}

/// Nodes one per line; blank lines and `#` comments are skipped.
pub fn read_mesh(text: &str) -> Result<Mesh> {
    let nodes = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(parse_f64)
        .collect::<Result<Vec<f64>>>()?;
    Mesh::new(nodes)
}

/// `t, y_1..y_m` at the mesh nodes.
pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.dim()).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for (n, &t) in traj.mesh().nodes().iter().enumerate() {
        let mut rec = vec![fmt_f64(t)];
        rec.extend(traj.dense.value(n).iter().map(|&x| fmt_f64(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
