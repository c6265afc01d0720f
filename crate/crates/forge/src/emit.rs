//! Report files: `report.json`, three CSV tables and a PASS/FAIL summary.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use spectral_forge_core::check::{Check, Relation};
use spectral_forge_core::report::{ConstructionReport, GapClass};

use crate::commands::RunReport;

#[derive(Serialize)]
struct LambdaRecord<'a> {
    n: usize,
    value: f64,
    j: Option<i64>,
    k: Option<i64>,
    ratio: Option<f64>,
    required: Option<f64>,
    gap_class: Option<&'static str>,
    source: &'a str,
}

#[derive(Serialize)]
struct ResidualRecord<'a> {
    name: &'a str,
    step: usize,
    p: f64,
    value: f64,
    bound: f64,
}

/// Canonical JSON text of a run report, newline terminated.
pub fn to_json(run: &RunReport) -> String {
    let mut text = serde_json::to_string_pretty(run).expect("reports serialize");
    text.push('\n');
    text
}

pub fn from_json(text: &str) -> serde_json::Result<RunReport> {
    serde_json::from_str(text)
}

/// Hex SHA-256 of the JSON text.
pub fn digest(json: &str) -> String {
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn gap_name(g: GapClass) -> &'static str {
    match g {
        GapClass::One => "one",
        GapClass::A => "a",
        GapClass::Other => "other",
    }
}

fn csv_err(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    }
}

pub fn write_lambdas(report: &ConstructionReport, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if report.lambdas.is_empty() {
        w.write_record(["n", "value", "j", "k", "ratio", "required", "gap_class", "source"]).map_err(csv_err)?;
    }
    for r in &report.lambdas {
        w.serialize(LambdaRecord {
            n: r.n,
            value: r.value,
            j: r.j,
            k: r.k,
            ratio: r.ratio,
            required: r.required,
            gap_class: r.gap_class.map(gap_name),
            source: &r.source,
        })
        .map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_coefficients(report: &ConstructionReport, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if report.coefficients.is_empty() {
        w.write_record(["poly", "freq", "re", "im"]).map_err(csv_err)?;
    }
    for r in &report.coefficients {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_residuals(report: &ConstructionReport, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if report.residuals.is_empty() {
        w.write_record(["name", "step", "p", "value", "bound"]).map_err(csv_err)?;
    }
    for r in &report.residuals {
        w.serialize(ResidualRecord { name: &r.name, step: r.step, p: r.p, value: r.value, bound: r.bound })
            .map_err(csv_err)?;
    }
    w.flush()
}

fn symbol(r: Relation) -> &'static str {
    match r {
        Relation::AtMost => "<=",
        Relation::Below => "<",
        Relation::AtLeast => ">=",
        Relation::Above => ">",
    }
}

pub fn check_line(c: &Check) -> String {
    let tag = if c.pass { "PASS" } else { "FAIL" };
    format!("{tag} {}: {:e} {} {:e}", c.name, c.measured, symbol(c.relation), c.required)
}

/// One line per check followed by a tally.
pub fn summary(run: &RunReport, digest: &str) -> String {
    let mut out = String::new();
    let checks = &run.report.checks;
    for c in checks {
        let _ = writeln!(out, "{}", check_line(c));
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    let _ = writeln!(
        out,
        "{}: {} of {} checks pass ({})",
        run.command,
        checks.len() - failed,
        checks.len(),
        if run.pass { "PASS" } else { "FAIL" }
    );
    let _ = writeln!(out, "report digest sha256:{digest}");
    out
}

/// Writes every artifact into `dir` and returns the paths and the digest.
pub fn emit_report(run: &RunReport, dir: &Path) -> io::Result<(Vec<PathBuf>, String)> {
    fs::create_dir_all(dir)?;
    let json = to_json(run);
    let digest = digest(&json);
    let paths: Vec<PathBuf> =
        ["report.json", "lambdas.csv", "coefficients.csv", "residuals.csv", "summary.txt"].iter().map(|n| dir.join(n)).collect();
    fs::write(&paths[0], &json)?;
    write_lambdas(&run.report, &paths[1])?;
    write_coefficients(&run.report, &paths[2])?;
    write_residuals(&run.report, &paths[3])?;
    fs::write(&paths[4], summary(run, &digest))?;
    Ok((paths, digest))
}
