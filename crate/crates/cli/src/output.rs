//! Report files: a versioned CSV and a JSON summary per suite, each
//! written to a temporary file and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use glab_core::lab::{ExperimentReport, CSV_VERSION};
use glab_core::pde::GridFunction;
use serde::Serialize;

use crate::config::Kind;
use crate::suites::Suite;
use crate::{CliError, SuiteOutcome};

pub const SUMMARY_VERSION: &str = "glab-summary/1";
pub const FIELDS_VERSION: &str = "glab-fields/1";

#[derive(Serialize)]
struct VerdictDoc<'a> {
    name: &'a str,
    pass: bool,
    hard: bool,
    statistic: f64,
    series: &'a [(usize, f64)],
    note: &'a str,
}

#[derive(Serialize)]
struct Summary<'a> {
    format: &'static str,
    csv_format: &'static str,
    kind: &'static str,
    name: &'a str,
    seed: Option<u64>,
    csv: String,
    rows: usize,
    hard_failures: usize,
    pass: bool,
    verdicts: Vec<VerdictDoc<'a>>,
    provenance: BTreeMap<&'a str, &'a str>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let ctx = |what: &str| format!("{what} {}", path.display());
    fs::write(&tmp, bytes).map_err(|e| CliError::io(ctx("writing"), e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(ctx("renaming into"), e))
}

pub fn csv_bytes(report: &ExperimentReport) -> Vec<u8> {
    let mut buf = Vec::new();
    report.write_csv(&mut buf).expect("writing to memory");
    buf
}

fn fields_bytes(snaps: &[GridFunction]) -> Vec<u8> {
    let mut buf = Vec::new();
    writeln!(buf, "# {FIELDS_VERSION}").expect("memory");
    let dim = snaps.first().map_or(1, |s| s.grid.dim());
    let cols = if dim == 1 {
        "x,value,time"
    } else {
        "x,y,value,time"
    };
    writeln!(buf, "{cols}").expect("memory");
    for s in snaps {
        s.write_csv_rows(&mut buf).expect("memory");
    }
    buf
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn write_suite(
    kind: Kind,
    name: &str,
    seed: Option<u64>,
    suite: &Suite,
    out: &Path,
) -> Result<SuiteOutcome, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    let csv: PathBuf = out.join(format!("{name}.csv"));
    let summary_path = out.join(format!("{name}.summary.json"));
    let report = &suite.report;
    write_atomic(&csv, &csv_bytes(report))?;
    for (label, snaps) in &suite.fields {
        write_atomic(
            &out.join(format!("{name}.fields.{}.csv", file_safe(label))),
            &fields_bytes(snaps),
        )?;
    }
    let doc = Summary {
        format: SUMMARY_VERSION,
        csv_format: CSV_VERSION,
        kind: kind.name(),
        name,
        seed,
        csv: format!("{name}.csv"),
        rows: report.rows.len(),
        hard_failures: report.hard_failures(),
        pass: report.hard_failures() == 0,
        verdicts: report
            .verdicts
            .iter()
            .map(|v| VerdictDoc {
                name: &v.name,
                pass: v.pass,
                hard: v.hard,
                statistic: v.statistic,
                series: &v.series,
                note: &v.note,
            })
            .collect(),
        provenance: report
            .provenance
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect(),
    };
    let mut json = serde_json::to_vec_pretty(&doc).expect("summary serializes");
    json.push(b'\n');
    write_atomic(&summary_path, &json)?;
    Ok(SuiteOutcome {
        kind,
        name: name.to_string(),
        seed,
        report: report.clone(),
        csv,
        summary: summary_path,
    })
}
