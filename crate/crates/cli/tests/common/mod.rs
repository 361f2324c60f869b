#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

pub fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

pub fn shipped(name: &str) -> PathBuf {
    workspace().join("configs").join(name)
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub struct Run {
    pub output: Output,
    pub elapsed: Duration,
    pub out: PathBuf,
}

impl Run {
    pub fn code(&self) -> i32 {
        self.output.status.code().unwrap_or(-1)
    }

    pub fn stdout(&self) -> String {
        String::from_utf8_lossy(&self.output.stdout).into_owned()
    }

    pub fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.output.stderr).into_owned()
    }

    pub fn csv(&self, name: &str) -> Vec<Row> {
        parse_csv(&std::fs::read_to_string(self.out.join(format!("{name}.csv"))).unwrap())
    }

    pub fn csv_bytes(&self, name: &str) -> Vec<u8> {
        std::fs::read(self.out.join(format!("{name}.csv"))).unwrap()
    }

    pub fn summary(&self, name: &str) -> serde_json::Value {
        let text = std::fs::read_to_string(self.out.join(format!("{name}.summary.json"))).unwrap();
        serde_json::from_str(&text).unwrap()
    }
}

pub fn glab(config: &Path, out: &Path, extra: &[&str]) -> Run {
    let start = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_glab"))
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs");
    Run {
        output,
        elapsed: start.elapsed(),
        out: out.to_path_buf(),
    }
}

#[derive(Debug, Clone)]
pub struct Row {
    pub n: usize,
    pub functional: String,
    pub prelimit: f64,
    pub limit: f64,
    pub gap: f64,
    pub error_bar: f64,
}

pub fn parse_csv(text: &str) -> Vec<Row> {
    let (first, body) = text.split_once('\n').unwrap();
    assert_eq!(first, "# glab-report/1");
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["n", "functional", "prelimit", "limit", "gap", "error_bar"]
    );
    rdr.records()
        .map(|r| {
            let f = r.unwrap();
            let num = |i: usize| f[i].parse::<f64>().unwrap();
            Row {
                n: f[0].parse().unwrap(),
                functional: f[1].to_string(),
                prelimit: num(2),
                limit: num(3),
                gap: num(4),
                error_bar: num(5),
            }
        })
        .collect()
}

/// Hard verdicts of a summary as `(name, pass, statistic)`.
pub fn verdicts(summary: &serde_json::Value) -> Vec<(String, bool, bool, f64)> {
    summary["verdicts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| {
            (
                v["name"].as_str().unwrap().to_string(),
                v["pass"].as_bool().unwrap(),
                v["hard"].as_bool().unwrap(),
                v["statistic"].as_f64().unwrap_or(f64::NAN),
            )
        })
        .collect()
}
