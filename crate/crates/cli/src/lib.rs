//! Batch front end: parse experiment configs, run the suite, write reports.

// `!(x > 0.0)` is the intended way to reject NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod suites;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use config::{ExperimentConfig, Kind};
use glab_core::lab::ExperimentReport;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("in `{suite}`: {source}")]
    Core {
        suite: &'static str,
        source: glab_core::Error,
    },
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    /// 3 for numerical caps, 2 for everything else that stops a suite.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core { source, .. } if source.is_cap() => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    pub dump_fields: bool,
}

#[derive(Debug)]
pub struct SuiteOutcome {
    pub kind: Kind,
    pub name: String,
    pub seed: Option<u64>,
    pub report: ExperimentReport,
    pub csv: PathBuf,
    pub summary: PathBuf,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.report.hard_failures() == 0
    }

    /// `name [kind]: PASS hard 4/4, trend 2/3 -> path`.
    pub fn verdict_line(&self) -> String {
        let count = |hard: bool| {
            let vs: Vec<_> = self.report.verdicts.iter().filter(|v| v.hard == hard).collect();
            (vs.iter().filter(|v| v.pass).count(), vs.len())
        };
        let (hp, ht) = count(true);
        let (tp, tt) = count(false);
        format!(
            "{} [{}]: {} hard {hp}/{ht}, trend {tp}/{tt} -> {}",
            self.name,
            self.kind.name(),
            if self.passed() { "PASS" } else { "FAIL" },
            self.csv.display()
        )
    }
}

/// Parses, runs and writes one config. Output lands in `opts.out`, else
/// the config's `output`, else `./out`.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<SuiteOutcome, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let name = cfg
        .name
        .clone()
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| cfg.kind.name().to_string());
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    run_config(&cfg, &name, &out, opts)
}

pub fn run_config(
    cfg: &ExperimentConfig,
    name: &str,
    out: &Path,
    opts: &RunOptions,
) -> Result<SuiteOutcome, CliError> {
    let seed = opts.seed.or(cfg.seed);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::io("starting worker pool", io::Error::other(e)))?;
    let suite = pool.install(|| suites::run(cfg, seed, opts.dump_fields))?;
    output::write_suite(cfg.kind, name, seed, &suite, out)
}
