//! Experiment config documents (TOML).
//!
//! A document names its `kind`, an optional `seed`, `output` directory and
//! report `name`, plus exactly one parameter table named after the kind.

use std::path::PathBuf;

use glab_core::ambiguity::{AmbiguitySet, DiscreteDistribution, LatticeSpec};
use glab_core::function::{named, named_pair, TestFunction};
use glab_core::gfunc::{GFunction, SigmaInterval};
use glab_core::lab::{ArrayMode, ArraySpec, Scaling};
use glab_core::pde::PdeOptions;
use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Axioms,
    TreeLaws,
    GLaws,
    Pde,
    Clt,
    Fdd,
    Rosenthal,
    IidConditions,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Axioms => "axioms",
            Kind::TreeLaws => "tree-laws",
            Kind::GLaws => "g-laws",
            Kind::Pde => "pde",
            Kind::Clt => "clt",
            Kind::Fdd => "fdd",
            Kind::Rosenthal => "rosenthal",
            Kind::IidConditions => "iid-conditions",
        }
    }

    pub fn randomized(self) -> bool {
        matches!(
            self,
            Kind::Axioms | Kind::TreeLaws | Kind::GLaws | Kind::Rosenthal
        )
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub name: Option<String>,
    pub axioms: Option<AxiomsParams>,
    pub tree_laws: Option<TreeParams>,
    pub g_laws: Option<GLawsParams>,
    pub pde: Option<PdeParams>,
    pub clt: Option<CltParams>,
    pub fdd: Option<FddParams>,
    pub rosenthal: Option<RosenthalParams>,
    pub iid_conditions: Option<IidParams>,
}

/// A probability in `[0, 1]`, rejected at parse time otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probability(pub f64);

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let p = f64::deserialize(d)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(serde::de::Error::custom(format!(
                "probability must lie in [0, 1], got {p}"
            )));
        }
        Ok(Self(p))
    }
}

/// A scalar test-function id known to the function catalogue.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalId(pub String);

impl<'de> Deserialize<'de> for FunctionalId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let id = String::deserialize(d)?;
        if named(&id).is_none() {
            return Err(serde::de::Error::custom(format!("unknown functional `{id}`")));
        }
        Ok(Self(id))
    }
}

impl FunctionalId {
    pub fn function(&self) -> TestFunction {
        named(&self.0).expect("checked at parse time")
    }
}

fn positive<'de, D: Deserializer<'de>>(d: D) -> Result<usize, D::Error> {
    let n = usize::deserialize(d)?;
    if n == 0 {
        return Err(serde::de::Error::custom("must be at least 1"));
    }
    Ok(n)
}

fn schema(path: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Schema {
        path: path.to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Points {
    Scalar(Vec<f64>),
    Vector(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberParams {
    pub points: Points,
    pub probs: Vec<Probability>,
}

/// One ambiguity set. Either `band = [lower, upper]`, `three-point = [v, …]`
/// or explicit `members` on a lattice of the given `step`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct LawParams {
    pub band: Option<[f64; 2]>,
    pub three_point: Option<Vec<f64>>,
    pub step: Option<f64>,
    pub origin: Option<Vec<f64>>,
    pub members: Option<Vec<MemberParams>>,
}

impl LawParams {
    pub fn build(&self, path: &str) -> Result<AmbiguitySet, CliError> {
        let forms = [
            self.band.is_some(),
            self.three_point.is_some(),
            self.members.is_some(),
        ];
        if forms.iter().filter(|f| **f).count() != 1 {
            return Err(schema(
                path,
                "give exactly one of `band`, `three-point` or `members`",
            ));
        }
        if let Some([lo, hi]) = self.band {
            return AmbiguitySet::bernoulli_band(lo, hi).map_err(|e| schema(&format!("{path}.band"), e));
        }
        if let Some(v) = &self.three_point {
            return AmbiguitySet::symmetric_three_point(v)
                .map_err(|e| schema(&format!("{path}.three-point"), e));
        }
        let members = self.members.as_ref().expect("one form present");
        let mut laws = Vec::with_capacity(members.len());
        let mut dim = None;
        for (i, m) in members.iter().enumerate() {
            let at = format!("{path}.members[{i}]");
            let support: Vec<Vec<f64>> = match &m.points {
                Points::Scalar(p) => p.iter().map(|x| vec![*x]).collect(),
                Points::Vector(p) => p.clone(),
            };
            dim.get_or_insert(support.first().map_or(1, Vec::len));
            let probs = m.probs.iter().map(|p| p.0).collect();
            laws.push(DiscreteDistribution::new(support, probs).map_err(|e| schema(&at, e))?);
        }
        let dim = dim.unwrap_or(1);
        let step = self.step.unwrap_or(1.0);
        let lattice = match &self.origin {
            Some(o) => LatticeSpec::new(step, o.clone()),
            None => LatticeSpec::centered(dim, step),
        }
        .map_err(|e| schema(&format!("{path}.step"), e))?;
        AmbiguitySet::new(lattice, laws).map_err(|e| schema(path, e))
    }
}

/// A G-function: `interval = [σ̲², σ̄²]` or `dim` with row-major `theta`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GParams {
    pub interval: Option<[f64; 2]>,
    pub dim: Option<usize>,
    pub theta: Option<Vec<Vec<f64>>>,
}

impl GParams {
    pub fn build(&self, path: &str) -> Result<GFunction, CliError> {
        match (&self.interval, &self.theta) {
            (Some([lo, hi]), None) if self.dim.is_none_or(|d| d == 1) => SigmaInterval::new(*lo, *hi)
                .map(GFunction::from_interval)
                .map_err(|e| schema(&format!("{path}.interval"), e)),
            (None, Some(theta)) => {
                let dim = self.dim.unwrap_or(1);
                GFunction::from_rows(dim, theta).map_err(|e| schema(&format!("{path}.theta"), e))
            }
            _ => Err(schema(path, "give either `interval` or `theta` (with `dim`)")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxiomsParams {
    #[serde(default = "default_sets", deserialize_with = "positive")]
    pub sets: usize,
}

fn default_sets() -> usize {
    1000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanModeParam {
    Free,
    Nonpositive,
    Zero,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TreeParams {
    #[serde(default = "default_trees", deserialize_with = "positive")]
    pub trees: usize,
    #[serde(default = "one", deserialize_with = "positive")]
    pub min_depth: usize,
    #[serde(default = "six", deserialize_with = "positive")]
    pub max_depth: usize,
    #[serde(default = "four", deserialize_with = "positive")]
    pub max_children: usize,
    #[serde(default = "three", deserialize_with = "positive")]
    pub max_members: usize,
    pub mode: Option<MeanModeParam>,
}

fn default_trees() -> usize {
    100
}
fn one() -> usize {
    1
}
fn three() -> usize {
    3
}
fn four() -> usize {
    4
}
fn six() -> usize {
    6
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GLawsParams {
    #[serde(default = "default_sets", deserialize_with = "positive")]
    pub trials: usize,
    pub g: Vec<GParams>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SolverParams {
    pub h: Option<f64>,
    #[serde(default = "default_sigmas")]
    pub margin_sigmas: f64,
    #[serde(default = "yes")]
    pub refine: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            h: None,
            margin_sigmas: default_sigmas(),
            refine: true,
        }
    }
}

fn default_sigmas() -> f64 {
    6.0
}
fn yes() -> bool {
    true
}

impl SolverParams {
    pub fn options(&self, path: &str) -> Result<PdeOptions, CliError> {
        if self.h.is_some_and(|h| !(h > 0.0)) {
            return Err(schema(&format!("{path}.h"), "must be positive"));
        }
        if !(self.margin_sigmas > 0.0) {
            return Err(schema(&format!("{path}.margin-sigmas"), "must be positive"));
        }
        Ok(PdeOptions {
            h: self.h,
            margin_sigmas: self.margin_sigmas,
            refine: self.refine,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeCase {
    pub functional: FunctionalId,
    pub reference: Option<f64>,
    #[serde(default = "default_pde_tol")]
    pub tol: f64,
}

fn default_pde_tol() -> f64 {
    0.005
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct QuadraticParams {
    #[serde(default = "twenty", deserialize_with = "positive")]
    pub samples: usize,
    pub g: Vec<GParams>,
    #[serde(default = "default_quad_tol")]
    pub tol: f64,
    #[serde(default)]
    pub solver: SolverParams,
}

fn twenty() -> usize {
    20
}
fn default_quad_tol() -> f64 {
    0.03
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeParams {
    pub g: Option<GParams>,
    #[serde(default = "unit")]
    pub horizon: f64,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub cases: Vec<PdeCase>,
    pub quadratic: Option<QuadraticParams>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalingParam {
    Named(ScalingName),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingName {
    SqrtN,
    TotalVariance,
}

/// Rows of independent laws: one iid `law`, or heterogeneous `laws`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ArrayParams {
    pub law: Option<LawParams>,
    pub laws: Option<Vec<LawParams>>,
    #[serde(default)]
    pub cyclic: bool,
    pub target_ratio: Option<f64>,
    pub schedule: Option<Vec<usize>>,
    pub scaling: Option<ScalingParam>,
}

impl ArrayParams {
    pub fn build(&self, path: &str, default_schedule: &[usize]) -> Result<ArraySpec, CliError> {
        let mode = match (&self.law, &self.laws) {
            (Some(l), None) => {
                if self.cyclic || self.target_ratio.is_some() {
                    return Err(schema(path, "`cyclic` and `target-ratio` apply to `laws` only"));
                }
                ArrayMode::Iid(l.build(&format!("{path}.law"))?)
            }
            (None, Some(ls)) => ArrayMode::Heterogeneous {
                laws: ls
                    .iter()
                    .enumerate()
                    .map(|(i, l)| l.build(&format!("{path}.laws[{i}]")))
                    .collect::<Result<_, _>>()?,
                cyclic: self.cyclic,
                target_ratio: self.target_ratio,
            },
            _ => return Err(schema(path, "give exactly one of `law` or `laws`")),
        };
        let scaling = match self.scaling {
            None | Some(ScalingParam::Named(ScalingName::SqrtN)) => Scaling::SqrtN,
            Some(ScalingParam::Named(ScalingName::TotalVariance)) => Scaling::TotalVariance,
            Some(ScalingParam::Fixed(c)) => Scaling::Fixed(c),
        };
        let schedule = self.schedule.clone().unwrap_or_else(|| default_schedule.to_vec());
        ArraySpec::new(mode, schedule, scaling).map_err(|e| schema(path, e))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CltParams {
    pub array: ArrayParams,
    pub functionals: Vec<FunctionalId>,
    #[serde(default)]
    pub solver: SolverParams,
    /// Hard bound on the gap at the last schedule entry.
    pub max_gap: Option<f64>,
    #[serde(default = "default_eps")]
    pub lindeberg_eps: Vec<f64>,
}

fn default_eps() -> Vec<f64> {
    vec![0.01, 0.1]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FddParams {
    pub array: ArrayParams,
    pub times: Vec<f64>,
    pub psi: String,
    #[serde(default)]
    pub solver: SolverParams,
    pub reference: Option<f64>,
    #[serde(default = "default_ref_tol")]
    pub reference_tol: f64,
    pub max_gap: Option<f64>,
}

fn default_ref_tol() -> f64 {
    0.01
}

impl FddParams {
    pub fn psi(&self, path: &str) -> Result<TestFunction, CliError> {
        let f = match self.times.len() {
            1 => named(&self.psi),
            2 => named_pair(&self.psi),
            n => {
                return Err(schema(
                    &format!("{path}.times"),
                    format!("{n} times given, supported: 1 or 2"),
                ))
            }
        };
        f.ok_or_else(|| {
            schema(
                &format!("{path}.psi"),
                format!("unknown functional `{}` for {} times", self.psi, self.times.len()),
            )
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RosenthalParams {
    #[serde(default = "default_trees", deserialize_with = "positive")]
    pub trees: usize,
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default = "six", deserialize_with = "positive")]
    pub max_depth: usize,
    #[serde(default = "four", deserialize_with = "positive")]
    pub max_children: usize,
    #[serde(default = "three", deserialize_with = "positive")]
    pub max_members: usize,
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EstimateParams {
    /// Row-major probe matrix.
    pub a: Vec<f64>,
    pub c: f64,
    #[serde(deserialize_with = "positive")]
    pub n: usize,
    pub expected: Option<f64>,
    #[serde(default = "default_est_tol")]
    pub tol: f64,
}

fn default_est_tol() -> f64 {
    0.02
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct IidParams {
    pub law: LawParams,
    pub c: Vec<f64>,
    pub x: Vec<f64>,
    /// Row-major probe matrices; defaults by dimension when absent.
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
    /// G the stabilized probes must reproduce exactly.
    pub expected_g: Option<GParams>,
    #[serde(default)]
    pub estimates: Vec<EstimateParams>,
}

pub fn matrix(dim: usize, entries: &[f64], path: &str) -> Result<DMatrix<f64>, CliError> {
    if entries.len() != dim * dim {
        return Err(schema(
            path,
            format!("expected {} entries, found {}", dim * dim, entries.len()),
        ));
    }
    let a = DMatrix::from_row_slice(dim, dim, entries);
    if (&a - a.transpose()).amax() > 1e-12 {
        return Err(schema(path, "matrix is not symmetric"));
    }
    Ok(a)
}

impl ExperimentConfig {
    /// Parses a document, reporting the offending field path on failure.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de =
            toml::Deserializer::parse(text).map_err(|e| schema("<document>", e.to_string().trim_end()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Schema {
                path: if path == "." { "<document>".into() } else { path },
                message: e.into_inner().to_string().trim_end().to_string(),
            }
        })?;
        cfg.check_blocks()?;
        Ok(cfg)
    }

    fn check_blocks(&self) -> Result<(), CliError> {
        let present = [
            (Kind::Axioms, self.axioms.is_some()),
            (Kind::TreeLaws, self.tree_laws.is_some()),
            (Kind::GLaws, self.g_laws.is_some()),
            (Kind::Pde, self.pde.is_some()),
            (Kind::Clt, self.clt.is_some()),
            (Kind::Fdd, self.fdd.is_some()),
            (Kind::Rosenthal, self.rosenthal.is_some()),
            (Kind::IidConditions, self.iid_conditions.is_some()),
        ];
        for (k, there) in present {
            if k == self.kind && !there {
                // randomized suites with all-default parameters may omit the block
                if !matches!(k, Kind::Axioms | Kind::TreeLaws | Kind::Rosenthal) {
                    return Err(schema(
                        k.name(),
                        format!("missing parameter table for kind `{}`", k.name()),
                    ));
                }
            }
            if k != self.kind && there {
                return Err(schema(
                    k.name(),
                    format!("table does not belong to kind `{}`", self.kind.name()),
                ));
            }
        }
        Ok(())
    }
}
