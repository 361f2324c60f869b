//! One runner per experiment kind. Each turns its parameter table into an
//! [`ExperimentReport`]; independent cells run on the rayon pool and are
//! merged in input order.

use glab_core::ambiguity::AmbiguitySet;
use glab_core::axioms::{verify_axioms, AxiomReport, AXIOM_TOL};
use glab_core::gfunc::{verify_g_laws, GFunction, G_LAW_TOL};
use glab_core::lab::{
    check_iid_necessary_conditions, check_lindeberg, check_moment_conditions, estimate_limit_g,
    run_clt_experiment, run_fdd_experiment, ExperimentReport, ReportRow, Verdict,
};
use glab_core::pde::{
    gbm_quadratic_identity, gnormal_expect_at, solve_gheat_snapshots, Grid, GridFunction, PdeOptions,
};
use glab_core::tree::{
    random_tree, rosenthal_check, verify_operator_laws, LawReport, MartingaleArray, MeanMode, ScenarioTree,
    TreeGen, TreeRandomVariable, LAW_TOL,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{self, ExperimentConfig, Kind, MeanModeParam};
use crate::CliError;

/// Sets per axiom chunk; chunks are seeded independently so the result
/// does not depend on the thread count.
const AXIOM_CHUNK: usize = 50;
/// Slack for "exactly zero" and "exactly equal" condition checks.
const EXACT: f64 = 1e-12;

pub struct Suite {
    pub report: ExperimentReport,
    /// `(label, snapshots)` for `--dump-fields`.
    pub fields: Vec<(String, Vec<GridFunction>)>,
}

impl From<ExperimentReport> for Suite {
    fn from(report: ExperimentReport) -> Self {
        Self {
            report,
            fields: Vec::new(),
        }
    }
}

fn hard(name: impl Into<String>, statistic: f64, pass: bool, note: impl Into<String>) -> Verdict {
    Verdict {
        name: name.into(),
        statistic,
        series: Vec::new(),
        pass,
        hard: true,
        note: note.into(),
    }
}

fn soft(name: impl Into<String>, statistic: f64, pass: bool, note: impl Into<String>) -> Verdict {
    Verdict {
        hard: false,
        ..hard(name, statistic, pass, note)
    }
}

fn row(n: usize, functional: impl Into<String>, prelimit: f64, limit: f64, error_bar: f64) -> ReportRow {
    // adding 0.0 turns -0 into 0 so the CSV never shows "-0"
    let (prelimit, limit) = (prelimit + 0.0, limit + 0.0);
    ReportRow {
        n,
        functional: functional.into(),
        prelimit,
        limit,
        gap: (prelimit - limit).abs(),
        error_bar,
    }
}

/// Deterministic per-cell seed.
fn cell_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn need_seed(seed: Option<u64>) -> Result<u64, CliError> {
    seed.ok_or_else(|| CliError::Schema {
        path: "seed".into(),
        message: "required for randomized suites (set `seed` or pass --seed)".into(),
    })
}

pub fn run(cfg: &ExperimentConfig, seed: Option<u64>, dump_fields: bool) -> Result<Suite, CliError> {
    let kind = cfg.kind;
    let core = |source| CliError::Core {
        suite: kind.name(),
        source,
    };
    let mut suite = match kind {
        Kind::Axioms => {
            let sets = cfg.axioms.as_ref().map_or(1000, |a| a.sets);
            axioms(sets, need_seed(seed)?).map_err(core)?.into()
        }
        Kind::TreeLaws => {
            let p = cfg.tree_laws.clone().unwrap_or_else(default_tree_params);
            tree_laws(&p, need_seed(seed)?).map_err(core)?.into()
        }
        Kind::GLaws => {
            let p = cfg.g_laws.as_ref().expect("checked by parser");
            let gs =
                p.g.iter()
                    .enumerate()
                    .map(|(i, g)| g.build(&format!("g-laws.g[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?;
            if gs.is_empty() {
                return Err(CliError::Schema {
                    path: "g-laws.g".into(),
                    message: "at least one G is required".into(),
                });
            }
            g_laws(&gs, p.trials, need_seed(seed)?).map_err(core)?.into()
        }
        Kind::Pde => pde(cfg.pde.as_ref().expect("checked by parser"), seed, dump_fields)?,
        Kind::Clt => clt(cfg.clt.as_ref().expect("checked by parser"))?,
        Kind::Fdd => fdd(cfg.fdd.as_ref().expect("checked by parser"))?,
        Kind::Rosenthal => {
            let p = cfg.rosenthal.clone().unwrap_or(config::RosenthalParams {
                trees: 100,
                p: 2.0,
                max_depth: 6,
                max_children: 4,
                max_members: 3,
            });
            rosenthal(&p, need_seed(seed)?).map_err(core)?.into()
        }
        Kind::IidConditions => iid(cfg.iid_conditions.as_ref().expect("checked by parser"))?,
    };
    if let Some(s) = seed {
        suite.report.provenance.insert(0, ("seed".into(), s.to_string()));
    }
    suite
        .report
        .provenance
        .insert(0, ("kind".into(), kind.name().into()));
    Ok(suite)
}

fn default_tree_params() -> config::TreeParams {
    config::TreeParams {
        trees: 100,
        min_depth: 1,
        max_depth: 6,
        max_children: 4,
        max_members: 3,
        mode: None,
    }
}

fn axioms(sets: usize, seed: u64) -> glab_core::Result<ExperimentReport> {
    let chunks: Vec<usize> = (0..sets.div_ceil(AXIOM_CHUNK)).collect();
    let parts = chunks
        .par_iter()
        .map(|&i| verify_axioms(AXIOM_CHUNK.min(sets - i * AXIOM_CHUNK), cell_seed(seed, i)))
        .collect::<glab_core::Result<Vec<AxiomReport>>>()?;
    let mut merged = parts[0].clone();
    for p in &parts[1..] {
        for (m, c) in merged.checks.iter_mut().zip(&p.checks) {
            m.worst = m.worst.max(c.worst);
            m.violations += c.violations;
        }
    }
    let mut report = ExperimentReport::default();
    for c in &merged.checks {
        report.rows.push(row(sets, c.name, c.worst, 0.0, AXIOM_TOL));
        report.verdicts.push(hard(
            format!("axiom:{}", c.name),
            c.worst,
            c.violations == 0,
            format!(
                "{} violations over {sets} sets x {} pairs",
                c.violations, merged.pairs
            ),
        ));
    }
    report.provenance.push(("sets".into(), sets.to_string()));
    Ok(report)
}

/// Terminal running sum, a mid-level variable and a nonlinear terminal one.
fn law_samples(tree: &ScenarioTree) -> Vec<TreeRandomVariable> {
    let z = MartingaleArray::from_tree(tree);
    let s = tree.path_variable(|p| p.iter().map(|&id| z.get(id)[0]).sum());
    let mid = tree.variable(tree.depth() / 2, |id| tree.node(id).increment[0].sin());
    let bent = s.map(|v| (v - 0.25).max(0.0).powi(2) - v.abs());
    vec![s, mid, bent]
}

fn tree_gen(
    min_depth: usize,
    max_depth: usize,
    max_children: usize,
    max_members: usize,
    mode: MeanMode,
) -> TreeGen {
    TreeGen {
        min_depth: min_depth.min(max_depth),
        max_depth,
        max_children,
        max_members,
        mode,
    }
}

fn tree_laws(p: &config::TreeParams, seed: u64) -> glab_core::Result<ExperimentReport> {
    let mode = match p.mode.unwrap_or(MeanModeParam::Free) {
        MeanModeParam::Free => MeanMode::Free,
        MeanModeParam::Nonpositive => MeanMode::Nonpositive,
        MeanModeParam::Zero => MeanMode::Zero,
    };
    let cfg = tree_gen(p.min_depth, p.max_depth, p.max_children, p.max_members, mode);
    let reports = (0..p.trees)
        .into_par_iter()
        .map(|i| {
            let tree = random_tree(&cfg, cell_seed(seed, i));
            verify_operator_laws(&tree, &law_samples(&tree))
        })
        .collect::<glab_core::Result<Vec<LawReport>>>()?;
    let mut merged = reports[0].clone();
    for r in &reports[1..] {
        merged.merge(r);
    }
    let mut report = ExperimentReport::default();
    for c in &merged.checks {
        report
            .rows
            .push(row(p.trees, c.law.name(), c.worst, 0.0, LAW_TOL));
        report.verdicts.push(hard(
            format!("law:{}", c.law.name()),
            c.worst,
            c.pass,
            format!("worst over {} trees, tolerance {LAW_TOL}", p.trees),
        ));
    }
    report.provenance.push(("trees".into(), p.trees.to_string()));
    Ok(report)
}

fn g_laws(gs: &[GFunction], trials: usize, seed: u64) -> glab_core::Result<ExperimentReport> {
    let reports = gs
        .par_iter()
        .enumerate()
        .map(|(i, g)| verify_g_laws(g, trials, cell_seed(seed, i)))
        .collect::<glab_core::Result<Vec<_>>>()?;
    let mut report = ExperimentReport::default();
    for (i, (g, r)) in gs.iter().zip(&reports).enumerate() {
        for c in &r.checks {
            let label = format!("G{i}[d={}]:{}", g.dim(), c.name);
            report.rows.push(row(trials, &label, c.worst, 0.0, G_LAW_TOL));
            report.verdicts.push(hard(
                label,
                c.worst,
                c.violations == 0,
                format!("{} violations over {trials} trials", c.violations),
            ));
        }
    }
    report.provenance.push(("trials".into(), trials.to_string()));
    Ok(report)
}

fn random_symmetric(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = rng.gen_range(-1.0..1.0);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

fn pde(p: &config::PdeParams, seed: Option<u64>, dump_fields: bool) -> Result<Suite, CliError> {
    let core = |source| CliError::Core { suite: "pde", source };
    let mut report = ExperimentReport::default();
    let mut fields = Vec::new();
    if !(p.horizon > 0.0) {
        return Err(CliError::Schema {
            path: "pde.horizon".into(),
            message: "must be positive".into(),
        });
    }
    if !p.cases.is_empty() {
        let g =
            p.g.as_ref()
                .ok_or_else(|| CliError::Schema {
                    path: "pde.g".into(),
                    message: "required when `cases` are given".into(),
                })?
                .build("pde.g")?;
        let opts = p.solver.options("pde.solver")?;
        let values = p
            .cases
            .par_iter()
            .map(|c| gnormal_expect_at(&g, &c.functional.function(), p.horizon, &opts))
            .collect::<glab_core::Result<Vec<_>>>()
            .map_err(core)?;
        for (c, v) in p.cases.iter().zip(&values) {
            let id = &c.functional.0;
            let reference = c.reference.unwrap_or(f64::NAN);
            report.rows.push(row(0, id, v.value, reference, v.error_bar));
            if let Some(r) = c.reference {
                let gap = (v.value - r).abs();
                report.verdicts.push(hard(
                    format!("closed-form:{id}"),
                    gap,
                    gap <= c.tol,
                    format!("|u - {r}| <= {}", c.tol),
                ));
                report.verdicts.push(soft(
                    format!("error-bar-brackets:{id}"),
                    gap,
                    gap <= v.error_bar,
                    format!("two-grid error bar {}", v.error_bar),
                ));
            }
        }
        if let Some(v) = values.first() {
            report.provenance.extend([
                ("h".to_string(), v.h.to_string()),
                ("tau".to_string(), v.tau.to_string()),
                ("half_width".to_string(), v.half_width.to_string()),
                ("horizon".to_string(), p.horizon.to_string()),
            ]);
        }
        if dump_fields {
            for (c, v) in p.cases.iter().zip(&values) {
                let grid = Grid::auto(&g, v.half_width, v.h, p.horizon).map_err(core)?;
                let every = (grid.steps() / 20).max(1);
                let (_, snaps) =
                    solve_gheat_snapshots(&g, &c.functional.function(), &grid, every).map_err(core)?;
                fields.push((c.functional.0.clone(), snaps));
            }
        }
    }
    if let Some(q) = &p.quadratic {
        let gs =
            q.g.iter()
                .enumerate()
                .map(|(i, g)| g.build(&format!("pde.quadratic.g[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
        if gs.is_empty() {
            return Err(CliError::Schema {
                path: "pde.quadratic.g".into(),
                message: "at least one G is required".into(),
            });
        }
        let opts: PdeOptions = q.solver.options("pde.quadratic.solver")?;
        let mut rng = ChaCha8Rng::seed_from_u64(need_seed(seed)?);
        let samples: Vec<(usize, DMatrix<f64>, f64)> = (0..q.samples)
            .map(|s| {
                let gi = s % gs.len();
                let a = random_symmetric(&mut rng, gs[gi].dim());
                (gi, a, rng.gen_range(0.1..=1.0))
            })
            .collect();
        let values = samples
            .par_iter()
            .map(|(gi, a, t)| gbm_quadratic_identity(&gs[*gi], a, *t, &opts))
            .collect::<glab_core::Result<Vec<_>>>()
            .map_err(core)?;
        let mut worst = 0.0f64;
        for (s, ((gi, _, _), (v, reference))) in samples.iter().zip(&values).enumerate() {
            let r = row(
                s,
                format!("quadratic[G{gi};d={}]", gs[*gi].dim()),
                v.value,
                *reference,
                v.error_bar,
            );
            worst = worst.max(r.gap);
            report.rows.push(r);
        }
        report.verdicts.push(hard(
            "quadratic-identity",
            worst,
            worst <= q.tol,
            format!("max |E<W A, W> - G(A) t| over {} samples <= {}", q.samples, q.tol),
        ));
    }
    Ok(Suite { report, fields })
}

fn clt(p: &config::CltParams) -> Result<Suite, CliError> {
    let core = |source| CliError::Core { suite: "clt", source };
    let spec = p.array.build("clt.array", &[16, 64, 256])?;
    let opts = p.solver.options("clt.solver")?;
    if p.functionals.is_empty() {
        return Err(CliError::Schema {
            path: "clt.functionals".into(),
            message: "at least one functional is required".into(),
        });
    }
    let parts = p
        .functionals
        .par_iter()
        .map(|f| run_clt_experiment(&spec, &[f.function()], &opts))
        .collect::<glab_core::Result<Vec<_>>>()
        .map_err(core)?;
    let mut report = ExperimentReport {
        provenance: parts[0].provenance.clone(),
        ..Default::default()
    };
    for (f, part) in p.functionals.iter().zip(parts) {
        if let (Some(max), Some(last)) = (p.max_gap, part.rows.last()) {
            report.verdicts.push(hard(
                format!("max-gap:{}", f.0),
                last.gap,
                last.gap <= max,
                format!("gap at n={} <= {max}", last.n),
            ));
        }
        report.rows.extend(part.rows);
        report.verdicts.extend(part.verdicts);
    }
    report
        .verdicts
        .extend(check_lindeberg(&spec, &p.lindeberg_eps).map_err(core)?);
    report
        .verdicts
        .extend(check_moment_conditions(&spec).map_err(core)?);
    report.provenance.push((
        "schedule".into(),
        spec.schedule
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(";"),
    ));
    Ok(report.into())
}

fn fdd(p: &config::FddParams) -> Result<Suite, CliError> {
    let core = |source| CliError::Core { suite: "fdd", source };
    let spec = p.array.build("fdd.array", &[256])?;
    let psi = p.psi("fdd")?;
    let opts = p.solver.options("fdd.solver")?;
    let mut report = run_fdd_experiment(&spec, &p.times, &psi, &opts).map_err(core)?;
    if let Some(last) = report.rows.last().cloned() {
        if let Some(r) = p.reference {
            let d = (last.prelimit - r).abs();
            report.verdicts.push(hard(
                "reference",
                d,
                d <= p.reference_tol,
                format!("|prelimit(n={}) - {r}| <= {}", last.n, p.reference_tol),
            ));
        }
        if let Some(max) = p.max_gap {
            report.verdicts.push(hard(
                "max-gap",
                last.gap,
                last.gap <= max,
                format!("|prelimit(n={}) - nested PDE| <= {max}", last.n),
            ));
        }
    }
    Ok(report.into())
}

fn rosenthal(p: &config::RosenthalParams, seed: u64) -> glab_core::Result<ExperimentReport> {
    let cfg = tree_gen(
        1,
        p.max_depth,
        p.max_children,
        p.max_members,
        MeanMode::Nonpositive,
    );
    let results = (0..p.trees)
        .into_par_iter()
        .map(|i| {
            let tree = random_tree(&cfg, cell_seed(seed, i));
            rosenthal_check(&tree, &MartingaleArray::from_tree(&tree), p.p)
        })
        .collect::<glab_core::Result<Vec<_>>>()?;
    let mut report = ExperimentReport::default();
    let mut failures = 0;
    let mut worst_ratio = 0.0f64;
    let mut finite = true;
    for (i, r) in results.iter().enumerate() {
        let f = &r.first;
        report.rows.push(ReportRow {
            n: i,
            functional: "first".into(),
            prelimit: f.lhs,
            limit: f.rhs,
            gap: f.rhs - f.lhs,
            error_bar: 0.0,
        });
        let s = &r.second;
        report.rows.push(ReportRow {
            n: i,
            functional: format!("second(p={})", s.p),
            prelimit: s.lhs,
            limit: s.moment_term + s.variance_term + s.drift_term,
            gap: s.ratio,
            error_bar: 0.0,
        });
        failures += usize::from(!f.pass);
        finite &= s.ratio.is_finite();
        worst_ratio = worst_ratio.max(s.ratio);
    }
    report.verdicts.push(hard(
        "rosenthal-first",
        failures as f64,
        failures == 0,
        format!("failures over {} mean-nonpositive trees", p.trees),
    ));
    report.verdicts.push(hard(
        "rosenthal-second-ratio",
        worst_ratio,
        finite,
        "largest lhs / (moment + variance + drift); must be finite",
    ));
    report.provenance.push(("trees".into(), p.trees.to_string()));
    Ok(report)
}

/// Largest Euclidean norm over every member's support.
fn euclidean_radius(x: &AmbiguitySet) -> f64 {
    x.members()
        .iter()
        .flat_map(|m| m.support())
        .map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn fmt_matrix(a: &DMatrix<f64>) -> String {
    let rows: Vec<String> = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "))
        .collect();
    format!("[{}]", rows.join("; "))
}

fn iid(p: &config::IidParams) -> Result<Suite, CliError> {
    let core = |source| CliError::Core {
        suite: "iid-conditions",
        source,
    };
    let x = p.law.build("iid-conditions.law")?;
    let d = x.dim();
    let probes = p
        .probes
        .iter()
        .enumerate()
        .map(|(i, a)| config::matrix(d, a, &format!("iid-conditions.probes[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let cond = check_iid_necessary_conditions(&x, &p.c, &p.x, &probes).map_err(core)?;
    let radius = x.support_radius();
    let eradius = euclidean_radius(&x);
    let mut report = ExperimentReport::default();

    let m = &cond.clipped_second_moment;
    let top = *m.last().expect("nonempty schedule");
    for (c, v) in cond.c.iter().zip(m) {
        report.rows.push(row(0, format!("clip2@c={c}"), *v, top, 0.0));
    }
    let settled: Vec<f64> = cond
        .c
        .iter()
        .zip(m)
        .filter(|(c, _)| **c >= eradius * eradius)
        .map(|(_, v)| *v)
        .collect();
    report.verdicts.push(soft(
        "clipped-second-moment",
        top,
        !settled.is_empty() && settled.iter().all(|v| (v - top).abs() <= EXACT),
        format!("constant for c >= {}", eradius * eradius),
    ));

    for (t, v) in cond.x.iter().zip(&cond.tail) {
        report.rows.push(row(0, format!("tail@x={t}"), *v, 0.0, 0.0));
    }
    let beyond: Vec<f64> = cond
        .x
        .iter()
        .zip(&cond.tail)
        .filter(|(t, _)| **t > eradius)
        .map(|(_, v)| *v)
        .collect();
    report.verdicts.push(soft(
        "tail",
        beyond.iter().fold(0.0, |a: f64, b| a.max(b.abs())),
        !beyond.is_empty() && beyond.iter().all(|v| v.abs() <= EXACT),
        format!("zero for x > {eradius}"),
    ));

    for (c, v) in cond.c.iter().zip(&cond.truncated_drift) {
        report.rows.push(row(0, format!("drift@c={c}"), *v, 0.0, 0.0));
    }
    let drift: Vec<f64> = cond
        .c
        .iter()
        .zip(&cond.truncated_drift)
        .filter(|(c, _)| **c >= radius)
        .map(|(_, v)| *v)
        .collect();
    report.verdicts.push(soft(
        "truncated-drift",
        drift.iter().fold(0.0, |a: f64, b| a.max(b.abs())),
        !drift.is_empty() && drift.iter().all(|v| v.abs() <= EXACT),
        format!("zero for c >= {radius}"),
    ));

    let mut induced_gap = 0.0f64;
    let mut all_settled = true;
    for (j, pr) in cond.probes.iter().enumerate() {
        let target = cond.induced.eval(&pr.a).map_err(core)?.0;
        for (c, v) in cond.c.iter().zip(&pr.values) {
            report.rows.push(row(
                0,
                format!("probe{j}{}@c={c}", fmt_matrix(&pr.a)),
                *v,
                target,
                0.0,
            ));
        }
        match pr.stabilized {
            Some(s) => induced_gap = induced_gap.max((s - target).abs()),
            None => all_settled = false,
        }
    }
    report.verdicts.push(soft(
        "induced-G",
        induced_gap,
        all_settled && induced_gap <= EXACT,
        "stabilized probes against the G they induce",
    ));
    if let Some(e) = &p.expected_g {
        let expected = e.build("iid-conditions.expected-g")?;
        let mut gap = 0.0f64;
        for pr in &cond.probes {
            let want = expected.eval(&pr.a).map_err(core)?.0;
            gap = gap.max(pr.stabilized.map_or(f64::INFINITY, |s| (s - want).abs()));
        }
        report.verdicts.push(hard(
            "expected-G",
            gap,
            gap <= EXACT,
            "stabilized probes reproduce the configured G",
        ));
    }

    let estimates = p
        .estimates
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let a = config::matrix(d, &e.a, &format!("iid-conditions.estimates[{j}].a"))?;
            Ok((a, e))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let values = estimates
        .par_iter()
        .map(|(a, e)| estimate_limit_g(&x, a, e.c, e.n))
        .collect::<glab_core::Result<Vec<_>>>()
        .map_err(core)?;
    for (j, ((a, e), v)) in estimates.iter().zip(&values).enumerate() {
        let induced = cond.induced.eval(a).map_err(core)?.0;
        let limit = e.expected.unwrap_or(induced);
        report.rows.push(row(
            e.n,
            format!("limit-g{j}{}@c={}", fmt_matrix(a), e.c),
            *v,
            limit,
            0.0,
        ));
        if let Some(want) = e.expected {
            let gap = (v - want).abs();
            report.verdicts.push(hard(
                format!("limit-g{j}"),
                gap,
                gap <= e.tol,
                format!("|estimate(n={}) - {want}| <= {}", e.n, e.tol),
            ));
        }
    }
    report
        .provenance
        .push(("support_radius".into(), radius.to_string()));
    Ok(report.into())
}
