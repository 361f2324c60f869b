//! Acceptance criteria, one PASS/FAIL line each. Runs the shipped configs
//! through the `glab` binary and checks reports against independent values.

mod common;

use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::Duration;

use common::{glab, shipped, verdicts, Row, Run};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run_ok(config: &str, out: &Path) -> Result<Run, String> {
    let r = glab(&shipped(config), out, &[]);
    ensure(r.code() == 0, || {
        format!("{config}: exit {} ({})", r.code(), r.stderr().trim())
    })?;
    Ok(r)
}

fn within_time(r: &Run, limit: u64) -> Result<(), String> {
    ensure(r.elapsed < Duration::from_secs(limit), || {
        format!("took {:.2?}, limit {limit} s", r.elapsed)
    })
}

fn all_hard_pass(r: &Run, name: &str) -> Result<(), String> {
    for (v, pass, hard, stat) in verdicts(&r.summary(name)) {
        ensure(pass || !hard, || format!("{v} failed with statistic {stat}"))?;
    }
    Ok(())
}

fn axioms(out: &Path) -> Check {
    let r = run_ok("axioms.toml", out)?;
    within_time(&r, 10)?;
    let rows = r.csv("axioms");
    let s = r.summary("axioms");
    for name in [
        "monotonicity",
        "constant-preserving",
        "subadditivity",
        "positive-homogeneity",
        "conjugate-ordering",
    ] {
        let row = rows
            .iter()
            .find(|x| x.functional == name)
            .ok_or(format!("missing {name}"))?;
        ensure(row.n == 1000, || format!("{name}: {} sets", row.n))?;
        ensure(row.prelimit <= 1e-10, || {
            format!("{name}: worst violation {}", row.prelimit)
        })?;
    }
    let note = s["verdicts"][0]["note"].as_str().unwrap_or_default();
    ensure(note.contains("x 10 pairs"), || {
        format!("pair count not 10: {note}")
    })?;
    all_hard_pass(&r, "axioms")?;
    Ok(format!("1000 sets x 10 pairs clean in {:.2?}", r.elapsed))
}

fn tree_laws(out: &Path) -> Check {
    let r = run_ok("tree-laws.toml", out)?;
    within_time(&r, 30)?;
    let rows = r.csv("tree-laws");
    for law in [
        "translation",
        "product",
        "consistency",
        "constants-homogeneity",
        "monotonicity",
        "subadditivity",
        "tower",
        "boundedness",
    ] {
        let row = rows
            .iter()
            .find(|x| x.functional == law)
            .ok_or(format!("missing law {law}"))?;
        ensure(row.n == 100, || format!("{law}: {} trees", row.n))?;
        ensure(row.prelimit <= 1e-10, || format!("{law}: worst {}", row.prelimit))?;
    }
    all_hard_pass(&r, "tree-laws")?;
    let worst = rows.iter().map(|x| x.prelimit).fold(0.0, f64::max);
    Ok(format!(
        "100 trees, worst deviation {worst:e} in {:.2?}",
        r.elapsed
    ))
}

fn rosenthal(out: &Path) -> Check {
    let r = run_ok("rosenthal.toml", out)?;
    within_time(&r, 30)?;
    let rows = r.csv("rosenthal");
    let first: Vec<&Row> = rows.iter().filter(|x| x.functional == "first").collect();
    let second: Vec<&Row> = rows
        .iter()
        .filter(|x| x.functional.starts_with("second"))
        .collect();
    ensure(first.len() == 100 && second.len() == 100, || {
        "expected 100 trees".into()
    })?;
    let bad = first.iter().filter(|x| x.prelimit > x.limit).count();
    ensure(bad == 0, || format!("{bad} trees with lhs > rhs"))?;
    ensure(second.iter().all(|x| x.gap.is_finite()), || {
        "non-finite ratio".into()
    })?;
    let worst = second.iter().map(|x| x.gap).fold(0.0, f64::max);
    Ok(format!(
        "0/100 failures, largest second-display ratio {worst:.4} in {:.2?}",
        r.elapsed
    ))
}

fn g_laws(out: &Path) -> Check {
    let r = run_ok("g-laws.toml", out)?;
    let rows = r.csv("g-laws");
    for d in [1, 2] {
        for law in ["subadditivity", "homogeneity", "monotonicity", "lipschitz"] {
            let row = rows
                .iter()
                .find(|x| x.functional.contains(&format!("d={d}]:{law}")))
                .ok_or(format!("missing {law} for d={d}"))?;
            ensure(row.n >= 1000, || format!("{law} d={d}: {} trials", row.n))?;
            ensure(row.prelimit <= 1e-10, || {
                format!("{law} d={d}: worst {}", row.prelimit)
            })?;
        }
    }
    all_hard_pass(&r, "g-laws")?;
    Ok("1000 trials each in d=1 and d=2 clean".into())
}

fn pde_closed_forms(out: &Path) -> Check {
    let r = run_ok("pde-closed-forms.toml", out)?;
    within_time(&r, 60)?;
    let rows = r.csv("pde-closed-forms");
    let truth = [("x2", 1.0), ("neg_x2", -0.5), ("pos", 1.0 / (2.0 * PI).sqrt())];
    let mut msg = Vec::new();
    for (id, exact) in truth {
        let row = rows
            .iter()
            .find(|x| x.functional == id)
            .ok_or(format!("missing {id}"))?;
        let gap = (row.prelimit - exact).abs();
        ensure(gap <= 0.005, || {
            format!("{id}: u = {}, exact {exact}", row.prelimit)
        })?;
        ensure(gap <= row.error_bar, || {
            format!("{id}: gap {gap:e} outside error bar {:e}", row.error_bar)
        })?;
        msg.push(format!("{id} gap {gap:.1e} <= bar {:.1e}", row.error_bar));
    }
    Ok(msg.join(", "))
}

fn clt(out: &Path) -> Check {
    let r = run_ok("clt-bernoulli.toml", out)?;
    within_time(&r, 60)?;
    let rows = r.csv("clt-bernoulli");
    let mut finals = Vec::new();
    for id in ["pos", "sin", "x2m1pos"] {
        let series: Vec<&Row> = rows.iter().filter(|x| x.functional == id).collect();
        let ns: Vec<usize> = series.iter().map(|x| x.n).collect();
        ensure(ns == [16, 64, 256], || format!("{id}: schedule {ns:?}"))?;
        for w in series.windows(2) {
            ensure(w[1].gap <= w[0].gap + w[1].error_bar, || {
                format!(
                    "{id}: gap rises from {} to {} between n={} and n={}",
                    w[0].gap, w[1].gap, w[0].n, w[1].n
                )
            })?;
        }
        let last = series[2];
        ensure(last.gap <= 0.02, || format!("{id}: gap(256) = {}", last.gap))?;
        finals.push(format!("{id} {:.1e}", last.gap));
    }
    Ok(format!("gap(256): {} in {:.2?}", finals.join(", "), r.elapsed))
}

fn fdd(out: &Path) -> Check {
    let r = run_ok("fdd-increment.toml", out)?;
    let rows = r.csv("fdd-increment");
    let row = rows.iter().find(|x| x.n == 256).ok_or("no n=256 row")?;
    ensure(row.functional == "incr_sq@0.5;1", || {
        format!("functional {}", row.functional)
    })?;
    ensure((row.prelimit - 0.5).abs() <= 0.01, || {
        format!("prelimit {}", row.prelimit)
    })?;
    ensure((row.prelimit - row.limit).abs() <= 0.02, || {
        format!("prelimit {} vs nested PDE {}", row.prelimit, row.limit)
    })?;
    Ok(format!(
        "prelimit {} vs nested PDE {:.10}",
        row.prelimit, row.limit
    ))
}

fn quadratic(out: &Path) -> Check {
    let r = run_ok("quadratic-identity.toml", out)?;
    let rows = r.csv("quadratic-identity");
    ensure(rows.len() == 20, || format!("{} samples", rows.len()))?;
    for d in ["d=1", "d=2"] {
        ensure(rows.iter().any(|x| x.functional.contains(d)), || {
            format!("no {d} sample")
        })?;
    }
    let worst = rows
        .iter()
        .map(|x| (x.prelimit - x.limit).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 0.03, || format!("worst gap {worst}"))?;
    Ok(format!("20 samples, worst gap {worst:.1e}"))
}

fn g_exact(alpha: f64) -> f64 {
    alpha.max(0.0) - 0.5 * (-alpha).max(0.0)
}

fn iid_conditions(out: &Path) -> Check {
    let r = run_ok("iid-bernoulli.toml", out)?;
    let rows = r.csv("iid-bernoulli");
    let value = |label: &str| rows.iter().find(|x| x.functional == label).map(|x| x.prelimit);
    for c in ["1", "2", "3"] {
        let v = value(&format!("clip2@c={c}")).ok_or("missing clip2 row")?;
        ensure((v - 1.0).abs() <= 1e-12, || format!("at c={c}: {v}"))?;
        let v = value(&format!("drift@c={c}")).ok_or("missing drift row")?;
        ensure(v == 0.0, || format!("at c={c}: {v}"))?;
        for (j, alpha) in [(0, 1.0), (1, -1.0)] {
            let v = value(&format!("probe{j}[{alpha}]@c={c}")).ok_or("missing probe row")?;
            ensure((v - g_exact(alpha)).abs() <= 1e-12, || {
                format!("at c={c}, A={alpha}: {v}")
            })?;
        }
    }
    for x in ["1.5", "2"] {
        let v = value(&format!("tail@x={x}")).ok_or("missing tail row")?;
        ensure(v == 0.0, || format!("at x={x}: {v}"))?;
    }
    let mut msg = Vec::new();
    for alpha in [1.0, -1.0] {
        let row = rows
            .iter()
            .find(|x| x.n == 256 && x.functional.contains(&format!("[{alpha}]@c=")))
            .ok_or("missing estimate")?;
        let want = g_exact(alpha);
        ensure((row.prelimit - want).abs() <= 0.02, || {
            format!("estimate for A={alpha}: {}", row.prelimit)
        })?;
        msg.push(format!("G({alpha}) ~ {:.5}", row.prelimit));
    }
    Ok(format!("conditions exact, {}", msg.join(", ")))
}

fn determinism(out: &Path) -> Check {
    let mut configs: Vec<_> = std::fs::read_dir(common::workspace().join("configs"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    configs.sort();
    for cfg in &configs {
        let stem = cfg.file_stem().unwrap().to_string_lossy().into_owned();
        let a = glab(cfg, &out.join("a"), &[]);
        let b = glab(cfg, &out.join("b"), &["--jobs", "1"]);
        ensure(a.code() == 0 && b.code() == 0, || {
            format!("{stem}: exit {} / {}", a.code(), b.code())
        })?;
        ensure(a.csv_bytes(&stem) == b.csv_bytes(&stem), || {
            format!("{stem}: CSV differs between runs")
        })?;
    }
    Ok(format!(
        "{} shipped configs byte-identical across runs and thread counts",
        configs.len()
    ))
}

type Criterion = fn(&Path) -> Check;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 10] = [
        ("axiom suite", axioms),
        ("operator laws", tree_laws),
        ("Rosenthal oracle", rosenthal),
        ("G-calculus laws", g_laws),
        ("PDE closed forms", pde_closed_forms),
        ("CLT regression", clt),
        ("FDD regression", fdd),
        ("quadratic identity", quadratic),
        ("iid condition block", iid_conditions),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let dir = tempfile::tempdir().expect("temp dir");
        match check(dir.path()) {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
