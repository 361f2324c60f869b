//! Three views for the static page in `www/`. Each returns a flat
//! `Float64Array`; the pure functions underneath are usable natively.

use glab_core::ambiguity::{iid_sum_expect, AmbiguitySet};
use glab_core::function::{named, Growth, TestFunction};
use glab_core::gfunc::{GFunction, SigmaInterval};
use glab_core::pde::{gnormal_expect, solve_gheat, Grid, PdeOptions};
use glab_core::{Error, Result};
use wasm_bindgen::prelude::*;

/// Largest `log2 n` offered by the convergence view.
pub const MAX_LOG2_N: u32 = 12;
/// Largest `n` offered by the capacity view.
pub const MAX_BAND_N: usize = 1024;
/// Half-width of the plotted window.
pub const WINDOW: f64 = 3.0;

fn functional(id: &str) -> Result<TestFunction> {
    named(id).ok_or_else(|| Error::InvalidArgument(format!("unknown functional `{id}`")))
}

fn g_of(lower: f64, upper: f64) -> Result<GFunction> {
    Ok(GFunction::from_interval(SigmaInterval::new(lower, upper)?))
}

/// `[x, φ(x), u(T, x)]` triples on `|x| ≤ 3` for variances in `[lower, upper]`.
pub fn heat_profile(lower: f64, upper: f64, id: &str, horizon: f64, h: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon <= 4.0) || !(0.01..=0.5).contains(&h) {
        return Err(Error::InvalidArgument(
            "need 0 < T <= 4 and 0.01 <= h <= 0.5".into(),
        ));
    }
    let g = g_of(lower, upper)?;
    let phi = functional(id)?;
    let margin = 8.0 * (upper * horizon).sqrt();
    let grid = Grid::auto(&g, WINDOW + margin, h, horizon)?;
    let u = solve_gheat(&g, &phi, &grid)?;
    let mut out = Vec::new();
    for (i, v) in u.values.iter().enumerate() {
        let x = grid.point(i)[0];
        if x.abs() <= WINDOW + 1e-9 {
            out.extend([x, phi.eval(&[x]), *v]);
        }
    }
    Ok(out)
}

/// `[limit, error_bar, n₁, E[φ(S_{n₁}/√n₁)], …]` for `n = 2, 4, …, 2^max_log2`
/// with iid rows of `B(lower, upper)`.
pub fn clt_series(lower: f64, upper: f64, id: &str, max_log2: u32) -> Result<Vec<f64>> {
    if !(1..=MAX_LOG2_N).contains(&max_log2) {
        return Err(Error::InvalidArgument(format!(
            "log2 n must lie in 1..={MAX_LOG2_N}"
        )));
    }
    let x = AmbiguitySet::bernoulli_band(lower, upper)?;
    let phi = functional(id)?;
    let limit = gnormal_expect(&g_of(lower, upper)?, &phi, &PdeOptions::default())?;
    let mut out = vec![limit.value, limit.error_bar];
    for k in 1..=max_log2 {
        let n = 1usize << k;
        out.extend([n as f64, iid_sum_expect(&x, n, &phi, 1.0 / (n as f64).sqrt())?]);
    }
    Ok(out)
}

/// `[x, C(T ≤ x), Ĉ(T ≤ x)]` for `T = S_n/√n` on a grid over `|x| ≤ 3`.
pub fn capacity_band(lower: f64, upper: f64, n: usize, points: usize) -> Result<Vec<f64>> {
    if !(1..=MAX_BAND_N).contains(&n) || !(2..=400).contains(&points) {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= n <= {MAX_BAND_N} and 2 <= points <= 400"
        )));
    }
    let x = AmbiguitySet::bernoulli_band(lower, upper)?;
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = Vec::with_capacity(3 * points);
    for i in 0..points {
        let t = -WINDOW + 2.0 * WINDOW * i as f64 / (points - 1) as f64;
        let below = TestFunction::scalar("1{s<=t}", Growth::Bounded, move |s| f64::from(s <= t + 1e-12));
        let above = TestFunction::scalar("-1{s<=t}", Growth::Bounded, move |s| -f64::from(s <= t + 1e-12));
        let up = iid_sum_expect(&x, n, &below, scale)?;
        let lo = -iid_sum_expect(&x, n, &above, scale)?;
        out.extend([t, up, lo]);
    }
    Ok(out)
}

fn js(r: Result<Vec<f64>>) -> std::result::Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = heatProfile)]
pub fn heat_profile_js(
    lower: f64,
    upper: f64,
    id: &str,
    horizon: f64,
    h: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    js(heat_profile(lower, upper, id, horizon, h))
}

#[wasm_bindgen(js_name = cltSeries)]
pub fn clt_series_js(
    lower: f64,
    upper: f64,
    id: &str,
    max_log2: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    js(clt_series(lower, upper, id, max_log2))
}

#[wasm_bindgen(js_name = capacityBand)]
pub fn capacity_band_js(
    lower: f64,
    upper: f64,
    n: usize,
    points: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    js(capacity_band(lower, upper, n, points))
}
