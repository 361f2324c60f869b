//! Explicit monotone finite differences for `∂ₜu = ½G(D²u)`, `u(0,·) = φ`.
//!
//! One-dimensional updates use the central second difference. In two
//! dimensions each member `Σ = [[a, c], [c, b]]` is split as
//! `(a−|c|)δₓₓ + (b−|c|)δᵧᵧ + |c|δ_diag`, with the diagonal difference taken
//! along `(1, 1)` when `c ≥ 0` and along `(1, −1)` otherwise. The split has
//! nonnegative weights exactly when `|c| ≤ min(a, b)`.

use std::io::{self, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::function::TestFunction;
use crate::gfunc::{check_symmetric, GFunction};

/// Floor added to two-grid error bars so that exact results still carry a
/// nonzero bar.
pub const ERROR_BAR_FLOOR: f64 = 1e-9;
const DOMINANCE_TOL: f64 = 1e-12;
/// Largest arity accepted by [`gbm_fdd_expect`].
pub const FDD_ARITY_CAP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    /// Nodes per axis, `2m + 1` with the origin at index `m`.
    nodes: usize,
    h: f64,
    tau: f64,
    steps: usize,
    horizon: f64,
}

impl Grid {
    /// Builds a grid on `[−L, L]^d`, with `L` rounded up to a multiple of
    /// `h`. `tau` is shrunk so that a whole number of steps reaches `horizon`.
    pub fn new(g: &GFunction, half_width: f64, h: f64, tau: f64, horizon: f64) -> Result<Self> {
        let dim = g.dim();
        if dim > 2 {
            return Err(Error::InvalidArgument(format!(
                "G-heat solves support d <= 2, got {dim}"
            )));
        }
        for (name, v) in [
            ("half width", half_width),
            ("h", h),
            ("tau", tau),
            ("horizon", horizon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let m = ((half_width / h) - 1e-9).ceil().max(2.0) as usize;
        let steps = ((horizon / tau) - 1e-9).ceil().max(1.0) as usize;
        let tau = horizon / steps as f64;
        let ratio = tau * dim as f64 * g.max_diagonal() / (h * h);
        if ratio > 1.0 + 1e-12 {
            return Err(Error::Cfl { ratio });
        }
        Ok(Self {
            dim,
            nodes: 2 * m + 1,
            h,
            tau,
            steps,
            horizon,
        })
    }

    /// Largest stable time step.
    pub fn auto(g: &GFunction, half_width: f64, h: f64, horizon: f64) -> Result<Self> {
        let speed = g.dim() as f64 * g.max_diagonal();
        let tau = if speed > 0.0 { h * h / speed } else { horizon };
        Self::new(g, half_width, h, tau.min(horizon), horizon)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn half_width(&self) -> f64 {
        self.coord(self.nodes - 1)
    }

    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - ((self.nodes - 1) / 2) as f64) * self.h
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        if self.dim == 1 {
            vec![self.coord(idx)]
        } else {
            vec![self.coord(idx / self.nodes), self.coord(idx % self.nodes)]
        }
    }

    pub fn origin_index(&self) -> usize {
        let m = (self.nodes - 1) / 2;
        if self.dim == 1 {
            m
        } else {
            m * self.nodes + m
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub time: f64,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn at_origin(&self) -> f64 {
        self.values[self.grid.origin_index()]
    }

    /// Value at the node nearest to `x` (exact for node coordinates).
    pub fn at_node(&self, x: &[f64]) -> Option<f64> {
        let m = ((self.grid.nodes - 1) / 2) as f64;
        let mut idx = 0usize;
        for &xi in x.iter().take(self.grid.dim) {
            let i = (xi / self.grid.h + m).round();
            if i < 0.0 || i >= self.grid.nodes as f64 {
                return None;
            }
            idx = idx * self.grid.nodes + i as usize;
        }
        Some(self.values[idx])
    }

    /// CSV rows `x[,y],value,time`, without a header.
    pub fn write_csv_rows(&self, out: &mut impl Write) -> io::Result<()> {
        for (idx, v) in self.values.iter().enumerate() {
            for x in self.grid.point(idx) {
                write!(out, "{x},")?;
            }
            writeln!(out, "{v},{}", self.time)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Stencil {
    wx: f64,
    wy: f64,
    wd: f64,
    /// Diagonal direction `(1, 1)` when true, `(1, −1)` otherwise.
    main_diag: bool,
}

fn stencils(g: &GFunction, grid: &Grid) -> Result<Vec<Stencil>> {
    let k = 0.5 * grid.tau / (grid.h * grid.h);
    let mut out = Vec::with_capacity(g.theta().len());
    for (member, s) in g.theta().iter().enumerate() {
        let st = if grid.dim == 1 {
            Stencil {
                wx: k * s[(0, 0)],
                wy: 0.0,
                wd: 0.0,
                main_diag: true,
            }
        } else {
            let (a, b, c) = (s[(0, 0)], s[(1, 1)], s[(0, 1)]);
            if c.abs() > a.min(b) + DOMINANCE_TOL {
                return Err(Error::NonMonotoneStencil { member });
            }
            Stencil {
                wx: k * (a - c.abs()).max(0.0),
                wy: k * (b - c.abs()).max(0.0),
                wd: k * c.abs(),
                main_diag: c >= 0.0,
            }
        };
        let center = 1.0 - 2.0 * (st.wx + st.wy + st.wd);
        debug_assert!(center >= -1e-12, "CFL admitted a negative center weight");
        out.push(st);
    }
    Ok(out)
}

fn initial_values(phi: &TestFunction, grid: &Grid) -> Result<Vec<f64>> {
    (0..grid.len())
        .map(|idx| phi.eval_checked(&grid.point(idx)))
        .collect()
}

fn step(grid: &Grid, st: &[Stencil], u: &[f64], next: &mut [f64]) {
    let n = grid.nodes;
    if grid.dim == 1 {
        for i in 1..n - 1 {
            let lap = u[i + 1] + u[i - 1] - 2.0 * u[i];
            let best = st.iter().map(|s| s.wx * lap).fold(f64::NEG_INFINITY, f64::max);
            next[i] = u[i] + best;
        }
        return;
    }
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let c = i * n + j;
            let u0 = u[c];
            let dxx = u[c + n] + u[c - n] - 2.0 * u0;
            let dyy = u[c + 1] + u[c - 1] - 2.0 * u0;
            let dmain = u[c + n + 1] + u[c - n - 1] - 2.0 * u0;
            let danti = u[c + n - 1] + u[c - n + 1] - 2.0 * u0;
            let mut best = f64::NEG_INFINITY;
            for s in st {
                let dd = if s.main_diag { dmain } else { danti };
                best = best.max(s.wx * dxx + s.wy * dyy + s.wd * dd);
            }
            next[c] = u0 + best;
        }
    }
}

fn march(grid: &Grid, st: &[Stencil], mut u: Vec<f64>, mut on_step: impl FnMut(usize, &[f64])) -> Vec<f64> {
    let mut next = u.clone();
    for k in 1..=grid.steps {
        step(grid, st, &u, &mut next);
        std::mem::swap(&mut u, &mut next);
        on_step(k, &u);
    }
    u
}

/// Solves up to the grid horizon; boundary nodes stay at `φ`.
pub fn solve_gheat(g: &GFunction, phi: &TestFunction, grid: &Grid) -> Result<GridFunction> {
    Ok(solve_gheat_snapshots(g, phi, grid, 0)?.0)
}

/// As [`solve_gheat`], also returning every `every`-th layer (and the
/// initial layer) when `every > 0`.
pub fn solve_gheat_snapshots(
    g: &GFunction,
    phi: &TestFunction,
    grid: &Grid,
    every: usize,
) -> Result<(GridFunction, Vec<GridFunction>)> {
    if g.dim() != grid.dim {
        return Err(Error::DimensionMismatch {
            expected: grid.dim,
            found: g.dim(),
        });
    }
    let st = stencils(g, grid)?;
    let u0 = initial_values(phi, grid)?;
    let mut snaps = Vec::new();
    if every > 0 {
        snaps.push(GridFunction {
            grid: *grid,
            time: 0.0,
            values: u0.clone(),
        });
    }
    let u = march(grid, &st, u0, |k, u| {
        if every > 0 && k % every == 0 {
            snaps.push(GridFunction {
                grid: *grid,
                time: k as f64 * grid.tau,
                values: u.to_vec(),
            });
        }
    });
    Ok((
        GridFunction {
            grid: *grid,
            time: grid.horizon,
            values: u,
        },
        snaps,
    ))
}

/// Accuracy controls for [`gnormal_expect`] and [`gbm_fdd_expect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeOptions {
    /// Coarse spacing; `None` picks a default by dimension and arity.
    pub h: Option<f64>,
    /// Boundary margin in standard deviations of the fastest direction.
    pub margin_sigmas: f64,
    /// Also solve at `h/2` and report the two-grid gap as error bar.
    pub refine: bool,
}

impl Default for PdeOptions {
    fn default() -> Self {
        Self {
            h: None,
            margin_sigmas: 6.0,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeValue {
    /// Value on the finest grid used.
    pub value: f64,
    /// `|u_h − u_{h/2}|` plus [`ERROR_BAR_FLOOR`]; the floor alone without refinement.
    pub error_bar: f64,
    pub h: f64,
    pub tau: f64,
    pub steps: usize,
    pub half_width: f64,
    /// Distance required between evaluation point and boundary.
    pub margin: f64,
}

fn margin(g: &GFunction, phi: &TestFunction, horizon: f64, sigmas: f64) -> f64 {
    // heavier tails in φ need a wider domain
    let k = sigmas + phi.growth().exponent().max(2.0) - 2.0;
    k * (g.max_diagonal() * horizon).sqrt()
}

fn solve_at_origin(
    g: &GFunction,
    phi: &TestFunction,
    horizon: f64,
    h: f64,
    margin: f64,
) -> Result<(f64, Grid)> {
    let grid = Grid::auto(g, margin + 2.0 * h, h, horizon)?;
    let u = solve_gheat(g, phi, &grid)?;
    Ok((u.at_origin(), grid))
}

/// `Ẽ[φ(√t·ξ)]` for `ξ ~ N(0, G)`, as `u(t, 0)`.
pub fn gnormal_expect_at(
    g: &GFunction,
    phi: &TestFunction,
    horizon: f64,
    opts: &PdeOptions,
) -> Result<PdeValue> {
    if phi.arity() != 1 {
        return Err(Error::ArityMismatch {
            expected: 1,
            found: phi.arity(),
        });
    }
    let h = opts.h.unwrap_or(if g.dim() == 1 { 0.02 } else { 0.1 });
    let margin = margin(g, phi, horizon, opts.margin_sigmas);
    let (coarse, grid) = solve_at_origin(g, phi, horizon, h, margin)?;
    if !opts.refine {
        return Ok(PdeValue {
            value: coarse,
            error_bar: ERROR_BAR_FLOOR,
            h,
            tau: grid.tau,
            steps: grid.steps,
            half_width: grid.half_width(),
            margin,
        });
    }
    let (fine, fgrid) = solve_at_origin(g, phi, horizon, h / 2.0, margin)?;
    Ok(PdeValue {
        value: fine,
        error_bar: (coarse - fine).abs() + ERROR_BAR_FLOOR,
        h: h / 2.0,
        tau: fgrid.tau,
        steps: fgrid.steps,
        half_width: fgrid.half_width(),
        margin,
    })
}

/// `Ẽ[φ(ξ)]` for `ξ ~ N(0, G)`.
pub fn gnormal_expect(g: &GFunction, phi: &TestFunction, opts: &PdeOptions) -> Result<PdeValue> {
    gnormal_expect_at(g, phi, 1.0, opts)
}

struct FddCtx<'a> {
    phi: &'a TestFunction,
    grids: Vec<(Grid, Vec<Stencil>)>,
}

impl FddCtx<'_> {
    fn value(&self, prefix: &mut Vec<f64>) -> Result<f64> {
        let j = prefix.len();
        if j == self.grids.len() {
            return self.phi.eval_checked(prefix);
        }
        let (grid, st) = &self.grids[j];
        let last = prefix.last().copied().unwrap_or(0.0);
        let mut u0 = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            prefix.push(last + grid.coord(idx));
            let v = self.value(prefix);
            prefix.pop();
            u0.push(v?);
        }
        let u = march(grid, st, u0, |_, _| {});
        Ok(u[grid.origin_index()])
    }
}

fn fdd_once(g: &GFunction, times: &[f64], phi: &TestFunction, h: f64, sigmas: f64) -> Result<(f64, Grid)> {
    let mut grids = Vec::with_capacity(times.len());
    let mut prev = 0.0;
    for &t in times {
        let dt = t - prev;
        prev = t;
        let m = margin(g, phi, dt, sigmas);
        let grid = Grid::auto(g, m + 2.0 * h, h, dt)?;
        let st = stencils(g, &grid)?;
        grids.push((grid, st));
    }
    let first = grids[0].0;
    let ctx = FddCtx { phi, grids };
    Ok((ctx.value(&mut Vec::new())?, first))
}

/// `Ẽ[φ(W_{t₁}, …, W_{t_p})]` for a one-dimensional G-Brownian motion, by
/// integrating out the last increment first with one G-heat solve per
/// frozen prefix.
pub fn gbm_fdd_expect(
    g: &GFunction,
    times: &[f64],
    phi: &TestFunction,
    opts: &PdeOptions,
) -> Result<PdeValue> {
    if g.dim() != 1 {
        return Err(Error::FddArityCap(format!(
            "dimension {} (only d = 1 supported)",
            g.dim()
        )));
    }
    if times.is_empty() || times.len() > FDD_ARITY_CAP {
        return Err(Error::FddArityCap(format!(
            "{} times (supported: 1..={FDD_ARITY_CAP})",
            times.len()
        )));
    }
    if phi.arity() != times.len() {
        return Err(Error::ArityMismatch {
            expected: times.len(),
            found: phi.arity(),
        });
    }
    let mut prev = 0.0;
    for &t in times {
        if !(t > prev && t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "times must be strictly increasing and positive, got {times:?}"
            )));
        }
        prev = t;
    }
    let h = opts.h.unwrap_or(match times.len() {
        1 => 0.02,
        2 => 0.05,
        _ => 0.1,
    });
    let margin = margin(g, phi, *times.last().unwrap(), opts.margin_sigmas);
    let (coarse, grid) = fdd_once(g, times, phi, h, opts.margin_sigmas)?;
    if !opts.refine {
        return Ok(PdeValue {
            value: coarse,
            error_bar: ERROR_BAR_FLOOR,
            h,
            tau: grid.tau,
            steps: grid.steps,
            half_width: grid.half_width(),
            margin,
        });
    }
    let (fine, fgrid) = fdd_once(g, times, phi, h / 2.0, opts.margin_sigmas)?;
    Ok(PdeValue {
        value: fine,
        error_bar: (coarse - fine).abs() + ERROR_BAR_FLOOR,
        h: h / 2.0,
        tau: fgrid.tau,
        steps: fgrid.steps,
        half_width: fgrid.half_width(),
        margin,
    })
}

/// `Ẽ[⟨W_t A, W_t⟩]` from the heat equation, paired with `G(A)·t`.
pub fn gbm_quadratic_identity(
    g: &GFunction,
    a: &DMatrix<f64>,
    t: f64,
    opts: &PdeOptions,
) -> Result<(PdeValue, f64)> {
    let d = g.dim();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: a.nrows().max(a.ncols()),
        });
    }
    check_symmetric(a)?;
    let reference = g.eval(a)?.0 * t;
    let a = a.clone();
    let phi = TestFunction::vector("quadratic", crate::function::Growth::Quadratic, move |x| {
        let mut s = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                s += x[i] * a[(i, j)] * x[j];
            }
        }
        s
    });
    Ok((gnormal_expect_at(g, &phi, t, opts)?, reference))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::{named, named_pair, Growth};
    use crate::gfunc::SigmaInterval;

    fn band() -> GFunction {
        GFunction::from_interval(SigmaInterval::new(0.5, 1.0).unwrap())
    }

    #[test]
    fn cfl_rejected() {
        assert!(matches!(
            Grid::new(&band(), 2.0, 0.1, 0.02, 1.0),
            Err(Error::Cfl { .. })
        ));
        assert!(Grid::new(&band(), 2.0, 0.1, 0.01, 1.0).is_ok());
    }

    #[test]
    fn linear_data_is_fixed() {
        let g = band();
        let grid = Grid::auto(&g, 3.0, 0.1, 0.7).unwrap();
        let u = solve_gheat(&g, &named("x").unwrap(), &grid).unwrap();
        for (idx, v) in u.values.iter().enumerate() {
            assert!((v - grid.point(idx)[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn convex_quadratic() {
        let g = band();
        let grid = Grid::auto(&g, 8.0, 0.05, 1.0).unwrap();
        let u = solve_gheat(&g, &named("x2").unwrap(), &grid).unwrap();
        assert!((u.at_origin() - 1.0).abs() < 2.0 * 0.05 * 0.05);
    }

    #[test]
    fn non_dominant_member_rejected() {
        let g = GFunction::from_rows(2, &[vec![1.0, 0.9, 0.9, 1.0], vec![1.0, 0.9, 0.9, 0.85]]).unwrap();
        let grid = Grid::auto(&g, 1.0, 0.25, 0.1).unwrap();
        let phi = TestFunction::vector("q", Growth::Quadratic, |x| x[0] * x[1]);
        let err = solve_gheat(&g, &phi, &grid).unwrap_err();
        assert_eq!(err, Error::NonMonotoneStencil { member: 1 });
        assert!(err.to_string().contains("regularize Theta or rotate coordinates"));
    }

    #[test]
    fn gnormal_examples() {
        let g = band();
        let opts = PdeOptions::default();
        let pos = gnormal_expect(&g, &named("pos").unwrap(), &opts).unwrap();
        assert!((pos.value - 0.398942).abs() < 0.005, "{pos:?}");
        let neg = gnormal_expect(&g, &named("neg_x2").unwrap(), &opts).unwrap();
        assert!((neg.value + 0.5).abs() < 0.005, "{neg:?}");
        let one = gnormal_expect(&g, &named("one").unwrap(), &opts).unwrap();
        assert_eq!(one.value, 1.0);
    }

    #[test]
    fn mixed_member_two_dimensional() {
        let g = GFunction::from_rows(2, &[vec![1.0, -0.5, -0.5, 0.75]]).unwrap();
        let phi = TestFunction::vector("xy", Growth::Quadratic, |x| x[0] * x[1]);
        let v = gnormal_expect(&g, &phi, &PdeOptions::default()).unwrap();
        assert!((v.value + 0.5).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn fdd_examples() {
        let g = band();
        let opts = PdeOptions::default();
        let incr = gbm_fdd_expect(&g, &[0.25, 1.0], &named_pair("incr").unwrap(), &opts).unwrap();
        assert!(incr.value.abs() < 0.005, "{incr:?}");
        let sq = gbm_fdd_expect(&g, &[0.25, 1.0], &named_pair("incr_sq").unwrap(), &opts).unwrap();
        assert!((sq.value - 0.75).abs() < 0.01, "{sq:?}");
        let single = gbm_fdd_expect(&g, &[0.5], &named("x2").unwrap(), &opts).unwrap();
        assert!((single.value - 0.5).abs() < 0.01, "{single:?}");
    }

    #[test]
    fn fdd_caps() {
        let g = band();
        let phi = TestFunction::new("sum", 4, Growth::Quadratic, |x| x.iter().sum());
        assert!(matches!(
            gbm_fdd_expect(&g, &[0.25, 0.5, 0.75, 1.0], &phi, &PdeOptions::default()),
            Err(Error::FddArityCap(_))
        ));
        let g2 = GFunction::diagonal(&[vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            gbm_fdd_expect(&g2, &[1.0], &named("x").unwrap(), &PdeOptions::default()),
            Err(Error::FddArityCap(_))
        ));
    }

    #[test]
    fn quadratic_identity_zero_matrix() {
        let (v, r) =
            gbm_quadratic_identity(&band(), &DMatrix::zeros(1, 1), 1.0, &PdeOptions::default()).unwrap();
        assert_eq!((v.value, r), (0.0, 0.0));
    }

    #[test]
    fn snapshots_are_ordered_in_time() {
        let g = band();
        let grid = Grid::auto(&g, 2.0, 0.25, 0.5).unwrap();
        let (last, snaps) = solve_gheat_snapshots(&g, &named("abs").unwrap(), &grid, 2).unwrap();
        assert_eq!(snaps[0].time, 0.0);
        assert!(snaps.windows(2).all(|w| w[0].time < w[1].time));
        let mut buf = Vec::new();
        last.write_csv_rows(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), grid.len());
    }
}
