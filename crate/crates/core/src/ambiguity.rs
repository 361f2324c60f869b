//! Finitely supported random vectors under finite model ambiguity.
//!
//! The upper expectation of `φ(X)` is the largest classical mean over the
//! members of an [`AmbiguitySet`]. All members live on one [`LatticeSpec`],
//! so partial sums of independent copies stay on a lattice and can be
//! propagated exactly by dynamic programming.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::function::TestFunction;

const PROB_TOL: f64 = 1e-12;
const LATTICE_TOL: f64 = 1e-12;

/// Default cap on the number of arguments accepted by [`nested_expect`].
pub const DEFAULT_NESTING_CAP: usize = 12;
/// Default cap on DP states held in one level.
pub const DEFAULT_STATE_CAP: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    dim: usize,
    step: f64,
    origin: Vec<f64>,
}

impl LatticeSpec {
    pub fn new(step: f64, origin: Vec<f64>) -> Result<Self> {
        if origin.is_empty() {
            return Err(Error::InvalidLattice("dimension must be positive".into()));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidLattice(format!(
                "step must be positive, got {step}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidLattice("origin must be finite".into()));
        }
        Ok(Self {
            dim: origin.len(),
            step,
            origin,
        })
    }

    /// Lattice `step·ℤᵈ` through the origin.
    pub fn centered(dim: usize, step: f64) -> Result<Self> {
        Self::new(step, vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    /// Integer coordinate of `x` on axis `axis`, if `x` is a lattice value there.
    pub fn axis_index(&self, axis: usize, x: f64) -> Option<i64> {
        let k = ((x - self.origin[axis]) / self.step).round();
        let back = self.origin[axis] + k * self.step;
        let scale = 1f64.max(x.abs()).max(self.origin[axis].abs());
        ((back - x).abs() <= LATTICE_TOL * scale).then_some(k as i64)
    }

    pub fn index_of(&self, point: &[f64]) -> Result<Vec<i64>> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: point.len(),
            });
        }
        point
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                self.axis_index(i, x).ok_or_else(|| Error::OffLattice {
                    point: point.to_vec(),
                })
            })
            .collect()
    }

    pub fn point(&self, index: &[i64]) -> Vec<f64> {
        index
            .iter()
            .zip(&self.origin)
            .map(|(&k, o)| o + k as f64 * self.step)
            .collect()
    }

    fn compatible(&self, other: &LatticeSpec) -> bool {
        self.dim == other.dim && (self.step - other.step).abs() <= LATTICE_TOL * self.step
    }
}

/// A classical probability law with finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    support: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(support: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} support points but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        let dim = support[0].len();
        if dim == 0 || support.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidDistribution("ragged support points".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
        {
            return Err(Error::InvalidDistribution(format!(
                "probability {i} is {p}, must be nonnegative"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        for i in 0..support.len() {
            for j in 0..i {
                if support[i] == support[j] {
                    return Err(Error::InvalidDistribution(format!(
                        "duplicate support point {:?}",
                        support[i]
                    )));
                }
            }
        }
        Ok(Self { support, probs })
    }

    pub fn scalar(support: &[f64], probs: &[f64]) -> Result<Self> {
        Self::new(support.iter().map(|&x| vec![x]).collect(), probs.to_vec())
    }

    pub fn point_mass(point: Vec<f64>) -> Self {
        Self {
            support: vec![point],
            probs: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean_of(&self, f: &TestFunction) -> Result<f64> {
        let mut acc = 0.0;
        for (z, &p) in self.support.iter().zip(&self.probs) {
            acc += p * f.eval_checked(z)?;
        }
        Ok(acc)
    }

    pub fn prob_of(&self, event: impl Fn(&[f64]) -> bool) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .filter(|(z, _)| event(z))
            .map(|(_, p)| p)
            .sum()
    }

    /// `E_P[X Xᵀ]`, row-major.
    pub fn second_moment(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d * d];
        for (z, &p) in self.support.iter().zip(&self.probs) {
            for i in 0..d {
                for j in 0..d {
                    m[i * d + j] += p * z[i] * z[j];
                }
            }
        }
        m
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (z, &p) in self.support.iter().zip(&self.probs) {
            for (acc, x) in m.iter_mut().zip(z) {
                *acc += p * x;
            }
        }
        m
    }
}

/// The value of an extremal expectation and the member attaining it
/// (lowest index on ties).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attained {
    pub value: f64,
    pub member: usize,
}

/// The law of one random vector under sub-linear expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguitySet {
    lattice: LatticeSpec,
    members: Vec<DiscreteDistribution>,
    indices: Vec<Vec<Vec<i64>>>,
}

impl AmbiguitySet {
    pub fn new(lattice: LatticeSpec, members: Vec<DiscreteDistribution>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyAmbiguity);
        }
        let mut indices = Vec::with_capacity(members.len());
        for m in &members {
            if m.dim() != lattice.dim() {
                return Err(Error::DimensionMismatch {
                    expected: lattice.dim(),
                    found: m.dim(),
                });
            }
            indices.push(
                m.support
                    .iter()
                    .map(|z| lattice.index_of(z))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self {
            lattice,
            members,
            indices,
        })
    }

    /// The family `{P_v : v ∈ variances}` on `{-1, 0, 1}` with
    /// `P_v(±1) = v/2`, `P_v(0) = 1 - v`. Every member has mean zero.
    pub fn symmetric_three_point(variances: &[f64]) -> Result<Self> {
        let members = variances
            .iter()
            .map(|&v| {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!(
                        "three-point variance {v} outside [0, 1]"
                    )));
                }
                DiscreteDistribution::scalar(&[-1.0, 0.0, 1.0], &[v / 2.0, 1.0 - v, v / 2.0])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(LatticeSpec::centered(1, 1.0)?, members)
    }

    /// `B(lower, upper)`: the two-member three-point family.
    pub fn bernoulli_band(lower: f64, upper: f64) -> Result<Self> {
        if lower > upper {
            return Err(Error::InvalidArgument(format!(
                "lower variance {lower} exceeds upper {upper}"
            )));
        }
        Self::symmetric_three_point(&[lower, upper])
    }

    pub fn point_mass(dim: usize) -> Self {
        Self::new(
            LatticeSpec::centered(dim, 1.0).expect("positive dimension"),
            vec![DiscreteDistribution::point_mass(vec![0.0; dim])],
        )
        .expect("origin is a lattice point")
    }

    /// Law of `(X, Y)` with `Y` independent of `X` in the nested sense:
    /// each member picks a member of `X` and, for every support point of
    /// it, a member of `Y`.
    pub fn peng_product(x: &AmbiguitySet, y: &AmbiguitySet) -> Result<Self> {
        const CAP: usize = 1 << 14;
        if !(x.lattice.step - y.lattice.step)
            .abs()
            .le(&(LATTICE_TOL * x.lattice.step))
        {
            return Err(Error::InvalidArgument("product needs a common step".into()));
        }
        let mut origin = x.lattice.origin.clone();
        origin.extend_from_slice(&y.lattice.origin);
        let lattice = LatticeSpec::new(x.lattice.step, origin)?;
        let my = y.members.len();
        let mut members = Vec::new();
        for px in &x.members {
            let k = px.support.len();
            let count = (my as f64).powi(k as i32);
            if members.len() as f64 + count > CAP as f64 {
                return Err(Error::LatticeBlowup {
                    size: members.len() + count as usize,
                    cap: CAP,
                });
            }
            let mut choice = vec![0usize; k];
            loop {
                let mut support = Vec::new();
                let mut probs = Vec::new();
                let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
                for (a, (za, &pa)) in px.support.iter().zip(&px.probs).enumerate() {
                    let py = &y.members[choice[a]];
                    for (zb, &pb) in py.support.iter().zip(&py.probs) {
                        let mut z = za.clone();
                        z.extend_from_slice(zb);
                        let key: Vec<u64> = z.iter().map(|v| v.to_bits()).collect();
                        match seen.get(&key) {
                            Some(&i) => probs[i] += pa * pb,
                            None => {
                                seen.insert(key, support.len());
                                support.push(z);
                                probs.push(pa * pb);
                            }
                        }
                    }
                }
                members.push(DiscreteDistribution::new(support, probs)?);
                // odometer over the per-point choice of Y-member
                let mut i = 0;
                while i < k {
                    choice[i] += 1;
                    if choice[i] < my {
                        break;
                    }
                    choice[i] = 0;
                    i += 1;
                }
                if i == k {
                    break;
                }
            }
        }
        Self::new(lattice, members)
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim
    }

    pub fn members(&self) -> &[DiscreteDistribution] {
        &self.members
    }

    /// Largest sup-norm over all support points of all members.
    pub fn support_radius(&self) -> f64 {
        self.members
            .iter()
            .flat_map(|m| m.support.iter())
            .flat_map(|z| z.iter())
            .fold(0.0f64, |r, x| r.max(x.abs()))
    }

    /// `max_P Σ_z P(z)·f(z)`.
    pub fn expect_upper(&self, f: &TestFunction) -> Result<Attained> {
        check_arity(f, 1)?;
        let mut best: Option<Attained> = None;
        for (i, m) in self.members.iter().enumerate() {
            let v = m.mean_of(f)?;
            if best.is_none_or(|b| v > b.value) {
                best = Some(Attained { value: v, member: i });
            }
        }
        Ok(best.expect("members nonempty"))
    }

    /// The conjugate `-E[-f]`, i.e. the smallest member mean.
    pub fn expect_lower(&self, f: &TestFunction) -> Result<Attained> {
        let up = self.expect_upper(&f.negate())?;
        Ok(Attained {
            value: -up.value,
            member: up.member,
        })
    }

    pub fn capacity_upper(&self, event: impl Fn(&[f64]) -> bool) -> f64 {
        self.members
            .iter()
            .map(|m| m.prob_of(&event))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `1 - C(Aᶜ)`.
    pub fn capacity_lower(&self, event: impl Fn(&[f64]) -> bool) -> f64 {
        1.0 - self.capacity_upper(|z| !event(z))
    }

    /// Componentwise clamp `(-c) ∨ (X ∧ c)`; collided points are merged.
    pub fn truncate(&self, c: f64) -> Result<AmbiguitySet> {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "truncation level must be positive, got {c}"
            )));
        }
        for axis in 0..self.dim() {
            if self.lattice.axis_index(axis, c).is_none() || self.lattice.axis_index(axis, -c).is_none() {
                return Err(Error::TruncationOffLattice { level: c });
            }
        }
        let members = self
            .members
            .iter()
            .map(|m| {
                let mut support: Vec<Vec<f64>> = Vec::new();
                let mut probs: Vec<f64> = Vec::new();
                for (z, &p) in m.support.iter().zip(&m.probs) {
                    let clamped: Vec<f64> = z.iter().map(|x| x.clamp(-c, c)).collect();
                    match support.iter().position(|s| *s == clamped) {
                        Some(i) => probs[i] += p,
                        None => {
                            support.push(clamped);
                            probs.push(p);
                        }
                    }
                }
                DiscreteDistribution::new(support, probs)
            })
            .collect::<Result<Vec<_>>>()?;
        AmbiguitySet::new(self.lattice.clone(), members)
    }

    /// Member second-moment matrices `E_P[X Xᵀ]` (row-major `d×d`).
    pub fn second_moments(&self) -> Vec<Vec<f64>> {
        self.members.iter().map(|m| m.second_moment()).collect()
    }

    /// `(E[X²] lower, E[X²] upper)` for a scalar law.
    pub fn variance_band(&self) -> Result<(f64, f64)> {
        if self.dim() != 1 {
            return Err(Error::OneDimensionalOnly(self.dim()));
        }
        let sq = TestFunction::scalar("x2", crate::function::Growth::Quadratic, |x| x * x);
        Ok((self.expect_lower(&sq)?.value, self.expect_upper(&sq)?.value))
    }

    fn member_steps(&self) -> Vec<Vec<(Vec<i64>, f64)>> {
        self.indices
            .iter()
            .zip(&self.members)
            .map(|(idx, m)| idx.iter().cloned().zip(m.probs.iter().copied()).collect())
            .collect()
    }
}

fn check_arity(f: &TestFunction, expected: usize) -> Result<()> {
    if f.arity() != expected {
        return Err(Error::ArityMismatch {
            expected,
            found: f.arity(),
        });
    }
    Ok(())
}

/// `E[f(X₁, …, X_k)]` where each `X_j` is independent of `(X₁, …, X_{j-1})`.
///
/// The last argument is integrated out first. List order is the
/// independence order; it is not symmetrised.
pub fn nested_expect(xs: &[&AmbiguitySet], f: &TestFunction) -> Result<f64> {
    nested_expect_with_cap(xs, f, DEFAULT_NESTING_CAP)
}

pub fn nested_expect_with_cap(xs: &[&AmbiguitySet], f: &TestFunction, cap: usize) -> Result<f64> {
    check_arity(f, xs.len())?;
    if xs.len() > cap {
        return Err(Error::NestingTooDeep { depth: xs.len(), cap });
    }
    let mut prefix = Vec::new();
    nest(xs, f, &mut prefix)
}

fn nest(xs: &[&AmbiguitySet], f: &TestFunction, prefix: &mut Vec<f64>) -> Result<f64> {
    let Some((head, rest)) = xs.split_first() else {
        return f.eval_checked(prefix);
    };
    let mut best = f64::NEG_INFINITY;
    for m in &head.members {
        let mut acc = 0.0;
        for (z, &p) in m.support.iter().zip(&m.probs) {
            let len = prefix.len();
            prefix.extend_from_slice(z);
            let v = nest(rest, f, prefix)?;
            prefix.truncate(len);
            acc += p * v;
        }
        best = best.max(acc);
    }
    Ok(best)
}

/// Dense box of integer lattice indices, row-major with the last axis fastest.
#[derive(Debug, Clone)]
struct IndexBox {
    lo: Vec<i64>,
    strides: Vec<usize>,
    len: usize,
}

impl IndexBox {
    fn new(lo: Vec<i64>, hi: &[i64]) -> Self {
        let extent: Vec<usize> = lo.iter().zip(hi).map(|(l, h)| (h - l + 1) as usize).collect();
        let mut strides = vec![1usize; extent.len()];
        for i in (0..extent.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * extent[i + 1];
        }
        let len = extent.iter().product();
        Self { lo, strides, len }
    }

    fn index_at(&self, mut linear: usize, out: &mut [i64]) {
        for ((o, lo), stride) in out.iter_mut().zip(&self.lo).zip(&self.strides) {
            *o = lo + (linear / stride) as i64;
            linear %= stride;
        }
    }

    fn linear(&self, idx: &[i64]) -> usize {
        idx.iter()
            .zip(&self.lo)
            .zip(&self.strides)
            .map(|((k, l), s)| (k - l) as usize * s)
            .sum()
    }
}

fn box_size(lo: &[i64], hi: &[i64]) -> usize {
    lo.iter()
        .zip(hi)
        .map(|(l, h)| (h - l + 1) as usize)
        .fold(1usize, |a, b| a.saturating_mul(b))
}

/// `E[g(scale·S_n)]` for `n` independent copies of `x`.
pub fn iid_sum_expect(x: &AmbiguitySet, n: usize, g: &TestFunction, scale: f64) -> Result<f64> {
    let laws = vec![x; n];
    independent_sum_expect(&laws, g, scale, DEFAULT_STATE_CAP)
}

/// `E[g(scale·(X₁ + … + X_n))]` for independent (not necessarily
/// identically distributed) summands on lattices with a common step.
///
/// Backward recursion on the partial-sum lattice:
/// `v_n(s) = g(scale·s)`, `v_{k-1}(s) = max_P Σ_z P(z)·v_k(s+z)`, result `v_0(0)`.
pub fn independent_sum_expect(
    laws: &[&AmbiguitySet],
    g: &TestFunction,
    scale: f64,
    state_cap: usize,
) -> Result<f64> {
    check_arity(g, 1)?;
    if laws.is_empty() {
        return Err(Error::InvalidArgument("need at least one summand".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let base = &laws[0].lattice;
    let d = base.dim;
    for l in laws {
        if !base.compatible(&l.lattice) {
            return Err(Error::InvalidArgument(
                "summands must share dimension and lattice step".into(),
            ));
        }
    }
    let step = base.step;

    // per-level index boxes: box[j] covers partial sums of the first j laws
    let mut los = vec![vec![0i64; d]];
    let mut his = vec![vec![0i64; d]];
    let mut origins = vec![vec![0.0f64; d]];
    for l in laws {
        let (lo_l, hi_l) = law_bounds(l);
        let prev_lo = los.last().unwrap();
        let prev_hi = his.last().unwrap();
        let lo: Vec<i64> = prev_lo.iter().zip(&lo_l).map(|(a, b)| a + b).collect();
        let hi: Vec<i64> = prev_hi.iter().zip(&hi_l).map(|(a, b)| a + b).collect();
        let size = box_size(&lo, &hi);
        if size > state_cap {
            return Err(Error::LatticeBlowup { size, cap: state_cap });
        }
        let o: Vec<f64> = origins
            .last()
            .unwrap()
            .iter()
            .zip(&l.lattice.origin)
            .map(|(a, b)| a + b)
            .collect();
        los.push(lo);
        his.push(hi);
        origins.push(o);
    }

    let n = laws.len();
    let top = IndexBox::new(los[n].clone(), &his[n]);
    let mut idx = vec![0i64; d];
    let mut arg = vec![0.0; d];
    let mut values = Vec::with_capacity(top.len);
    for lin in 0..top.len {
        top.index_at(lin, &mut idx);
        for i in 0..d {
            arg[i] = scale * (origins[n][i] + idx[i] as f64 * step);
        }
        values.push(g.eval_checked(&arg)?);
    }

    for j in (1..=n).rev() {
        let next_box = IndexBox::new(los[j].clone(), &his[j]);
        let cur_box = IndexBox::new(los[j - 1].clone(), &his[j - 1]);
        let members: Vec<Vec<(isize, f64)>> = laws[j - 1]
            .member_steps()
            .into_iter()
            .map(|steps| {
                steps
                    .into_iter()
                    .map(|(z, p)| {
                        let off: isize = z
                            .iter()
                            .zip(&next_box.strides)
                            .map(|(zi, s)| *zi as isize * *s as isize)
                            .sum();
                        (off, p)
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(cur_box.len);
        for lin in 0..cur_box.len {
            cur_box.index_at(lin, &mut idx);
            let base_off = next_box.linear(&idx) as isize;
            let mut best = f64::NEG_INFINITY;
            for m in &members {
                let mut acc = 0.0;
                for &(off, p) in m {
                    acc += p * values[(base_off + off) as usize];
                }
                if acc > best {
                    best = acc;
                }
            }
            out.push(best);
        }
        values = out;
    }
    debug_assert_eq!(values.len(), 1);
    Ok(values[0])
}

fn law_bounds(l: &AmbiguitySet) -> (Vec<i64>, Vec<i64>) {
    let d = l.dim();
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for member in &l.indices {
        for z in member {
            for i in 0..d {
                lo[i] = lo[i].min(z[i]);
                hi[i] = hi[i].max(z[i]);
            }
        }
    }
    (lo, hi)
}

/// `E[max_{i≤n} |scale·S_i|]` for a scalar law, by DP over the augmented
/// state (partial sum, running maximum).
pub fn running_max_expect(x: &AmbiguitySet, n: usize, scale: f64) -> Result<f64> {
    running_max_expect_with_cap(x, n, scale, DEFAULT_STATE_CAP)
}

pub fn running_max_expect_with_cap(x: &AmbiguitySet, n: usize, scale: f64, state_cap: usize) -> Result<f64> {
    if x.dim() != 1 {
        return Err(Error::OneDimensionalOnly(x.dim()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let origin = x.lattice.origin[0];
    let step = x.lattice.step;
    let abs_sum = |level: usize, k: i64| (scale * (level as f64 * origin + k as f64 * step)).abs();

    // union of support offsets, so transitions can be indexed once per state
    let mut offsets: Vec<i64> = x.indices.iter().flatten().map(|z| z[0]).collect();
    offsets.sort_unstable();
    offsets.dedup();
    let members: Vec<Vec<(usize, f64)>> = x
        .indices
        .iter()
        .zip(&x.members)
        .map(|(idx, m)| {
            idx.iter()
                .zip(&m.probs)
                .map(|(z, &p)| (offsets.binary_search(&z[0]).unwrap(), p))
                .collect()
        })
        .collect();

    type Key = (i64, u64);
    // forward pass: reachable states and their successor ids per level
    let mut levels: Vec<Vec<Key>> = vec![vec![(0, 0f64.to_bits())]];
    let mut transitions: Vec<Vec<u32>> = Vec::with_capacity(n);
    for level in 1..=n {
        let prev = levels.last().unwrap();
        let mut ids: HashMap<Key, u32> = HashMap::new();
        let mut next: Vec<Key> = Vec::new();
        let mut trans = Vec::with_capacity(prev.len() * offsets.len());
        for &(k, m_bits) in prev {
            let m = f64::from_bits(m_bits);
            for &z in &offsets {
                let k2 = k + z;
                let m2 = m.max(abs_sum(level, k2));
                let key = (k2, m2.to_bits());
                let id = *ids.entry(key).or_insert_with(|| {
                    next.push(key);
                    (next.len() - 1) as u32
                });
                trans.push(id);
            }
        }
        if next.len() > state_cap {
            return Err(Error::LatticeBlowup {
                size: next.len(),
                cap: state_cap,
            });
        }
        transitions.push(trans);
        levels.push(next);
    }

    let mut values: Vec<f64> = levels[n].iter().map(|&(_, m)| f64::from_bits(m)).collect();
    for level in (0..n).rev() {
        let trans = &transitions[level];
        let width = offsets.len();
        values = (0..levels[level].len())
            .map(|s| {
                let row = &trans[s * width..(s + 1) * width];
                members
                    .iter()
                    .map(|m| m.iter().map(|&(o, p)| p * values[row[o] as usize]).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    }
    Ok(values[0])
}
