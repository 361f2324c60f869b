//! Randomized checks of the sub-linear expectation axioms on finite
//! ambiguity sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ambiguity::{AmbiguitySet, DiscreteDistribution, LatticeSpec};
use crate::error::Result;
use crate::function::{Growth, TestFunction};

pub const AXIOM_TOL: f64 = 1e-10;

/// A random set of dimension 1 or 2: up to 6 support points in
/// `[-3, 3]^d` on a step-`1/2` or step-`1` lattice, up to 4 members.
pub fn random_ambiguity_set(rng: &mut impl Rng) -> AmbiguitySet {
    let dim = rng.gen_range(1..=2);
    let step = if rng.gen_bool(0.5) { 0.5 } else { 1.0 };
    let lattice = LatticeSpec::centered(dim, step).expect("valid lattice");
    let mut points: Vec<Vec<f64>> = Vec::new();
    let size = rng.gen_range(1..=6);
    while points.len() < size {
        let reach = (3.0 / step) as i64;
        let p: Vec<f64> = (0..dim)
            .map(|_| rng.gen_range(-reach..=reach) as f64 * step)
            .collect();
        if !points.contains(&p) {
            points.push(p);
        }
    }
    let members = (0..rng.gen_range(1..=4))
        .map(|_| {
            // some members drop points to exercise differing supports
            let keep: Vec<usize> = (0..points.len()).filter(|_| rng.gen_bool(0.8)).collect();
            let keep = if keep.is_empty() { vec![0] } else { keep };
            let w: Vec<f64> = keep.iter().map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = w.iter().sum();
            let mut probs: Vec<f64> = w.iter().map(|x| x / total).collect();
            let head: f64 = probs[..probs.len() - 1].iter().sum();
            *probs.last_mut().unwrap() = 1.0 - head;
            let support = keep.iter().map(|&i| points[i].clone()).collect();
            DiscreteDistribution::new(support, probs).expect("valid member")
        })
        .collect();
    AmbiguitySet::new(lattice, members).expect("points on lattice")
}

fn first(x: &[f64]) -> f64 {
    x[0]
}

fn last(x: &[f64]) -> f64 {
    x[x.len() - 1]
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// The fixed test-function pairs `(f, g)` used by [`verify_axioms`].
pub fn axiom_pairs() -> Vec<(TestFunction, TestFunction)> {
    fn v(label: &str, growth: Growth, f: fn(&[f64]) -> f64) -> TestFunction {
        TestFunction::vector(label, growth, f)
    }
    vec![
        (
            v("x1", Growth::Quadratic, first),
            v("|x|^2", Growth::Quadratic, norm2),
        ),
        (
            v("sin x1", Growth::Bounded, |x| first(x).sin()),
            v("cos xd", Growth::Bounded, |x| last(x).cos()),
        ),
        (
            v("x1+", Growth::Quadratic, |x| first(x).max(0.0)),
            v("-xd", Growth::Quadratic, |x| -last(x)),
        ),
        (
            v("-|x|^2", Growth::Quadratic, |x| -norm2(x)),
            v("x1*xd", Growth::Quadratic, |x| first(x) * last(x)),
        ),
        (
            v("|x1|^3", Growth::Power(3.0), |x| first(x).abs().powi(3)),
            v("xd^3", Growth::Power(3.0), |x| last(x).powi(3)),
        ),
        (
            v("1{x1>0}", Growth::Bounded, |x| f64::from(first(x) > 0.0)),
            v("1{xd<=0}", Growth::Bounded, |x| f64::from(last(x) <= 0.0)),
        ),
        (
            v("exp(-|x|^2)", Growth::Bounded, |x| (-norm2(x)).exp()),
            v("sum", Growth::Quadratic, |x| x.iter().sum()),
        ),
        (
            v("(x1-1)+", Growth::Quadratic, |x| (first(x) - 1.0).max(0.0)),
            v("(1-xd)+", Growth::Quadratic, |x| (1.0 - last(x)).max(0.0)),
        ),
        (
            v("|x|", Growth::Quadratic, |x| norm2(x).sqrt()),
            v("-|x1|", Growth::Quadratic, |x| -first(x).abs()),
        ),
        (
            v("x1^2-xd", Growth::Quadratic, |x| first(x).powi(2) - last(x)),
            v("atan x1", Growth::Bounded, |x| first(x).atan()),
        ),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomCheck {
    pub name: &'static str,
    pub worst: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    pub sets: usize,
    pub pairs: usize,
    pub checks: Vec<AxiomCheck>,
}

impl AxiomReport {
    pub fn total_violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }
}

const NAMES: [&str; 6] = [
    "monotonicity",
    "constant-preserving",
    "subadditivity",
    "positive-homogeneity",
    "conjugate-ordering",
    "capacity-subadditivity",
];

/// Runs every axiom on `sets` seeded random sets against each pair of
/// [`axiom_pairs`]. Monotonicity compares `f` with `f + g²`.
pub fn verify_axioms(sets: usize, seed: u64) -> Result<AxiomReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = axiom_pairs();
    let mut worst = [0.0f64; 6];
    let mut violations = [0usize; 6];
    let mut record = |i: usize, excess: f64| {
        let excess = excess.max(0.0);
        worst[i] = worst[i].max(excess);
        if excess > AXIOM_TOL {
            violations[i] += 1;
        }
    };
    for _ in 0..sets {
        let x = random_ambiguity_set(&mut rng);
        let up = |f: &TestFunction| x.expect_upper(f).map(|a| a.value);
        for (f, g) in &pairs {
            let ef = up(f)?;
            let eg = up(g)?;

            let gg = g.clone();
            let f_plus_sq = f.add(&TestFunction::vector("g^2", Growth::Quadratic, move |z| {
                gg.eval(z).powi(2)
            }));
            record(0, ef - up(&f_plus_sq)?);

            let c: f64 = rng.gen_range(-5.0..5.0);
            record(1, (up(&TestFunction::constant(c))? - c).abs());
            record(1, (up(&f.shift(c))? - ef - c).abs());

            record(2, up(&f.add(g))? - ef - eg);

            let lambda: f64 = rng.gen_range(0.0..4.0);
            record(3, (up(&f.scale(lambda))? - lambda * ef).abs());

            record(4, x.expect_lower(f)?.value - ef);
        }
        let a = rng.gen_range(-3.0..3.0);
        let b = rng.gen_range(-3.0..3.0);
        let in_a = |z: &[f64]| z[0] <= a;
        let in_b = |z: &[f64]| z[z.len() - 1] > b;
        let union = |z: &[f64]| in_a(z) || in_b(z);
        record(
            5,
            x.capacity_upper(union) - x.capacity_upper(in_a) - x.capacity_upper(in_b),
        );
        record(
            5,
            x.capacity_lower(union) - x.capacity_lower(in_a) - x.capacity_upper(in_b),
        );
    }
    Ok(AxiomReport {
        sets,
        pairs: pairs.len(),
        checks: (0..6)
            .map(|i| AxiomCheck {
                name: NAMES[i],
                worst: worst[i],
                violations: violations[i],
            })
            .collect(),
    })
}
