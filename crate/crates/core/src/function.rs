//! Deterministic test functions `φ` evaluated on tuples of lattice vectors.
//!
//! A function of arity `p` over `d`-vectors receives the `p` arguments
//! concatenated into one slice of length `p * d`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Growth class of a test function. Used for report labels and for sizing
/// the PDE domain; it is never used to change a computed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Growth {
    Bounded,
    Quadratic,
    Power(f64),
}

impl Growth {
    pub fn exponent(&self) -> f64 {
        match self {
            Growth::Bounded => 0.0,
            Growth::Quadratic => 2.0,
            Growth::Power(p) => *p,
        }
    }

    fn max(self, other: Growth) -> Growth {
        if other.exponent() > self.exponent() {
            other
        } else {
            self
        }
    }
}

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct TestFunction {
    arity: usize,
    growth: Growth,
    label: String,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.label)
            .field("arity", &self.arity)
            .field("growth", &self.growth)
            .finish()
    }
}

impl TestFunction {
    pub fn new<F>(label: impl Into<String>, arity: usize, growth: Growth, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            arity,
            growth,
            label: label.into(),
            eval: Arc::new(eval),
        }
    }

    /// A single-argument function of a scalar.
    pub fn scalar<F>(label: impl Into<String>, growth: Growth, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(label, 1, growth, move |x: &[f64]| f(x[0]))
    }

    /// A single-argument function of a vector.
    pub fn vector<F>(label: impl Into<String>, growth: Growth, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(label, 1, growth, f)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), 1, Growth::Bounded, move |_| c)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn growth(&self) -> Growth {
        self.growth
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, args: &[f64]) -> f64 {
        (self.eval)(args)
    }

    /// Evaluates and rejects non-finite results.
    pub fn eval_checked(&self, args: &[f64]) -> Result<f64> {
        let v = (self.eval)(args);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteValue { point: args.to_vec() })
        }
    }

    pub fn negate(&self) -> Self {
        let inner = Arc::clone(&self.eval);
        Self {
            arity: self.arity,
            growth: self.growth,
            label: format!("-({})", self.label),
            eval: Arc::new(move |x| -inner(x)),
        }
    }

    pub fn scale(&self, lambda: f64) -> Self {
        let inner = Arc::clone(&self.eval);
        Self {
            arity: self.arity,
            growth: self.growth,
            label: format!("{lambda}*({})", self.label),
            eval: Arc::new(move |x| lambda * inner(x)),
        }
    }

    pub fn shift(&self, c: f64) -> Self {
        let inner = Arc::clone(&self.eval);
        Self {
            arity: self.arity,
            growth: self.growth,
            label: format!("({})+{c}", self.label),
            eval: Arc::new(move |x| inner(x) + c),
        }
    }

    pub fn add(&self, other: &TestFunction) -> Self {
        assert_eq!(self.arity, other.arity, "arity mismatch in TestFunction::add");
        let a = Arc::clone(&self.eval);
        let b = Arc::clone(&other.eval);
        Self {
            arity: self.arity,
            growth: self.growth.max(other.growth),
            label: format!("({})+({})", self.label, other.label),
            eval: Arc::new(move |x| a(x) + b(x)),
        }
    }

    /// `x ↦ φ(λ·x)` on every argument.
    pub fn rescale_argument(&self, lambda: f64) -> Self {
        let inner = Arc::clone(&self.eval);
        Self {
            arity: self.arity,
            growth: self.growth,
            label: format!("({})∘{lambda}x", self.label),
            eval: Arc::new(move |x| {
                let y: Vec<f64> = x.iter().map(|v| v * lambda).collect();
                inner(&y)
            }),
        }
    }
}

/// Looks up a named scalar test function. These ids are what experiment
/// configs and the browser demo refer to.
pub fn named(id: &str) -> Option<TestFunction> {
    let f = match id {
        "x" => TestFunction::scalar(id, Growth::Quadratic, |x| x),
        "neg_x" => TestFunction::scalar(id, Growth::Quadratic, |x| -x),
        "x2" => TestFunction::scalar(id, Growth::Quadratic, |x| x * x),
        "neg_x2" => TestFunction::scalar(id, Growth::Quadratic, |x| -x * x),
        "pos" => TestFunction::scalar(id, Growth::Quadratic, |x| x.max(0.0)),
        "neg_pos" => TestFunction::scalar(id, Growth::Quadratic, |x| -x.max(0.0)),
        "abs" => TestFunction::scalar(id, Growth::Quadratic, f64::abs),
        "sin" => TestFunction::scalar(id, Growth::Bounded, f64::sin),
        "cos" => TestFunction::scalar(id, Growth::Bounded, f64::cos),
        "x2m1pos" => TestFunction::scalar(id, Growth::Quadratic, |x| (x * x - 1.0).max(0.0)),
        "x3" => TestFunction::scalar(id, Growth::Power(3.0), |x| x * x * x),
        "abs3" => TestFunction::scalar(id, Growth::Power(3.0), |x| x.abs().powi(3)),
        "one" => TestFunction::scalar(id, Growth::Bounded, |_| 1.0),
        "bump" => TestFunction::scalar(id, Growth::Bounded, |x| (-x * x).exp()),
        "ind_pos" => TestFunction::scalar(id, Growth::Bounded, |x| f64::from(x > 0.0)),
        _ => return None,
    };
    Some(f)
}

/// Named two-argument functions `ψ(x₁, x₂)` of scalar arguments.
pub fn named_pair(id: &str) -> Option<TestFunction> {
    let f = match id {
        "incr" => TestFunction::new(id, 2, Growth::Quadratic, |x| x[1] - x[0]),
        "neg_incr" => TestFunction::new(id, 2, Growth::Quadratic, |x| x[0] - x[1]),
        "incr_sq" => TestFunction::new(id, 2, Growth::Quadratic, |x| (x[1] - x[0]).powi(2)),
        "prod" => TestFunction::new(id, 2, Growth::Quadratic, |x| x[0] * x[1]),
        "first_sq" => TestFunction::new(id, 2, Growth::Quadratic, |x| x[0] * x[0]),
        "last_sq" => TestFunction::new(id, 2, Growth::Quadratic, |x| x[1] * x[1]),
        "sum_pos" => TestFunction::new(id, 2, Growth::Quadratic, |x| (x[0] + x[1]).max(0.0)),
        _ => return None,
    };
    Some(f)
}
