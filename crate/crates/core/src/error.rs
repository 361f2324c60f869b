use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("support point {point:?} is not on the lattice")]
    OffLattice { point: Vec<f64> },
    #[error("ambiguity set has no members")]
    EmptyAmbiguity,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("arity mismatch: test function takes {expected} arguments, {found} supplied")]
    ArityMismatch { expected: usize, found: usize },
    #[error("non-finite test value at {point:?}")]
    NonFiniteValue { point: Vec<f64> },
    #[error("truncation off-lattice: clamp level {level} is not a lattice point")]
    TruncationOffLattice { level: f64 },
    #[error("nesting too deep: {depth} > cap {cap}")]
    NestingTooDeep { depth: usize, cap: usize },
    #[error("lattice blowup: {size} states exceed cap {cap}")]
    LatticeBlowup { size: usize, cap: usize },
    #[error("1-d only: got dimension {0}")]
    OneDimensionalOnly(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("level mismatch: {0}")]
    LevelMismatch(String),
    #[error("conditional mean sign violated at node {node}: upper mean {mean}")]
    ConditionalMeanSign { node: usize, mean: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("CFL violated: tau*d*sigma2_max/h^2 = {ratio} > 1")]
    Cfl { ratio: f64 },
    #[error("non-monotone stencil; regularize Theta or rotate coordinates (member {member})")]
    NonMonotoneStencil { member: usize },
    #[error("fdd arity cap: {0}")]
    FddArityCap(String),
    #[error("row n={n}: {source}")]
    InRow { n: usize, source: Box<Error> },
}

impl Error {
    /// True for errors raised by size caps rather than bad input.
    pub fn is_cap(&self) -> bool {
        match self {
            Error::InRow { source, .. } => source.is_cap(),
            _ => matches!(
                self,
                Error::NestingTooDeep { .. } | Error::LatticeBlowup { .. } | Error::FddArityCap(_)
            ),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
