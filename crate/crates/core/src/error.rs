use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid resolution {0}: must be odd and at least 5")]
    InvalidResolution(usize),
    #[error("resolution {resolution} exceeds the cap {cap} for this case")]
    ResolutionCap { resolution: usize, cap: usize },
    #[error("mask node {0} lies outside the lattice")]
    MaskOutOfLattice(usize),
    #[error("unknown closed form `{0}`")]
    UnknownFormula(String),
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("parameter out of range: {0}")]
    ParamOutOfRange(String),
    #[error("formula `{name}` undefined at unmasked node {node}")]
    UndefinedAtNode { name: String, node: usize },
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("stencil leaves the domain at interior node {0}")]
    StencilLeavesDomain(usize),
    #[error("sample point too close to a singular or gluing locus: {0}")]
    SampleTooClose(String),
    #[error("function is not rotation invariant (deviation {0:.3e})")]
    NotRotationInvariant(f64),
    #[error("function fails the cone check (violation {0:.3e})")]
    NotInCone(f64),
    #[error("iteration did not converge after {iterations} sweeps (delta {delta:.3e})")]
    NoConvergence { iterations: usize, delta: f64 },
    #[error("majorant iteration diverged: input is not in the majorizable class")]
    NotMajorizable,
    #[error("sequence is not strictly increasing")]
    NotIncreasing,
    #[error("lower sandwich sequence decreased at cutoff index {0}")]
    NonMonotoneSandwich(usize),
    #[error("monotonicity in lambda violated by {0:.3e}")]
    MonotonicityViolation(f64),
    #[error("node count {count} exceeds the LP cap {cap}")]
    LpCapExceeded { count: usize, cap: usize },
    #[error("linear program is {0}")]
    LpFailure(String),
    #[error("ray leaves the domain: {0}")]
    RayExitsDomain(String),
    #[error("no usable samples: {0}")]
    NoSamples(String),
    #[error("growth precondition failed: {0}")]
    GrowthPrecondition(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
