use thiserror::Error;

/// Errors across the library. Variants are named after the contract they
/// enforce rather than the call site that raised them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("not a generator: {0}")]
    NotAGenerator(String),
    #[error("stationary distribution is degenerate (zero component or non-unique null space)")]
    DegenerateStationary,
    #[error("generator has complex eigenvalues beyond tolerance")]
    ComplexSpectrum,
    #[error("generator spectrum is degenerate or defective: {0}")]
    DegenerateSpectrum(String),
    #[error("dominant eigenspace is not real")]
    NonRealEigenspace,
    #[error("dominant spectral projection has rank zero")]
    RankZero,
    #[error("embedding is not injective")]
    DegenerateEmbedding,
    #[error("mu={0} leaves negative off-diagonal rates or breaks spectral dominance")]
    NoValidMu(f64),
    #[error("bisection failed to bracket the normalization identity")]
    BisectionFailure,
    #[error("psi must be positive, got {0}")]
    InvalidPsi(f64),
    #[error("pi must be strictly positive")]
    InvalidPi,
    #[error("transition matrix reconstruction produced entries below -1e-12")]
    NumericalBreakdown,
    #[error("zero probability in weight matrix (tau=0 or reducible generator)")]
    ZeroProbability,
    #[error("invalid Poisson rate: lambda1={0}, lambda2={1}")]
    InvalidRate(f64, f64),
    #[error("hypergeometric c parameter must be positive, got {0}")]
    InvalidC(f64),
    #[error("series did not converge within the term budget")]
    Unconverged,
    #[error("series G is non-positive; series evaluation failed")]
    NonPositiveG,
    #[error("alternating-series envelope exceeded its iteration budget")]
    EnvelopeStall,
    #[error("CountState space too large: zeta={zeta}, b={b}")]
    StateSpaceTooLarge { zeta: u64, b: usize },
    #[error("joint table too large: B^D = {0} exceeds 10^6")]
    TableTooLarge(u128),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
