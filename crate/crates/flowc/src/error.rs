use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An input vector or index does not match the expected dimension.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A piecewise-linear function does not have the shape an operation requires
    /// (e.g. strict monotonicity).
    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),

    /// Slope quantization was asked for a non-positive slope.
    #[error("invalid slope: {0}")]
    InvalidSlope(f64),

    /// A declared contract on caller-supplied data failed a spot check.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Two networks cannot be composed.
    #[error("incompatible nets: {0}")]
    IncompatibleNets(String),

    /// A layer matrix is singular; the network is not invertible.
    #[error("not invertible: {0}")]
    NotInvertible(String),

    /// Malformed or unsupported serialized data.
    #[error("parse error: {0}")]
    ParseError(String),

    /// A vector field produced non-finite values.
    #[error("invalid field: {0}")]
    InvalidField(String),

    /// A target function produced non-finite values.
    #[error("invalid target: {0}")]
    InvalidTarget(String),

    /// The adaptive integrator could not meet the tolerance before the step
    /// size underflowed.
    #[error("stiffness failure: step size underflow at t = {t}")]
    StiffnessFailure { t: f64 },

    /// The field fit missed its residual target.
    #[error("fit shortfall: achieved {achieved} > target {target}")]
    FitShortfall { achieved: f64, target: f64 },

    /// Splitting time grid does not align with the field's parameter knots.
    #[error("schedule error: {0}")]
    ScheduleError(String),

    /// The splitting iteration blew up.
    #[error("divergence: state exceeded {limit:e} at macro step {step}")]
    DivergenceError { step: usize, limit: f64 },

    /// A substep violates the step-size precondition for synthesis.
    #[error("step too large: dt*|a|*max|w| = {0} >= 1")]
    StepTooLarge(f64),

    /// Tolerance allocation cannot fit inside the stage domains.
    #[error("budget infeasible: {0}")]
    BudgetInfeasible(String),

    /// A synthesized network failed its audit after all retries.
    #[error("synthesis failure: {0}")]
    SynthesisFailure(String),

    /// A certified postcondition failed; indicates a bug.
    #[error("internal error: {0}")]
    InternalError(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
