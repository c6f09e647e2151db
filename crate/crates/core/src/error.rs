use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

impl ModelError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ModelError::InvalidParam {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("index {name}={index} out of range (size {size})")]
    IndexOutOfRange {
        name: &'static str,
        index: usize,
        size: usize,
    },
    #[error("eavesdropper channel for bs {b}, subcarrier {n} is outside its uncertainty box")]
    ChannelOutsideBox { b: usize, n: usize },
    #[error("allocation dimensions do not match the instance: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("iteration limit {limit} reached without convergence")]
    IterationLimit { limit: usize, best: Vec<f64>, objective: f64 },
    #[error("numerical breakdown: {0}")]
    Numerical(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorstCaseError {
    #[error("Charnes-Cooper normalizer vanished at the optimum (mu = {mu:e}); check the noise configuration")]
    DegenerateDenominator { mu: f64 },
    #[error("worst-case LP reported status {0}")]
    UnexpectedStatus(&'static str),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Rate(#[from] RateError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("sweep {sweep}: {stage} failed: {source}")]
    Stage {
        sweep: usize,
        stage: &'static str,
        #[source]
        source: Box<SolveError>,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    WorstCase(#[from] WorstCaseError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl SolveError {
    pub fn at(self, sweep: usize, stage: &'static str) -> Self {
        SolveError::Stage {
            sweep,
            stage,
            source: Box::new(self),
        }
    }
}
