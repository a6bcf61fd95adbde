use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient agents for tetrad statistics: n = {0}, need at least 4")]
    InsufficientAgents(usize),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("no analytic mean for distribution `{0}`")]
    NoAnalyticMean(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("bandwidth must be positive, got h = {0}")]
    InvalidBandwidth(f64),

    #[error("density contract violated at dyad ({i}, {j}): value {value} is below the floor but not flagged")]
    DensityContract { i: usize, j: usize, value: f64 },

    /// Γ̂ is singular or too ill-conditioned to invert: the pairwise variation
    /// of the dyad covariates does not have full rank in this sample.
    #[error("rank condition fails in sample: Gamma-hat is singular (condition number {cond:e})")]
    SingularGamma { cond: f64 },

    #[error("trimming gamma too aggressive for this sample: no tetrad survives the |D~| = 2 and |dv| >= gamma filters")]
    TrimmingEmpty,

    #[error("oracle variance requires simulation mode: latent heterogeneity and link shocks are missing")]
    MissingLatent,

    #[error("bootstrap failed: {failed} of {total} draws had a singular Gamma-hat")]
    BootstrapFailed { failed: usize, total: usize },

    #[error("all {reps} replications failed in cell `{cell}`")]
    AllReplicationsFailed { cell: String, reps: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
