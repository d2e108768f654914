use thiserror::Error;

/// Invalid model input: a parameter out of its physical domain or an
/// inconsistent configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{field} must be finite, got {value}")]
    NotFinite { field: &'static str, value: f64 },
    #[error("{field} must be {constraint}, got {value}")]
    OutOfRange {
        field: &'static str,
        constraint: &'static str,
        value: f64,
    },
    #[error("transmission T[{index}] = {value} lies outside [0, 1]")]
    Transmission { index: usize, value: f64 },
    #[error("k_max must lie in 1..=100, got {0}")]
    KMax(usize),
    #[error("coefficient lists differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("n_cut = {n_cut} is too small for k_max = {k_max} (need n_cut >= k_max + {margin})")]
    BasisTooSmall {
        n_cut: usize,
        k_max: usize,
        margin: usize,
    },
    #[error("requested {requested} levels but the basis only has {dim} states")]
    TooManyLevels { requested: usize, dim: usize },
    #[error("transition label {0} needs more levels than requested")]
    LabelOutOfRange(String),
    #[error("invalid transition label {0:?}")]
    Label(String),
    #[error("{0}")]
    Invalid(String),
}

/// Failure of the charge-basis eigenvalue problem.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("Hermitian eigensolver did not converge (dimension {dim}, {max_iter} sweeps)")]
    NoConvergence { dim: usize, max_iter: usize },
    #[error("eigenvector is not normalized (norm^2 = {norm_sq})")]
    Unnormalized { norm_sq: f64 },
    #[error("at flux point {index} (phi_e = {phi_e:.6} rad): {source}")]
    AtFlux {
        index: usize,
        phi_e: f64,
        #[source]
        source: Box<SpectrumError>,
    },
}

/// Errors from trace synthesis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("frequency grid is empty")]
    EmptyGrid,
    #[error("frequency grid must be strictly ascending (at index {0})")]
    UnsortedGrid(usize),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// Reasons a single Lorentzian fit is rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PeakRejection {
    #[error("window holds {0} samples, need at least 5")]
    TooFewSamples(usize),
    #[error("amplitude consistent with zero ({amplitude:.3e} +/- {sigma:.3e})")]
    NoPeak { amplitude: f64, sigma: f64 },
    #[error("fitted center {f0:.6} GHz outside window [{lo:.6}, {hi:.6}]")]
    OutsideWindow { f0: f64, lo: f64, hi: f64 },
    #[error("non-physical linewidth {0:.3e} GHz")]
    BadWidth(f64),
    #[error("least-squares iteration failed: {0}")]
    NoConvergence(String),
    #[error("hint center lies within {separation:.3e} GHz of {other}")]
    Overlap { other: String, separation: f64 },
}

/// Errors from the global spectrum fit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error("no fittable points in dataset {0}")]
    NoFittablePoints(String),
    #[error("no datasets supplied")]
    NoDatasets,
    #[error("parameter vector has length {got}, layout expects {expected}")]
    Layout { got: usize, expected: usize },
    #[error("singular normal equations")]
    Singular,
    #[error("every channel-count fit failed: {0}")]
    AllCountsFailed(String),
    #[error("RMSE needs at least one point")]
    EmptyRmse,
    #[error("model and data lengths differ ({model} vs {data})")]
    RmseLength { model: usize, data: usize },
}

/// I/O and document format errors.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Document(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
