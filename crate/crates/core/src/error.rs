use thiserror::Error;

/// Errors raised anywhere in the homogenization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("constraint error: {0}")]
    Constraint(String),
    #[error("solver error: {message} (relative residual {residual:.3e} after {iterations} iterations)")]
    Solver {
        message: String,
        residual: f64,
        iterations: usize,
    },
    #[error("coefficient error: {0}")]
    Coefficient(String),
    #[error("expression error at column {column}: {message}")]
    Expression { column: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("dependency error: missing prerequisite `{0}`")]
    Dependency(String),
    #[error("stage `{stage}` failed{}: {source}", stage_eps(*.m))]
    Stage {
        stage: &'static str,
        /// `1/eps` of the failing instance, when the stage is per-eps.
        m: Option<usize>,
        #[source]
        source: Box<Error>,
    },
    #[error("check failed: {0}")]
    Check(String),
    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Geometry(_) => "geometry",
            Error::Mesh(_) => "mesh",
            Error::Pairing(_) => "pairing",
            Error::Topology(_) => "topology",
            Error::Argument(_) => "argument",
            Error::Constraint(_) => "constraint",
            Error::Solver { .. } => "solver",
            Error::Coefficient(_) => "coefficient",
            Error::Expression { .. } => "expression",
            Error::Config(_) => "config",
            Error::Validation { .. } => "validation",
            Error::Dependency(_) => "dependency",
            Error::Stage { .. } => "stage",
            Error::Check(_) => "check",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn stage(stage: &'static str, m: Option<usize>) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            m,
            source: Box::new(e),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

fn stage_eps(m: Option<usize>) -> String {
    m.map(|m| format!(" at eps = 1/{m}")).unwrap_or_default()
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
