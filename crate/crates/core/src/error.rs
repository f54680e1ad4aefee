use thiserror::Error;

/// Errors surfaced by the laboratory. Each variant maps to a module-qualified
/// code (see [`Error::code`]) that the command-line driver prints verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("model definition: {0}")]
    ModelDefinition(String),

    #[error("singular frame at {point:?} (smallest singular value {sigma_min:e})")]
    SingularFrame { point: Vec<f64>, sigma_min: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("step rejected at t = {time}: retraction correction {correction:e} exceeds 1e-3, use a smaller step")]
    StepRejected { time: f64, correction: f64 },

    #[error("path is not admissible: segment {segment} has transverse/speed ratio {ratio:e}")]
    NotAdmissible { segment: usize, ratio: f64 },

    #[error("mismatched base points: {0}")]
    BasePointMismatch(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// `line` is 0 for values given on the command line.
    #[error("{origin}, field `{field}`: {message}", origin = config_origin(*line))]
    Config {
        line: usize,
        field: String,
        message: String,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::ModelDefinition(_) => "geometry.model_definition",
            Error::SingularFrame { .. } => "geometry.singular_frame",
            Error::InvalidInput(_) => "input.invalid",
            Error::StepRejected { .. } => "frame_bundle.step_rejected",
            Error::NotAdmissible { .. } => "frame_bundle.not_admissible",
            Error::BasePointMismatch(_) => "stochastics.base_point_mismatch",
            Error::Infeasible(_) => "variational.infeasible",
            Error::Numerical(_) => "numerics.failure",
            Error::Config { .. } => "cli.config",
            Error::Io(_) => "io.error",
            Error::Csv(_) => "io.csv",
            Error::Json(_) => "io.json",
        }
    }

    /// True for errors caused by bad user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::ModelDefinition(_) | Error::InvalidInput(_) | Error::BasePointMismatch(_) | Error::Config { .. }
        )
    }

    /// True when output went to a reader that has gone away.
    pub fn is_broken_pipe(&self) -> bool {
        let io = match self {
            Error::Io(io) => Some(io),
            Error::Csv(c) => match c.kind() {
                csv::ErrorKind::Io(io) => Some(io),
                _ => None,
            },
            _ => None,
        };
        io.is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    }
}

fn config_origin(line: usize) -> String {
    if line == 0 {
        "command line".to_string()
    } else {
        format!("config line {line}")
    }
}

pub type Result<T> = std::result::Result<T, Error>;
