use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A graph, assignment or parameter bank does not have the expected shape.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("graph `{graph}` has an assignment space of {size} which exceeds the enumeration cap {cap}")]
    Size { graph: String, size: u128, cap: u128 },

    #[error("graph `{graph}` admits no valid assignment ({rule}: {message})")]
    Infeasible {
        graph: String,
        rule: String,
        message: String,
    },

    #[error("search budget exhausted on graph `{graph}` before any feasible assignment was found")]
    Budget { graph: String },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("constraint error: {0}")]
    Constraint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("inference failed on graph `{graph}`: {source}")]
    Inference {
        graph: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Unsupported(_) => 1,
            Error::Size { .. } | Error::Budget { .. } => 3,
            Error::Inference { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
