use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x}, {y}) is outside the map")]
    OutOfBounds { x: f64, y: f64 },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("pose lies inside an occupied cell")]
    PoseInObstacle,
    #[error("heading fusion is degenerate (weighted vectors cancel)")]
    DegenerateFusion,
    #[error("safety cost undefined at zero wall distance")]
    WallContact,
    #[error("no path between start and goal")]
    NoPath,
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("no feasible mission action")]
    NoFeasibleAction,
    #[error("event {event} is illegal in phase {phase}")]
    IllegalEvent { phase: String, event: String },
    #[error("point cluster has no dominant axis")]
    DegenerateCluster,
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("map not found {}", .0.display())]
    MapNotFound(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}
