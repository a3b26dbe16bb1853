use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("value error: {0}")]
    Value(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("invalid garment attributes: {}", format_violations(.0))]
    Attributes(Vec<crate::semantics::AttributeViolation>),

    #[error("caption parse error at slot `{slot}`: {detail}")]
    CaptionParse { slot: &'static str, detail: String },

    #[error("caption is empty after cleaning")]
    EmptyCaption,

    #[error("no caption available: {0}")]
    CaptionUnavailable(String),

    #[error("asset `{asset}` at {path}: {reason}")]
    Asset {
        asset: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("unmatched files: {}", .0.join(", "))]
    Unmatched(Vec<String>),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

fn format_violations(v: &[crate::semantics::AttributeViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
