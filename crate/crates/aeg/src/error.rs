use std::path::PathBuf;

use aeg_core::affordance::AffordanceError;
use aeg_core::eval::EvalError;
use aeg_core::hierarchy::HierarchyError;
use aeg_core::scenegraph::SceneGraphError;
use aeg_core::tidy::TidyError;
use aeg_core::LlmError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const GENERIC: u8 = 1;
    pub const PRECONDITION: u8 = 2;
    pub const TRANSPORT: u8 = 3;
    pub const SCHEMA: u8 = 4;
}

#[derive(Debug, Error)]
pub enum AegError {
    #[error("cannot read `{path}`: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write `{path}`: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("schema violation in `{file}` at `{field}`: {message}")]
    SchemaViolation { file: String, field: String, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error(transparent)]
    SceneGraph(#[from] SceneGraphError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Affordance(#[from] AffordanceError),
    #[error(transparent)]
    Tidy(#[from] TidyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl AegError {
    pub fn schema(file: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::SchemaViolation { file: file.into(), field: field.into(), message: message.into() }
    }

    /// The LLM error at the root of this error, if any.
    fn llm_source(&self) -> Option<&LlmError> {
        match self {
            Self::Llm(e)
            | Self::Affordance(AffordanceError::Llm { source: e, .. })
            | Self::Tidy(TidyError::Llm { source: e, .. })
            | Self::Eval(EvalError::Affordance(AffordanceError::Llm { source: e, .. }))
            | Self::Eval(EvalError::Tidy(TidyError::Llm { source: e, .. })) => Some(e),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> u8 {
        if let Some(e) = self.llm_source() {
            return match e {
                LlmError::Transport { .. } | LlmError::AuthMissing(_) | LlmError::RateLimited => exit::TRANSPORT,
                _ => exit::GENERIC,
            };
        }
        match self {
            Self::SchemaViolation { .. } => exit::SCHEMA,
            Self::SceneGraph(e) => scenegraph_code(e),
            Self::Eval(EvalError::InvalidAnnotation { .. }) => exit::SCHEMA,
            Self::Eval(EvalError::Hierarchy(HierarchyError::MixedRooms(..))) => exit::SCHEMA,
            Self::Tidy(_) | Self::Affordance(_) | Self::Eval(_) | Self::Hierarchy(_) => exit::PRECONDITION,
            _ => exit::GENERIC,
        }
    }

    /// Stable machine-readable name of the failure.
    pub fn kind(&self) -> &'static str {
        if let Some(e) = self.llm_source() {
            return match e {
                LlmError::Transport { .. } => "Transport",
                LlmError::AuthMissing(_) => "AuthMissing",
                LlmError::RateLimited => "RateLimited",
                LlmError::MissingSlot(_) => "MissingSlot",
                LlmError::ParseFailure(_) => "ParseFailure",
                LlmError::NonNumericScore(_) => "NonNumericScore",
                LlmError::TokenBudget { .. } => "TokenBudget",
                LlmError::Image(_) => "Image",
                LlmError::Backend(_) => "Backend",
            };
        }
        match self {
            Self::Read { .. } => "Read",
            Self::Write { .. } => "Write",
            Self::SchemaViolation { .. } => "SchemaViolation",
            Self::Config(_) => "Config",
            Self::Usage(_) => "Usage",
            Self::SceneGraph(_) => "SceneGraph",
            Self::Hierarchy(_) => "Hierarchy",
            Self::Affordance(AffordanceError::NoHierarchy) => "NoHierarchy",
            Self::Affordance(_) => "Affordance",
            Self::Tidy(TidyError::NotEnhanced) | Self::Eval(EvalError::Tidy(TidyError::NotEnhanced)) => "NotEnhanced",
            Self::Tidy(TidyError::MissingAffordance(_)) => "MissingAffordance",
            Self::Tidy(_) => "Tidy",
            Self::Eval(EvalError::EmptyInput) => "EmptyInput",
            Self::Eval(_) => "Eval",
            Self::Llm(_) => "Llm",
        }
    }

    /// One-line JSON rendering for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

fn scenegraph_code(e: &SceneGraphError) -> u8 {
    match e {
        SceneGraphError::InvalidConfig(_) => exit::GENERIC,
        SceneGraphError::NoVisibleFrame(_) | SceneGraphError::MissingCentroids(_) => exit::PRECONDITION,
        _ => exit::SCHEMA,
    }
}
