use std::path::PathBuf;

use ivbench_core::codec::CodecError;
use ivbench_core::container::ContainerError;
use ivbench_core::dsde::DsdeError;
use ivbench_core::dsgs::DsgsError;
use ivbench_core::metrics::MetricsError;
use ivbench_core::rasterizer::gsc1::Gsc1Error;
use ivbench_core::rasterizer::SceneError;
use ivbench_core::scenegen::ConfigError;
use thiserror::Error;

/// Harness error. [`HarnessError::exit_code`] maps it onto the CLI contract.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("assertion failed: {0}")]
    Assertion(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String, parse: bool },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io { .. } => 1,
            HarnessError::Parse { .. } => 2,
            HarnessError::Assertion(_) => 3,
            HarnessError::Stage { parse, .. } => {
                if *parse {
                    2
                } else {
                    1
                }
            }
        }
    }

    pub fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        HarnessError::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! stage_from {
    ($t:ty, $stage:literal, $parse:expr) => {
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                let parse = $parse(&e);
                HarnessError::Stage {
                    stage: $stage,
                    message: e.to_string(),
                    parse,
                }
            }
        }
    };
}

stage_from!(ConfigError, "scenegen", |_: &ConfigError| false);
stage_from!(SceneError, "rasterizer", |_: &SceneError| false);
stage_from!(Gsc1Error, "gsc1", |_: &Gsc1Error| true);
stage_from!(ContainerError, "container", |e: &ContainerError| e.is_parse());
stage_from!(CodecError, "codec", |e: &CodecError| matches!(e, CodecError::Header(_) | CodecError::Corrupt { .. }));
stage_from!(DsdeError, "dsde", |_: &DsdeError| false);
stage_from!(DsgsError, "dsgs", |_: &DsgsError| false);
stage_from!(MetricsError, "metrics", |_: &MetricsError| false);

pub type Result<T> = std::result::Result<T, HarnessError>;
