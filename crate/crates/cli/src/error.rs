use barkspace::models::ModelError;
use barkspace::nn::NetError;
use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] barkspace::Error),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Pipeline(e) if is_internal(e) => EXIT_INTERNAL,
            CliError::Pipeline(e) if is_config(e) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}

fn net_internal(e: &NetError) -> bool {
    matches!(e, NetError::StaleTape | NetError::BadTensor { .. } | NetError::NonFinite(_))
}

fn is_internal(e: &barkspace::Error) -> bool {
    match e {
        barkspace::Error::Net(n) => net_internal(n),
        barkspace::Error::Model(ModelError::Net(n)) => net_internal(n),
        _ => false,
    }
}

fn is_config(e: &barkspace::Error) -> bool {
    use barkspace::features::FeatureError;
    use barkspace::segmentation::SegmentError;
    matches!(
        e,
        barkspace::Error::Segment(SegmentError::InvalidConfig(_))
            | barkspace::Error::Feature(FeatureError::InvalidConfig(_))
            | barkspace::Error::Model(ModelError::InvalidConfig(_))
            | barkspace::Error::Model(ModelError::Feature(FeatureError::InvalidConfig(_)))
            | barkspace::Error::Config(_)
    )
}

macro_rules! from_pipeline {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Pipeline(e.into())
            }
        })*
    };
}

from_pipeline!(
    barkspace::audio_io::AudioError,
    barkspace::segmentation::SegmentError,
    barkspace::features::FeatureError,
    barkspace::evaluation::EvalError,
    barkspace::models::ModelError,
    barkspace::corpus::CorpusError,
    barkspace::projection::ProjectionError,
    barkspace::config::ConfigError
);
