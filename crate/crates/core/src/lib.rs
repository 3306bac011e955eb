//! Arousal and valence estimation for dog vocalisations.
//!
//! The pipeline reads WAV audio, finds non-silent events, cuts them into
//! fixed-length frames, computes log-Mel spectrograms and scores them with a
//! small convolutional regressor. Two training regimes are provided: a direct
//! regressor and a Siamese regressor trained on ordinal label differences.

pub mod audio_io;
pub mod config;
pub mod container;
pub mod corpus;
pub mod evaluation;
pub mod features;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod projection;
pub mod rng;
pub mod segmentation;

use thiserror::Error;

/// Any error raised by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Audio(#[from] audio_io::AudioError),
    #[error(transparent)]
    Segment(#[from] segmentation::SegmentError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Net(#[from] nn::NetError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    Model(#[from] models::ModelError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Projection(#[from] projection::ProjectionError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Container(#[from] container::ContainerError),
}
