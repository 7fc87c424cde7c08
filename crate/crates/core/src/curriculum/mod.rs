//! Per-node curricula (difficulty ranking plus window selection) and the shared
//! denoising encoder for tabular features.

mod encoder;
mod ranking;
mod schedule;

pub use crate::datasets::Dataset;
pub use encoder::{encode_batch, fit_encoder, Encoder, EncoderSpec};
pub use ranking::{cosine_similarity, fit_ranking, Metric, RankingModel};
pub use schedule::{build_curriculum, select_window, Curriculum, WindowAction};
