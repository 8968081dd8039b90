//! The referring network: visual encoders, language encoder, fusion
//! encoders and word predictor, with scoring, ranking and training.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod params;
pub mod train;
pub mod verify;

pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path, CheckpointMeta};
pub use config::{Modalities, ModelConfig, VisualStream, SPATIAL_DIM};
pub use forward::{
    encode_candidates, encode_visuals, forward_words, forward_words_encoded, language_states, rank_candidates,
    score_candidate, score_encoded, sort_scores, CandidateFeatures, CandidateScore, FeatureBundle, GlobalFeatures,
    WordScorer,
};
pub use params::OrParams;
pub use train::{dataset_loss, loss_and_grad, train, train_monitored, TrainExample, TrainHyper, TrainLog};
pub use verify::reference_loss;
