//! Dataset generation and IO, training, evaluation and retrieval.

mod config;
mod dataset;
mod run;
mod synth;
mod train;

pub use config::ExperimentConfig;
pub use dataset::{Caption, Dataset, Manifest, Split};
pub use run::{score_gallery, vocab_path, LoadedModel, Prepared};
pub use synth::{
    gen_synthetic, Archetype, ShapeSpec, SEG_BACK, SEG_BOARD, SEG_LEG, SEG_SEAT, SEG_SIDE, SEG_TOP, TEST_FRACTION,
};
pub use train::{
    batch_loss_on_tape, build_vocabulary, train, BatchLoss, FrozenSelection, TrainOptions, TrainOutcome,
};

use std::path::Path;

/// Trains on the dataset at `data_dir` and wraps the result for saving.
pub fn train_model(cfg: &ExperimentConfig, data_dir: &Path, opts: &TrainOptions) -> crate::Result<(LoadedModel, TrainOutcome)> {
    let data = Dataset::load(data_dir)?;
    let outcome = train(cfg, &data, opts)?;
    let loaded = LoadedModel {
        config: cfg.clone(),
        model: outcome.model.clone(),
        vocab: outcome.vocab.clone(),
        data_dir: Some(data_dir.to_path_buf()),
    };
    Ok((loaded, outcome))
}
