//! The domain-adversarial network: a convolutional feature extractor shared
//! by a label predictor and, through a gradient reversal layer, a two-way
//! domain classifier.

mod checkpoint;
mod gradcheck;
mod model;
mod train;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{gradcheck_composite, CompositeGradcheck};
pub use model::{to_batch, DannModel, ModelConfig};
pub use train::{
    evaluate, evaluate_domain, predict, train, EpochLog, TrainConfig, TrainLog,
    MAIN_SCHEDULE_STREAM,
};
