//! Desk-scale MLP training with block floating point GEMMs.

mod data;
mod model;
mod schedule;
mod trainer;

pub use data::{make_dataset, Dataset, DatasetSpec, Split};
pub use model::{
    softmax_cross_entropy, Activation, ForwardCache, Gradients, Layer, LayerNumerics, LayerRole,
    LossOutput, MlpModel,
};
pub use schedule::{numerics_label, schedule_lookup, BoosterSchedule, NumericMode};
pub use trainer::{
    evaluate, initial_model, load_checkpoint, save_checkpoint, train, EpochRecord, RunOutput,
    RunReport, TrainConfig, EPOCH_CSV_HEADER,
};
