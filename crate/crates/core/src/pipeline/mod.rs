//! File-based experiment pipeline: synth, prepare, train, convert, evaluate.

mod checkpoint;
mod commands;
pub mod config;
pub mod fmat;
pub mod manifest;

pub use checkpoint::{load_dictionary_pair, load_model, save_dictionary_pair, save_model};
pub use commands::{
    cmd_convert, cmd_evaluate, cmd_prepare, cmd_synth, cmd_train, load_pair, read_f0_stats, utterance_id,
    write_reference_as_converted, SynthSummary, TrainSummary, CONVERTED_META, CORPUS_META, F0_STATS, PREPARED_META,
    TRAIN_LOG,
};
pub use config::{PipelineConfig, Split, System};
