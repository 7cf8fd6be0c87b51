//! The embedding network `volume -> unit sphere` with hand-written
//! gradients, plus checkpoint I/O.

mod checkpoint;
pub mod layers;
mod network;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_SCHEMA_VERSION};
pub use network::{encode, encode_backward, Classifier, EncoderTrace, Network};
pub use params::{init_params, ConvBlock, EncoderConfig, ModelParams, Param};
