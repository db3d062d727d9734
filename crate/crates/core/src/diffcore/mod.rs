//! Dense tensors, a recording tape with reverse-mode gradients, Adam and the
//! checkpoint container.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use params::ParamStore;
pub use tape::{accumulate, Gradients, Tape, Var};
pub use tensor::Tensor;
