pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod dist;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, Entry};
pub use dense::{Activation, BoundNet, DenseNet};
pub use dist::{Family, LocScaleDist};
pub use tape::{Gradients, Tape, Var};
