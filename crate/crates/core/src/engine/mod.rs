//! Numeric substrate: convolutions, re-tiling, a tape autodiff, layers,
//! Adam and checkpoints.

pub mod checkpoint;
pub mod conv;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod shuffle;

pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, ManifestEntry};
pub use conv::{Conv2dSpec, Conv3dSpec, ConvSpec};
pub use graph::{Gradients, Graph, Mode, ParamRef, Parameter, Var};
pub use layers::{BatchNorm, Conv2d, Conv3d, ParamStore, LEAKY_SLOPE};
pub use optim::Adam;
pub use shuffle::Axis;
