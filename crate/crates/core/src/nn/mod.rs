//! Networks, parameters and checkpoints.

mod bundle;
mod checkpoint;
mod layers;
mod nets;
mod params;

pub use bundle::{NetworkBundle, StyleMatrix, Synthesis};
#[allow(unused_imports)]
pub(crate) use bundle::{images_tensor, one_hot_tensor, slices_tensor};
pub use checkpoint::{Checkpoint, CheckpointManifest, FORMAT_VERSION, MAGIC};
pub use layers::{
    declare_specs, Conv, Init, Linear, MsBlock, ParamSpec, MsBlockConfig, NormKind, RegionAdaptiveNorm, RegionContext, Resample, LEAK, NORM_EPS,
};
pub use nets::{
    Discriminator, ImageGenerator, NetConfig, Networks, StructureDecoder, StructureEncoder, StyleEncoder,
};
pub use params::{Binder, ParamStore, SpectralState, SIGMA_FLOOR};
