//! Equivariant layer stacks: specs, kernels, forward and reverse passes,
//! optimizer, architecture sampler and model files.

pub mod adam;
pub mod io;
pub mod kernel;
pub mod model;
pub mod sampler;
pub mod spec;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use io::ModelFile;
pub use kernel::{kernel_weights_to_spectrum, KernelBasis, KernelSpectrum};
pub use model::{
    relu_in_place, relu_s2, relu_so3, rotation_equivariance_error, softmax_xent_loss, softmax_xent_scores, ModelOutput, Network, OpCategory,
    OpTimer, Tape,
};
pub use sampler::{draw_architecture, sample_equivariant_architecture, SamplerConfig};
pub use spec::{count_parameters, Head, LayerKind, LayerSpec, ModelSpec, Nonlinearity, ParamLayout};
