//! Reference CPU engine for LV-UNet, a lightweight medical segmentation
//! network built from a MobileNetV3-Large prefix and fusible expansion
//! blocks.
//!
//! The crate runs the network in train mode (two 1×1 convolutions around a
//! batch norm and a scheduled Leaky ReLU) and in deploy mode (one merged
//! convolution), converts between the two, and accounts parameters and
//! multiply-accumulates statically.

pub mod backbone;
pub mod conformance;
pub mod error;
pub mod init;
pub mod io;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod reparam;
pub mod schedule;
pub mod series;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use init::InitKind;
pub use model::{build, forward, Combination, LvUnet, Mode, ModelConfig, SkipMode};
pub use reparam::{count_flops, count_params, fuse_conv_bn, merge_conv1x1, to_deploy, FusionReport};
pub use tensor::{BatchNormParams, ConvSpec, Tensor};
