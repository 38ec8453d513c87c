//! Frequency-domain face blending.
//!
//! Images are split by an orthonormal 2D DCT into semantic, structural and
//! noise bands, either with fixed prior masks or with a small trainable
//! parsing network. The structural band of a (pseudo-)fake face can then be
//! blended into a real face to synthesise frequency-faithful pseudo-fakes.
//!
//! All numeric code is generic over [`Scalar`] (`f32` / `f64`); the aliases
//! below fix the working double precision.

pub mod blender;
pub mod dct;
pub mod error;
pub mod metrics;
pub mod net;
pub mod objectives;
pub mod partition;
pub mod scalar;
pub mod spectrum;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Spatial-domain image, `channels × height × width`, nominal range `[0, 255]`.
pub type ImageTensor = Tensor<f64>;
/// DCT-II coefficients of an [`ImageTensor`], DC at `(0, 0)`.
pub type FrequencyTensor = Tensor<f64>;
/// Single-channel `height × width` grid.
pub type Grid = Tensor<f64>;
pub type DistributionTriple = partition::DistributionTriple<f64>;
pub type PriorMasks = partition::PriorMasks<f64>;
pub type ParserModel = net::ParserModel<f64>;
pub type ParamGrads = net::ParamGrads<f64>;
pub type SpectrumProfile = spectrum::SpectrumProfile<f64>;
pub type AggregateFrequencyMap = spectrum::AggregateFrequencyMap<f64>;

/// Single-precision counterparts.
pub mod f32 {
    pub type ImageTensor = crate::Tensor<f32>;
    pub type DistributionTriple = crate::partition::DistributionTriple<f32>;
    pub type ParserModel = crate::net::ParserModel<f32>;
}
