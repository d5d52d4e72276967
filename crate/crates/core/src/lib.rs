//! Core math for mesh-bound Gaussian splat avatars.
//!
//! A template mesh carries one Gaussian per face, glued to the surface by the
//! face's local frame. Posing the mesh (linear blend skinning) drags the
//! splats along; two small hash-grid fields supply per-vertex canonical
//! displacements and per-splat colors; a CPU rasterizer renders color and
//! normal passes with analytic gradients all the way back to the field
//! tables, the per-face scales, the skeleton joints and the per-frame poses.
//!
//! Everything is generic over the scalar type via [`scalar::Real`]
//! (`f32`/`f64`); the aliases at the crate root pin `f64`, which is what the
//! training stack and the file formats use.

pub mod fields;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod scalar;
pub mod skinning;
pub mod splatting;
pub mod training;

pub use scalar::Real;

/// Concrete `f64` aliases; the I/O layer and the CLI work in these.
pub type TemplateMesh64 = geometry::TemplateMesh<f64>;
pub type FaceFrame64 = geometry::FaceFrame<f64>;
pub type Skeleton64 = skinning::Skeleton<f64>;
pub type PoseFrame64 = skinning::PoseFrame<f64>;
pub type SkinWeights64 = skinning::SkinWeights<f64>;
pub type HashGridConfig64 = fields::HashGridConfig<f64>;
pub type HashField64 = fields::HashField<f64>;
pub type Camera64 = splatting::Camera<f64>;
pub type ImagePlane64 = splatting::ImagePlane<f64>;
pub type RasterConfig64 = splatting::RasterConfig<f64>;
pub type LossWeights64 = losses::LossWeights<f64>;
pub type BoundSplatModel64 = model::BoundSplatModel<f64>;
pub type Trainer64 = training::Trainer<f64>;
pub type FrameData64 = training::FrameData<f64>;
