//! Decoder-side immersive video toolkit.
//!
//! Two view-synthesis pipelines share one transport: views are packed into
//! atlases, coded with an intra codec and muxed together with camera metadata.
//! [`dsde`] recovers depth with a plane sweep and warps pixels; [`dsgs`] infers
//! a Gaussian scene and renders it with the [`rasterizer`].

pub mod camera;
pub mod codec;
pub mod container;
pub mod dsde;
pub mod dsgs;
pub mod image;
pub mod metrics;
pub mod rasterizer;
pub mod scenegen;
