//! Disentangled 4D Gaussian splatting.
//!
//! A dynamic scene is a set of 4D Gaussians, each stored as a base 3D
//! Gaussian plus a temporal mean, a temporal scale and a velocity of its
//! mean. Rendering projects the spatial structure and the velocity into
//! ray space once per camera and applies the time slice there
//! ("projection-first"), instead of slicing a 4D covariance for every
//! timestamp before projection ("slicing-first", kept in [`oracle`] as a
//! reference implementation and timing baseline).

pub mod camera;
pub mod dataset;
pub mod error;
pub mod image_io;
pub mod loss;
pub mod optim;
pub mod oracle;
pub mod ply;
pub mod projection;
pub mod raster;
pub mod render;
pub mod scene;
pub mod sh;
pub mod synthetic;
pub mod train;

pub use camera::CameraModel;
pub use error::{Error, Result};
pub use projection::{ProjectionCache, ProjectionMode, ProjectionOptions, ScreenGaussian};
pub use raster::FrameBuffers;
pub use render::{render, GradientBuffer, RenderOptions};
pub use scene::{ActivatedGaussian, Gaussian4D, Scene4D};
