//! Sequential shape assembly: polygon fragmentation datasets, a raster
//! assembly environment, the fragment assembly network with its training
//! loop, and search baselines.
//!
//! Geometry and the tensor engine are generic over [`scalar::Real`]; the
//! network, training and baselines run in `f64`. The aliases below fix the
//! generic types to `f64`.

pub mod baselines;
pub mod env;
pub mod eval;
pub mod fan;
pub mod files;
pub mod fragmenter;
pub mod geometry;
pub mod metrics;
pub mod ndnum;
pub mod render;
pub mod scalar;
pub mod train;

pub type Point = geometry::Point<f64>;
pub type Polygon = geometry::Polygon<f64>;
pub type CutLine = geometry::CutLine<f64>;
pub type Tensor = ndnum::Tensor<f64>;
pub type Tape = ndnum::Tape<f64>;
pub type ParamStore = ndnum::ParamStore<f64>;
pub type Checkpoint = ndnum::Checkpoint<f64>;
