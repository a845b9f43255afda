//! Compact patch-level representation of very large scan images.
//!
//! Scans are tiled into patches ([`tiling`]), described by a two-scale rotation-invariant
//! LBP histogram ([`lbp`]) or by externally computed deep features ([`feature_store`]),
//! clustered per scan with a self-organizing map ([`som`]) and thinned to a
//! representative subset ([`selection`]). The retained descriptors feed an exact
//! nearest-neighbor index ([`retrieval`]) whose top-1 accuracy is scored by
//! [`evaluation`].

pub mod artifact;
pub mod config;
pub mod descriptor;
pub mod error;
pub mod evaluation;
pub mod feature_store;
pub mod gmm;
pub mod lbp;
pub mod pipeline;
pub mod raster;
pub mod retrieval;
pub mod seed;
pub mod selection;
pub mod som;
pub mod synth;
pub mod tiling;

pub use descriptor::{Descriptor, DescriptorKind, PatchRef};
pub use error::{Error, Result};
pub use raster::Raster;
