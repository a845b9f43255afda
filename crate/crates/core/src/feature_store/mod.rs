//! Descriptor persistence and PCA reduction.

mod format;
mod pca;

pub use format::{
    decode_features, encode_features, read_features, write_features, FORMAT_VERSION, MAGIC,
};
pub use pca::{pca_fit, PcaModel, PcaRoute};
