//! Nucleus graphs ("histographs") from tissue-style RGB images and a
//! spatial graph convolutional network that classifies whole graphs.
//!
//! Pipeline: [`stain`] separates hematoxylin, [`nucleus`] finds vertices,
//! [`histograph`] builds edges and vertex features, [`gcn`] classifies,
//! [`train`] fits and evaluates, [`synth`] makes labeled synthetic data.

pub mod error;
pub mod gcn;
pub mod histograph;
pub mod imaging;
pub mod nucleus;
pub mod stain;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
