//! Convolutional VAE and VaDE models over 80x80 density fields.

pub mod adam;
pub mod error;
pub mod gmm;
pub mod io;
pub mod network;
pub mod ops;
pub mod train;
pub mod vade;

pub use error::{Error, Result};
pub use gmm::GmmPrior;
pub use network::{Architecture, Autoencoder};
pub use train::{TrainConfig, TrainRecord};
pub use vade::{Embedding, VadeModel};
