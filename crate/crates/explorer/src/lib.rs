//! Read-only explorer service over an exported bundle.

pub mod api;
pub mod bundle;
pub mod error;
pub mod store;

pub use api::{router, serve};
pub use error::{Error, Result};
pub use store::{validate_bundle, ArtifactStore, Violation};
