//! Generation, evaluation and arrangement of bridge-structure alternatives.
//!
//! * [`topo`]: SIMP topology optimization producing the alternative dataset.
//! * [`criteria`]: behavior criteria per alternative and their standardization.
//! * [`tree`]: logistic-regression decision trees over cluster labels.

pub mod catalog;
pub mod criteria;
pub mod dataset;
pub mod error;
pub mod fem;
pub mod filter;
pub mod grid;
pub mod otsu;
pub mod pgm;
pub mod topo;
pub mod tree;

pub use error::{Error, Result};
pub use grid::{DensityField, GridSpec};
