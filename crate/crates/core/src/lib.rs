//! Task-contrastive embeddings for visual tasks.
//!
//! A visual task is a task type applied to a dataset; its instances are
//! `(in, out)` image pairs. This crate synthesizes such instances from
//! segmentation-labeled corpora, trains a compact residual encoder on the
//! stacked pairs with supervised contrastive objectives, and analyzes the
//! resulting embedding space.

pub mod analysis;
pub mod corpus;
pub mod desk;
pub mod error;
pub mod image;
pub mod model;
pub mod nn;
pub mod sampling;
pub mod seed;
pub mod task_synth;
pub mod training;

pub use error::{Error, Result};
