//! Multi-view mask association on Gaussian splat scenes.
//!
//! Per-view instance masks from a 2D segmenter carry labels that mean
//! nothing across views. This crate lifts them into consistent 3D groups:
//! every mask is matched against a memory bank of Gaussian groups by the
//! overlap of its front-most Gaussians, then an identity field is trained
//! on the relabeled masks so any view renders consistent labels.
//!
//! ```
//! use splatlift::memory_bank::{associate, AssociationConfig};
//! use splatlift::rasterizer::RenderOptions;
//! use splatlift::synthetic::{association_accuracy, SyntheticDataset, SyntheticSpec};
//!
//! let spec = SyntheticSpec { n_instances: 3, width: 64, height: 64, ..Default::default() };
//! let data = SyntheticDataset::build(&spec, &RenderOptions::default()).unwrap();
//! let out = associate(&data.scene.scene, &data.scene.cameras, &data.masks,
//!                     &AssociationConfig::default()).unwrap();
//! let score = association_accuracy(&data.masks, &out.relabeled, &data.truth).unwrap();
//! assert!(score.accuracy > 0.9);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod identity;
pub mod manipulation;
pub mod memory_bank;
pub mod pipeline;
pub mod projection;
pub mod rasterizer;
pub mod scene_io;
pub mod synthetic;

pub use error::{Error, Result};
