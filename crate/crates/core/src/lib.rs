//! Synthetic data generation and evaluation for garment keypoint
//! manipulation.
//!
//! The crate is organised along the data flow:
//!
//! - [`templates`]: parametric garment outlines and semantic keypoint anchors
//! - [`mesh`]: triangulation, UV maps, keypoint binding and k-ring queries
//! - [`sim`]: position-based cloth simulation and scripted deformations
//! - [`camera`], [`visibility`], [`raster`], [`scene`]: cameras, occlusion
//!   tests, depth previews and scene descriptors for external renderers
//! - [`annotation`]: ground-truth frames, action tuples, `<kp>`/`<action>`
//!   answers and staged VQA datasets
//! - [`decoder`]: action tuples to per-arm manipulation trajectories
//! - [`metrics`]: keypoint AP at pixel thresholds and average keypoint distance
//! - [`pipeline`]: the seeded end-to-end generator

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod annotation;
pub mod camera;
pub mod config;
pub mod decoder;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod sim;
pub mod templates;
pub mod visibility;

pub use templates::{GarmentType, SemanticKeypoint, TemplateParams};
