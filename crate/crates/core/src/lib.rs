//! Uncertainty-aware volumetric tumor segmentation at desk scale.
//!
//! A small 3D encoder-decoder predicts per-voxel class logits plus one extra
//! uncertainty channel. The uncertainty channel is trained against a
//! box-smoothed map of the network's own tumor errors, through a head that
//! sees detached trunk features, so uncertainty training never feeds back
//! into the segmentation parameters.
//!
//! Modules, bottom-up:
//!
//! - [`voxvol`]: volumes, the VXV1 file format, slicing, mask algebra
//! - [`labelspace`]: label schemas and region groups
//! - [`synthdata`]: procedural phantoms standing in for clinical scans
//! - [`unctarget`]: error maps and their smoothed uncertainty targets
//! - [`losses`]: Dice/CE, masked RMSD and masked Pearson correlation
//! - [`net`]: the encoder-decoder and its hand-written backward pass
//! - [`metrics`]: Dice per region group and uncertainty quality
//! - [`trainer`]: run kinds, Adam, checkpoints, logs
//! - [`render`]: PPM slice panels with red uncertainty overlays
//! - [`taxonomy`]: constructed exact, over- and under-predicted cases
//! - [`cli`]: the `uncseg` command line

pub mod cli;
pub mod error;
pub mod labelspace;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod render;
pub mod synthdata;
pub mod taxonomy;
pub mod trainer;
pub mod unctarget;
pub mod voxvol;

pub use error::{Error, Result};
