//! Event-camera propeller tracking: per-event blade phase and RPM with
//! batched homography refinement.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod ekf;
pub mod event_io;
pub mod geometry;
pub mod gn_refine;
pub mod init;
pub mod metrics;
pub mod par;
pub mod phase;
pub mod sweep;
pub mod synth;
pub mod tracker;
