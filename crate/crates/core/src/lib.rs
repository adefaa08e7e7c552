//! Segment-level memory planning and segment-aware int8 kernels for
//! microcontroller inference.

pub mod affine;
pub mod cli;
pub mod kernels;
pub mod netplan;
pub mod planner;
pub mod pool;
