//! Steady one-speed transport in an annulus and its kinetic boundary layers.
//!
//! The crate solves the half-space Milne problem (flat, or with the curvature force of a
//! circular wall) on a truncated slab with specular closure, the full ε-scaled transport
//! problem in an annulus for rotationally symmetric data, and assembles interior plus
//! boundary-layer expansions to study the diffusive limit.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod error;
pub mod expansion;
pub mod force;
pub mod grids;
pub mod linalg;
pub mod milne;
pub mod quad;
pub mod transport;

pub use error::{Error, Result};
