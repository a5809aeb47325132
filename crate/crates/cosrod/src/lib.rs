//! Planar Cosserat-rod simulation with an inner/outer-loop task-space
//! tracking controller.
//!
//! The outer loop picks a desired rotation field `theta*` (and positive
//! damping gains) so that the position error obeys a damped wave equation;
//! the inner loop computes the distributed moment `m_c` that drives the
//! rotation error through another damped wave equation.

pub mod analysis;
pub mod config;
pub mod driver;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod grid;
pub mod inner;
pub mod lm;
pub mod outer;
pub mod trajectory;

pub use error::{Error, Result};
