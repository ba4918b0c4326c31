//! Billiard flow in a three-dimensional semi-dispersing tube.

pub mod analysis;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod polygon;
pub mod pvp;
pub mod real;
pub mod rng;
pub mod sections;
pub mod tube;
pub mod vec3;

pub use error::{Error, Result, SingularKind};
pub use vec3::{LineElement, Vec3};
