//! Forward simulation and corner probes for elastic dislocations in layered
//! polygonal domains.
//!
//! The crate covers the pipeline from geometry description to fault
//! reconstruction: layered domains with polygonal faults and polynomial jump
//! data, complex exponential probe fields, boundary pairings that localize
//! at fault corners, a plane-strain finite element solver for the forward
//! transmission problem, a slab-averaging reduction of thin 3D geometries to
//! the plane, and a least-squares reconstruction loop driven by boundary
//! measurements.

pub mod error;
pub mod la;
pub mod quad;
pub mod sweep;

pub mod cgo;
pub mod geometry;
pub mod mesh;
pub mod forward;
pub mod probe;
pub mod dimred;
pub mod inverse;

pub use error::{Error, Result};
