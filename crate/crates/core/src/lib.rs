//! Corotational cut finite element engine.
//!
//! Solids are discretised on a background tetrahedral mesh that does not
//! conform to their boundary or to internal material interfaces. Elements cut
//! by the immersed surface are integrated on a tree of template
//! sub-tetrahedra, boundary conditions on the surface are imposed through
//! barycentric maps and Lagrange multipliers, and a corotational beam models
//! a needle interacting with the tissue.

pub mod beam;
pub mod classify;
pub mod constraints;
pub mod dynamics;
pub mod embed;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod scenarios;

pub use error::{Error, Result};
pub use geometry::Point3;
