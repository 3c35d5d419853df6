//! Obstacle-avoiding trajectory planning on Riemannian manifolds with
//! modified cubic polynomials, together with second-order optimality
//! diagnostics (bi-Jacobi fields, biconjugate points, index form).

pub mod bspline;
pub mod bvp;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod index;
pub mod jacobi;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod potentials;
pub mod scenario;

pub use error::{Error, Result};
pub use model::Model;
