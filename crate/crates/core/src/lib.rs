//! Reservoir embeddings at desk scale.
//!
//! The crate simulates reservoir systems driven by scalar observations of an
//! invertible source map, computes the synchronization map in closed form
//! when everything is linear, conjugates the reservoir so that the
//! synchronization map becomes an isometric embedding for a chosen metric,
//! and certifies the embedding properties numerically.
//!
//! Modules:
//! - [`sources`]: invertible source maps and scalar observations.
//! - [`reservoir`]: reservoir maps, driving, and empirical synchronization.
//! - [`linear_gs`]: closed-form synchronization for the fully linear case.
//! - [`isometrize`]: the conjugation pipeline that makes the map isometric.
//! - [`diagnostics`]: injectivity, immersion, length and angle certification.
//! - [`harness`]: configuration, deterministic seeding, CLI commands, persistence.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod isometrize;
pub mod linalg;
pub mod linear_gs;
pub mod reservoir;
pub mod sources;

pub use error::{Error, Result};
