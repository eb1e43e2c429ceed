//! Anchor placement for time-of-arrival localization of targets outside the
//! anchors' convex hull.
//!
//! The crate is organized bottom-up:
//!
//! - [`matlin`]: 2×2/3×3 symmetric linear algebra and rank-1 update identities.
//! - [`geometry`]: exact DOP, far-field range-normalized DOP and its bounds.
//! - [`placement`]: single-anchor update formulas, cost functions and bounds.
//! - [`solver`]: multistart penalty solver for one new anchor.
//! - [`pipeline`]: iterative anchor addition (optimization and eigenvector schemes).
//! - [`localize`]: range simulation and least-squares position fixes.
//! - [`experiments`]: Monte-Carlo campaigns, configuration selection, timing fits.

pub mod error;
pub mod experiments;
pub mod geometry;
pub mod localize;
pub mod matlin;
pub mod pipeline;
pub mod placement;
pub mod solver;

pub use error::{Error, Result};
pub use matlin::{SymMat2, SymMat3, Vec3};
