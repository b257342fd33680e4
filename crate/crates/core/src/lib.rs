//! Component-wise sparse mixture regression.
//!
//! Clusters samples by how their response depends on the features, using a
//! finite mixture of linear regressions whose components are each sparse. Fitting uses
//! classification EM: an E-step computes responsibilities, a C-step makes
//! hard assignments, and an M-step fits a cross-validated lasso to each
//! cluster, followed by a soft EM refit restricted to the selected
//! variables.

pub mod bench;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod mixture;
pub mod regress;
pub mod seed;
pub mod select;
pub mod sim;

pub use error::{Error, Result};
