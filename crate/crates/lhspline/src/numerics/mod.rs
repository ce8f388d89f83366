//! Small numerical kernels shared across the crate: symmetric banded
//! solves, composite quadrature, 1-D and quasi-Newton optimization, and
//! deterministic seed derivation.

pub mod banded;
pub mod optimize;
pub mod quadrature;
pub mod rng;

pub use banded::SymBanded;
pub use optimize::{bfgs_minimize, brent_minimize, brent_root, BfgsResult};
pub use quadrature::{adaptive_simpson, simpson};
pub use rng::{derive_seed, rng_from_seed};
