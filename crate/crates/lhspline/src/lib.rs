pub mod binning;
mod error;
pub mod fit;
pub mod numerics;
pub mod spline;
pub mod density;
pub mod evt;
pub mod uncertainty;
pub use binning::{build_histogram, build_histogram_censored, LogHistogram};
pub use error::{Error, Result};
