//! Ground state approximation for one-dimensional gapped local Hamiltonians.

pub mod agsp;
pub mod driver;
pub mod linalg;
pub mod model;
pub mod mps;
pub mod oracle;
pub mod sdp;
pub mod suites;
pub mod viable;

pub use num_complex::Complex64 as C64;
