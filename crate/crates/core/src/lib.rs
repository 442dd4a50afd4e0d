//! Stochastically generated matrix product states through their transfer
//! superoperators.

pub mod error;
pub mod linalg;
pub mod rng;
pub mod states;
pub mod superop;
pub mod contraction;
pub mod ensembles;
pub mod thermo;
pub mod stats;
pub mod experiments;

pub use error::{Error, Result};
pub use linalg::{CMatrix, C64};
pub use rng::RngSeed;
pub use states::{DensityState, HermitianObservable, LocalTensor};
pub use superop::Superoperator;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
