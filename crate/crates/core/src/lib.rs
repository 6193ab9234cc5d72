pub mod config;
pub mod decoherence;
pub mod dense;
pub mod error;
pub mod eth;
pub mod fit;
pub mod hydro;
pub mod hilbert;
pub mod kpm;
pub mod io;
pub mod lanczos;
pub mod metrology;
pub mod operators;
pub mod par;
pub mod pipeline;
pub mod propagator;
pub mod sparse;
pub mod spectral;
pub mod vecops;

pub use error::{Error, Result};
pub use hilbert::{BasisSector, Reflection, StateVector};
pub use operators::{ChainParams, DriveParams, ProbeProfile};
pub use sparse::SparseOperator;
