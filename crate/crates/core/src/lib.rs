//! Numerical laboratory for quasibounded plurisubharmonic functions: discrete
//! cones of plurisubharmonic functions on model domains, Perron–Bremermann
//! envelopes, the reduction operator `S` with tame/singular verdicts, and exact
//! finite Jensen-measure duality.

pub mod casebook;
pub mod cone;
pub mod config;
pub mod envelope;
pub mod error;
pub mod ext;
pub mod formulas;
pub mod grid;
pub mod jensen;
pub mod lp;
pub mod psh;
pub mod sop;

pub use error::{LabError, Result};
