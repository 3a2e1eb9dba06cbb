//! Cross-view metric learning: KISSME, XQDA and kernel XQDA, with synthetic
//! data generation, file I/O and CMC evaluation.

pub mod bench;
pub mod container;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod kissme;
pub mod kxqda;
pub mod linalg;
pub mod rng;
pub mod selftest;
pub mod xqda;

pub use error::{Error, ErrorKind, Result};
