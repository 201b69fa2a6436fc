//! Stereo disparity estimation with a configurable two-stage residual network.
//!
//! The crate is self-contained: a small reverse-mode tensor engine
//! ([`autodiff`]), the stereo operators that run on it ([`ops`]), the
//! network builder ([`network`]), the multi-scale training loop
//! ([`training`]), disparity codecs and metrics ([`io`]) and an inference
//! timing harness ([`bench`]).

pub mod autodiff;
pub mod bench;
pub mod error;
pub mod io;
pub mod network;
pub mod ops;
pub mod tensor;
pub mod training;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
