//! Core algorithms for tensor-train compressed point networks on event-camera data.
//!
//! Everything in this crate is pure computation over `alloc` collections: event
//! windowing and subwindow sampling, tensor-train (TT) matrix layers, a small set
//! of layers with hand-written reverse-mode gradients, point-cloud grouping, the
//! four-stage network and its training loop. File formats, configuration files
//! and the command line live in the `ttpoint` companion crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod events;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod ttcore;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Tensor;
