//! Joint blind source separation and dereverberation in the STFT domain.
//!
//! The estimator combines multichannel linear-prediction dereverberation with
//! independent vector extraction of `K` target sources out of `M` microphone
//! channels, treating the remaining `M - K` dimensions as a stationary
//! Gaussian noise subspace.  Two block coordinate descent schedules are
//! provided, plus the classic full-rank (`K = M`) and instantaneous (`L = 0`)
//! corners as configuration variants.

pub mod bench;
pub mod error;
pub mod eval;
pub mod io;
pub mod separator;
pub mod stats;
pub mod stft;
pub mod synth;

pub use error::{Error, Result};
