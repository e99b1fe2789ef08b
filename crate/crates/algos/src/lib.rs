//! Algorithms written against the `lpf` primitives and nothing else: the
//! bootstrap and error-agreement pattern, a broadcast, and a parallel FFT
//! with one global redistribution.

pub mod collectives;
pub mod fft;
pub mod hello;

pub use collectives::{broadcast, error_allreduce, OK};
pub use fft::{dft_oracle, fft_forward, fft_local, relative_l2_error, DistVector, Distribution};
pub use hello::{bootstrap, encode_dims, Bootstrap, ILLEGAL_INPUT};
