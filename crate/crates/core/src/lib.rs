//! Audio-visual track selection on synthetic and real features: log-mel
//! acoustic pipeline, a frozen 3D-ConvNet visual frontend, a 1D-ConvNet
//! query network, bilinear attention over candidate tracks, cross-entropy
//! training, and a multi-track evaluation harness.

pub mod attention;
pub mod checkpoint;
pub mod error;
pub mod features;
pub mod frontend;
pub mod gradcheck;
pub mod harness;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod tensorio;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Parameter, SeededRng, Tensor};
