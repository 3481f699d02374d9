//! Single-image defocus deblurring with iterative filter adaptive networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`ops`], [`tape`]: 4-D tensors, elementary kernels and a
//!   reverse-mode gradient tape.
//! * [`adaptive`]: dense (FAC) and iterative separable (IAC) per-pixel
//!   convolutions; [`warp`]: disparity warping.
//! * [`net`]: the deblurring network; [`losses`]: losses and metrics.
//! * [`synth`]: synthetic dual-pixel defocus data; [`optim`] and [`train`]:
//!   the training loop.
//! * [`bench`]: cost accounting; [`io`] and [`config`]: files and settings.

pub mod adaptive;
pub mod bench;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod net;
pub mod ops;
pub mod optim;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
pub use tensor::{Init, Shape4, Tensor4};
