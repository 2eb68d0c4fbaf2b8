//! U-shaped vision state-space network (UVM-Net) for single image dehazing.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`] and [`ops`]: dense tensors and primitive kernels.
//! * [`autodiff`]: a reverse-mode tape over those kernels.
//! * [`ssm`]: the state-space scan layer (sequential and chunked parallel).
//! * [`block`]: the Bi-SSM block and its conv1d / scaled-dot-product variants.
//! * [`net`]: the U-shaped encoder/decoder, parameter and MAC accounting,
//!   checkpoints.
//! * [`haze`]: synthetic hazy data, metrics, AdamW and the training loop.

pub mod autodiff;
pub mod block;
pub mod error;
pub mod haze;
pub mod io;
pub mod net;
pub mod ops;
pub mod params;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Layout, Real, Tensor};
