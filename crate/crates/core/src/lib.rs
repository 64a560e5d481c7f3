//! Edge detection with the SDPED architecture.
//!
//! * [`tensor`]: dense tensors, a reverse-mode autodiff tape, Adam.
//! * [`model`]: the SDPED network (cascaded skipping density blocks plus a
//!   multi-layer fusing block) and its binary container format.
//! * [`train`]: weighted BCE loss and the crop/batch/schedule training loop.
//! * [`augment`]: recursive tiling, the eight rotation/flip transforms, and
//!   injection of ground-truth maps as noiseless inputs.
//! * [`eval`]: thinning, tolerance matching, and ODS/OIS/AP benchmarking.
//! * [`io`]: dataset layout, partitions, and prediction PNGs.

pub mod augment;
pub mod error;
pub mod eval;
pub mod io;
pub mod maps;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use maps::{EdgeMap, SoftEdgeMap};
pub use model::{ModelConfig, SdpedModel};
pub use tensor::Tensor;
