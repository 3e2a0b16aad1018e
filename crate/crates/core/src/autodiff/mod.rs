//! Dense tensors with tape-based reverse-mode differentiation, plus the
//! layers and optimizer the models are built from.

pub mod gradcheck;
pub mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::Adam;
pub use params::{Param, ParamId, ParamStore};
pub use tape::{CustomOp, Tape, Var};
pub use tensor::{logsumexp, Real, Tensor};
