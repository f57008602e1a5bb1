//! Dense tensors, a reverse-mode tape and the layers the model is built from.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use layers::{absorb_bn_stats, BatchNorm, Linear, LstmCell};
pub use optim::Adam;
pub use params::{BufferId, ParamId, ParamStore, Parameter};
pub use tape::{Axis, Grads, Mode, Tape, Var};
pub use tensor::Tensor;
