//! Dense tensors, reverse-mode differentiation, seeded randomness and AdamW.

mod adamw;
mod params;
mod rng;
mod tape;
mod tensor;

pub use adamw::AdamW;
pub use params::{Param, ParamId, ParamStore};
pub use rng::{hash_str, mix64, rand_uniform, randn, Rng};
pub use tape::{Gradients, Graph, NodeId};
pub use tensor::Tensor;
