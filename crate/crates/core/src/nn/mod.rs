//! Layers with hand-written reverse-mode gradients.
//!
//! Every layer follows the same protocol: `forward(x, Mode::Train)` caches what
//! the backward pass needs, `backward(dy)` consumes that cache, accumulates
//! parameter gradients (`+=`) and returns the input gradient. `Mode::Eval`
//! caches nothing.

mod activation;
mod batchnorm;
mod linear;
mod loss;
mod param;
mod pool;
mod resblock;
mod tt_linear;

pub use activation::{relu, relu_backward, relu_backward_inplace, relu_inplace};
pub use batchnorm::BatchNorm;
pub use linear::{Linear, Projection};
pub use loss::{softmax, softmax_cross_entropy};
pub use param::{join, BufferMut, BufferRef, Module, ParamMut, ParamRef};
pub use pool::{max_pool_backward, max_pool_groups, PoolIndex};
pub use resblock::ResBlock;
pub use tt_linear::{TtExecution, TtLinear};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
