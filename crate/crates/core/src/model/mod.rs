//! Decoder-only transformer: parameters, inference and gradients.

pub mod backward;
pub mod config;
pub mod forward;
pub mod init;
pub mod kernels;
pub mod state;

pub use backward::{batch_loss, loss_and_grads, loss_and_grads_masked};
pub use config::ModelConfig;
pub use forward::{
    argmax, forward_cached, forward_logits, greedy_generate, sequence_logprob, KvCache,
    LanguageModel, Logits,
};
pub use init::init_params;
pub use state::{tensor_site, ModelState, Tensor, TensorSite};
