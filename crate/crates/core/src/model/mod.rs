//! Pooling head, classifier, manual backpropagation and the trainer.

pub mod checkpoint;
pub mod gradcheck;
pub mod head;
pub mod network;
pub mod optim;
pub mod params;
pub mod train;

pub use checkpoint::{load_params, save_params, TensorEntry};
pub use gradcheck::{
    check_gradients, gradient_check, random_problem, relative_error, GradCheckReport,
};
pub use head::{attentive_stats_pool, mlp_forward, weighted_ce, PoolCache, STD_FLOOR};
pub use network::{backward, batch_loss, batch_loss_and_grad, forward, Example, ForwardCache};
pub use optim::{Adam, AdamConfig};
pub use params::{HeadParams, ModelShape, Params, DEFAULT_HIDDEN};
pub use train::{
    batch_schedule, class_weights, confusion, predict, train, train_on_schedule, EpochRecord,
    TrainConfig, TrainOutcome,
};
