//! Neural post-processing: a small feed-forward network trained by
//! gradient descent on proper scores, with two output heads — a
//! censored-normal distribution head and a corrected-ensemble head.

pub mod backward;
pub mod mlp;
pub mod train;

pub use backward::{backward, ensemble_crps_grad, loss_drn, loss_members, Gradients};
pub use train::{
    aggregate_runs, evaluation_loss, permutation_importance, train, train_runs, training_arrays,
    TrainOutcome,
};
pub use mlp::{
    drn_head, feature_row, forward, forward_trace, load_checkpoint, members_head, param_count,
    save_checkpoint, Head, Layer, MlpConfig, MlpWeights, Prediction, Standardizer, TrainedModel,
    CHECKPOINT_VERSION, INPUT_DIM, MEMBERS_OUT, SIGMA_HEAD_FLOOR, TARGET_SCALE,
};
