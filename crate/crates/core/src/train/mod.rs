//! Loss, backpropagation through time, optimizers, epoch training and grid search.

mod backprop;
mod grid;
mod loss;
mod optim;
mod trainer;

pub use backprop::{backprop, batch_loss, finite_diff_grad, GradientSet};
pub use grid::{grid_search, GridResult, GridRow, GridSpec};
pub use loss::mse_loss;
pub use optim::{gd_step, gd_step_slice, lbfgs_minimize, LbfgsOptions, LbfgsOutcome};
pub(crate) use trainer::{condition_gradient, lbfgs_fit};
pub use trainer::{next_step_errors, train_network, Optimizer, TrainConfig, TrainReport};
