//! Adaptive distillation objective, stochastic training and convergence
//! diagnostics for the tabular softmax student.

pub mod objective;
pub mod optim;
pub mod rate;
pub mod train;

pub use objective::{kd_gradient, kd_loss, mean_kl, Solution, TargetCell, TargetTable};
pub use rate::{fit_convergence_rate, linear_fit, origin_fit, LinearFit, OriginFit, RateFit};
pub use train::{
    check_margin, classic_uniform_train, noise_sweep, noisy_weight_train, sgd_train, sgd_train_table, NoiseRow,
    NoiseSweep, TraceRecord, TrainTrace, TrainerConfig,
};
