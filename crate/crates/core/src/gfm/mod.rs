//! Generalized flow matching: a neural spline between paired endpoints, a
//! marginal velocity field regressed onto the spline velocities, and
//! importance-weighted replay of sampled paths.

mod path;
mod spline;
mod train;
mod velocity;

pub use path::{normalize_weights, path_cost, trapezoid, ReplayBuffer, TransitionPath};
pub use spline::{replay_loss, spline_loss, LossGrad, SplineEval, SplineModel};
pub use train::{replay_converged, train, LogRecord, Phase, RoundSummary, TrainConfig, TrainOutcome, Trainer};
pub use velocity::{
    flow_loss, integrate_endpoints, integrate_path, integrate_paths, linear_flow_loss, regression_loss,
    ConstantField, Integrator, VelocityField, VelocityModel,
};
