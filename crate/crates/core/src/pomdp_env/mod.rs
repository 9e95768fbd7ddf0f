//! Decision-process wrapper: observations, joint actions, reward shaping and
//! the stepping environment.

mod action;
mod env;
mod observation;
mod reward;

pub use action::ActionSpace;
pub use env::{directive_targets, initial_targets, Env, EnvConfig, EnvError, Network, StepInfo, StepResult};
pub use observation::{
    aggregate_subflow, aggregate_window, update_expflag, Observation, SubflowObs, FIELDS_PER_SUBFLOW,
};
pub use reward::{
    alpha, rtt_penalty, subflow_reward, threshold, total_reward, tput_reward, BoundaryOverride, RewardComponents,
    RewardConfig, RewardInput, TputNorm, EXPFLAG_PERIOD,
};
