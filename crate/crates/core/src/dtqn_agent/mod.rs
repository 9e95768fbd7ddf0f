//! Transformer Q-function, replay and double-DQN training.

mod agent;
mod config;
mod network;
mod replay;

pub use agent::{
    argmax, check_gradients, loss, loss_graph, td_targets, Agent, AgentError, ContextWindow, NetQ, QFunction,
    TrainMetrics,
};
pub use config::{epsilon, AgentConfig};
pub use network::QNetwork;
pub use replay::{ContextBatch, ReplayBuffer, Transition};
