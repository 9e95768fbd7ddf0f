pub mod baseline_cc;
pub mod control_plane;
pub mod dtqn_agent;
pub mod harness;
pub mod mptcp_core;
pub mod netsim;
pub mod pomdp_env;
pub mod world;
