//! Multipath connection accounting, the min-RTT scheduler and the per-subflow
//! start/probe lifecycle.

mod allocation;
mod lifecycle;
mod scheduler;
mod subflow;

pub use allocation::{allocation_share, indicator_allocation, split_load, AllocationStats};
pub use lifecycle::{
    cap_probe_restore, estimate_stale, probe_tick, start_phase_tick, LifecycleConfig, ProbeResult, StartOutcome,
};
pub use scheduler::{availability, select_subflow, ConnectionState};
pub use subflow::{
    on_ack, on_loss, on_recovery_complete, AccountingFault, AckReport, AckSample, LossKind, Mode, SubflowState,
};
