use std::collections::VecDeque;

use crate::mptcp_core::{cap_probe_restore, Mode, SubflowState};
use crate::pomdp_env::{update_expflag, EXPFLAG_PERIOD};

/// What happened to a directive at the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyOutcome {
    Applied,
    /// Subflow is recovering: the target only caps the window.
    Clamped,
    /// Start or probe phase owns the window; the target is kept for later.
    Deferred,
    Stale,
}

/// Client-side enforcement state for one subflow. The target acts as an
/// upper limit: reductions apply at once, growth happens one packet per ACK.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSubflow {
    pub last_decision_seq: Option<u64>,
    pub target: Option<f64>,
    pub expflag: bool,
    pub report_seq: u64,
    pub applied: u64,
    history: VecDeque<f64>,
    period: usize,
}

impl Default for ClientSubflow {
    fn default() -> Self {
        ClientSubflow::new(EXPFLAG_PERIOD)
    }
}

impl ClientSubflow {
    pub fn new(expflag_period: usize) -> Self {
        ClientSubflow {
            last_decision_seq: None,
            target: None,
            expflag: false,
            report_seq: 0,
            applied: 0,
            history: VecDeque::with_capacity(expflag_period + 1),
            period: expflag_period,
        }
    }

    /// Accepts a directive unless its sequence number is not newer than the
    /// last one seen.
    pub fn apply_directive(&mut self, s: &mut SubflowState, decision_seq: u64, target: u32) -> ApplyOutcome {
        if self.last_decision_seq.is_some_and(|last| decision_seq <= last) {
            return ApplyOutcome::Stale;
        }
        self.last_decision_seq = Some(decision_seq);
        self.applied += 1;
        let target = (target as f64).max(1.0);
        self.target = Some(target);
        // The flag follows the commanded window, not the loss sawtooth.
        self.history.push_back(target);
        if self.history.len() > self.period + 1 {
            self.history.pop_front();
        }
        self.expflag = update_expflag(self.history.make_contiguous(), self.period);
        match s.mode {
            Mode::Start => ApplyOutcome::Deferred,
            Mode::Probe => {
                cap_probe_restore(s, target);
                ApplyOutcome::Deferred
            }
            Mode::Recovery => {
                if target < s.cwnd {
                    s.set_cwnd(target);
                }
                ApplyOutcome::Clamped
            }
            Mode::Normal => {
                if target < s.cwnd {
                    s.set_cwnd(target);
                }
                ApplyOutcome::Applied
            }
        }
    }

    /// Per-ACK growth towards the target. Returns whether the window grew.
    pub fn grow_on_ack(&self, s: &mut SubflowState) -> bool {
        match self.target {
            Some(t) if s.mode == Mode::Normal && s.cwnd < t => {
                s.set_cwnd((s.cwnd.floor() + 1.0).min(t));
                true
            }
            _ => false,
        }
    }

    /// Re-imposes the target as a cap, e.g. after a probe restored the window.
    pub fn enforce_cap(&self, s: &mut SubflowState) {
        if let Some(t) = self.target {
            if t < s.cwnd {
                s.set_cwnd(t);
            }
        }
    }
}
