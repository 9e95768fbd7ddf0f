use super::subflow::{Mode, ProbeState, SubflowState};
use crate::netsim::SimTime;

/// Thresholds for the start phase and the RTT probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifecycleConfig {
    pub start_threshold: f64,
    pub stable_windows: u32,
    pub probe_cwnd: f64,
    /// Probe length in multiples of srtt.
    pub probe_rtts: f64,
    pub estimate_ttl: SimTime,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        LifecycleConfig {
            start_threshold: 16.0,
            stable_windows: 3,
            probe_cwnd: 4.0,
            probe_rtts: 2.0,
            estimate_ttl: SimTime::from_secs(10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartOutcome {
    StillStarting,
    HandoffToAgent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeResult {
    NotDue,
    Started {
        until: SimTime,
    },
    InProgress,
    Refreshed {
        min_rtt: f64,
    },
    /// No sample arrived; the previous estimate was kept and its lifetime
    /// extended.
    KeptPrevious,
}

/// Slow-start growth capped at the threshold, with hand-off once the window
/// has survived `stable_windows` loss-free rounds.
pub fn start_phase_tick(s: &mut SubflowState, acked: u32, cfg: &LifecycleConfig) -> StartOutcome {
    debug_assert_eq!(s.mode, Mode::Start, "start_phase_tick outside the start phase");
    s.set_cwnd((s.cwnd + acked as f64).min(cfg.start_threshold.max(s.cwnd)));
    s.window_acked += acked as f64;
    if s.window_acked >= s.window_goal {
        s.stable_windows += 1;
        s.window_acked = 0.0;
        s.window_goal = s.cwnd;
    }
    if s.cwnd >= cfg.start_threshold && s.stable_windows >= cfg.stable_windows {
        s.mode = Mode::Normal;
        s.resume_mode = Mode::Normal;
        StartOutcome::HandoffToAgent
    } else {
        StartOutcome::StillStarting
    }
}

/// Whether the min-RTT estimate has outlived its lifetime.
pub fn estimate_stale(s: &SubflowState, now: SimTime, cfg: &LifecycleConfig) -> bool {
    s.min_rtt.is_some() && now.saturating_sub(s.min_rtt_stamp) > cfg.estimate_ttl
}

/// Drives the RTT probe: starts it when the estimate is stale and the
/// subflow is in normal mode, and finishes it once its duration elapsed.
pub fn probe_tick(s: &mut SubflowState, now: SimTime, cfg: &LifecycleConfig) -> ProbeResult {
    match s.probe {
        ProbeState::Active {
            until,
            saved_cwnd,
            best,
        } => {
            if now < until {
                return ProbeResult::InProgress;
            }
            s.probe = ProbeState::Idle;
            s.mode = Mode::Normal;
            s.set_cwnd(saved_cwnd);
            s.min_rtt_stamp = now;
            match best {
                Some(b) => {
                    let fresh = s.srtt.map_or(b, |srtt| b.min(srtt));
                    s.min_rtt = Some(fresh);
                    ProbeResult::Refreshed { min_rtt: fresh }
                }
                None => ProbeResult::KeptPrevious,
            }
        }
        ProbeState::Idle => {
            if s.mode != Mode::Normal || !estimate_stale(s, now, cfg) {
                return ProbeResult::NotDue;
            }
            let rtt = s.srtt.or(s.min_rtt).unwrap_or(0.01);
            let until = now + SimTime::from_secs(cfg.probe_rtts * rtt);
            s.probe = ProbeState::Active {
                until,
                saved_cwnd: s.cwnd,
                best: None,
            };
            s.mode = Mode::Probe;
            s.resume_mode = Mode::Normal;
            s.set_cwnd(s.cwnd.min(cfg.probe_cwnd));
            ProbeResult::Started { until }
        }
    }
}

/// Lowers the window restored at the end of an active probe to `cap`.
pub fn cap_probe_restore(s: &mut SubflowState, cap: f64) {
    if let ProbeState::Active { saved_cwnd, .. } = &mut s.probe {
        *saved_cwnd = saved_cwnd.min(cap).max(1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mptcp_core::{on_ack, on_loss, AckSample, LossKind};

    #[test]
    fn slow_start_doubles() {
        let cfg = LifecycleConfig::default();
        let mut s = SubflowState::starting(0, 2.0);
        assert_eq!(start_phase_tick(&mut s, 2, &cfg), StartOutcome::StillStarting);
        assert_eq!(s.cwnd, 4.0);
    }

    #[test]
    fn hands_off_after_stable_windows_at_threshold() {
        let cfg = LifecycleConfig::default();
        let mut s = SubflowState::starting(0, 4.0);
        let mut ticks = 0;
        while start_phase_tick(&mut s, 1, &cfg) == StartOutcome::StillStarting {
            ticks += 1;
            assert!(ticks < 1000);
        }
        assert_eq!(s.mode, Mode::Normal);
        assert_eq!(s.cwnd, 16.0);
        assert!(s.stable_windows() >= 3);
    }

    #[test]
    fn loss_during_start_resets_stability() {
        let cfg = LifecycleConfig::default();
        let mut s = SubflowState::starting(0, 16.0);
        for _ in 0..40 {
            start_phase_tick(&mut s, 1, &cfg);
            if s.mode != Mode::Start {
                break;
            }
            if s.stable_windows() == 2 {
                on_loss(&mut s, LossKind::Timeout, SimTime::ZERO);
                break;
            }
        }
        assert_eq!(s.mode, Mode::Recovery);
        assert_eq!(s.stable_windows(), 0);
        crate::mptcp_core::on_recovery_complete(&mut s);
        assert_eq!(s.mode, Mode::Start);
    }

    fn measured(min_rtt: f64, stamp: SimTime) -> SubflowState {
        let mut s = SubflowState::new(0, 40.0);
        s.srtt = Some(min_rtt * 2.0);
        s.min_rtt = Some(min_rtt);
        s.min_rtt_stamp = stamp;
        s
    }

    #[test]
    fn stale_estimate_starts_probe() {
        let cfg = LifecycleConfig::default();
        let mut s = measured(0.01, SimTime::ZERO);
        assert_eq!(probe_tick(&mut s, SimTime::from_secs(5.0), &cfg), ProbeResult::NotDue);
        let r = probe_tick(&mut s, SimTime::from_secs(10.5), &cfg);
        assert_eq!(
            r,
            ProbeResult::Started {
                until: SimTime::from_secs(10.54)
            }
        );
        assert_eq!((s.mode, s.cwnd), (Mode::Probe, 4.0));
    }

    #[test]
    fn probe_without_samples_keeps_estimate() {
        let cfg = LifecycleConfig::default();
        let mut s = measured(0.01, SimTime::ZERO);
        probe_tick(&mut s, SimTime::from_secs(11.0), &cfg);
        let r = probe_tick(&mut s, SimTime::from_secs(12.0), &cfg);
        assert_eq!(r, ProbeResult::KeptPrevious);
        assert_eq!(s.min_rtt, Some(0.01));
        assert_eq!(s.min_rtt_stamp, SimTime::from_secs(12.0));
        assert_eq!((s.mode, s.cwnd), (Mode::Normal, 40.0));
    }

    #[test]
    fn probe_refreshes_from_window_samples() {
        let cfg = LifecycleConfig::default();
        let mut s = measured(0.01, SimTime::ZERO);
        s.in_flight = 2;
        probe_tick(&mut s, SimTime::from_secs(11.0), &cfg);
        for rtt in [0.013, 0.012] {
            let a = AckSample {
                acked: 1,
                rtt,
                delivered: 1500,
                rate_bps: None,
            };
            on_ack(&mut s, &a, SimTime::from_secs(11.01)).unwrap();
        }
        let r = probe_tick(&mut s, SimTime::from_secs(11.1), &cfg);
        assert_eq!(r, ProbeResult::Refreshed { min_rtt: 0.012 });
    }
}
