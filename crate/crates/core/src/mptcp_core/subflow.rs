use std::collections::VecDeque;

use thiserror::Error;

use crate::netsim::SimTime;

/// Transport mode of a subflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Normal,
    Recovery,
    Start,
    Probe,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Normal => "normal",
            Mode::Recovery => "recovery",
            Mode::Start => "start",
            Mode::Probe => "probe",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Some(match s {
            "normal" => Mode::Normal,
            "recovery" => Mode::Recovery,
            "start" => Mode::Start,
            "probe" => Mode::Probe,
            _ => return None,
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AccountingFault {
    #[error("subflow {subflow_id}: {acked} packets acked with only {in_flight} in flight")]
    AckedExceedsInFlight {
        subflow_id: usize,
        acked: u32,
        in_flight: u32,
    },
    #[error("subflow {subflow_id}: non-positive RTT sample {rtt}")]
    BadRttSample { subflow_id: usize, rtt: f64 },
}

/// How a loss was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Retransmission timer expired.
    Timeout,
    /// Three later packets were acknowledged.
    DuplicateAcks,
}

/// Per-ACK measurement fed to [`on_ack`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckSample {
    pub acked: u32,
    /// Seconds.
    pub rtt: f64,
    /// Bytes newly delivered by this ACK.
    pub delivered: u64,
    /// Delivery-rate sample in bits per second, when one could be taken.
    pub rate_bps: Option<f64>,
}

/// Record handed to the control plane after each ACK.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckReport {
    pub subflow_id: usize,
    pub time: SimTime,
    pub acked: u32,
    pub delivered_bytes: u64,
    pub rtt: f64,
    pub cwnd: f64,
    pub srtt: f64,
    pub min_rtt: f64,
    pub bw_estimate: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ProbeState {
    Idle,
    Active {
        until: SimTime,
        saved_cwnd: f64,
        best: Option<f64>,
    },
}

/// Transport accounting for one subflow. Times are seconds; `cwnd` is in
/// packets and may carry a fractional part for additive increase, only the
/// integer part counts towards the send window.
#[derive(Debug, Clone, PartialEq)]
pub struct SubflowState {
    pub subflow_id: usize,
    pub cwnd: f64,
    pub queued: u32,
    pub in_flight: u32,
    pub mode: Mode,
    pub srtt: Option<f64>,
    pub rttvar: f64,
    pub last_rtt: Option<f64>,
    pub min_rtt: Option<f64>,
    pub min_rtt_stamp: SimTime,
    pub max_delivery_rate: f64,
    pub delivered_bytes: u64,
    /// Whether duplicate-ACK losses suspend scheduling like a timeout does.
    pub block_on_fast_recovery: bool,
    /// Sliding window for the delivery-rate max filter.
    pub bw_window: SimTime,
    pub(crate) resume_mode: Mode,
    pub(crate) stable_windows: u32,
    pub(crate) window_acked: f64,
    pub(crate) window_goal: f64,
    pub(crate) probe: ProbeState,
    bw_samples: VecDeque<(SimTime, f64)>,
}

impl SubflowState {
    pub fn new(subflow_id: usize, cwnd: f64) -> Self {
        SubflowState {
            subflow_id,
            cwnd: cwnd.max(1.0),
            queued: 0,
            in_flight: 0,
            mode: Mode::Normal,
            srtt: None,
            rttvar: 0.0,
            last_rtt: None,
            min_rtt: None,
            min_rtt_stamp: SimTime::ZERO,
            max_delivery_rate: 0.0,
            delivered_bytes: 0,
            block_on_fast_recovery: false,
            bw_window: SimTime::from_secs(1.0),
            resume_mode: Mode::Normal,
            stable_windows: 0,
            window_acked: 0.0,
            window_goal: cwnd.max(1.0),
            probe: ProbeState::Idle,
            bw_samples: VecDeque::new(),
        }
    }

    /// A subflow that begins in the start phase.
    pub fn starting(subflow_id: usize, initial_cwnd: f64) -> Self {
        let mut s = SubflowState::new(subflow_id, initial_cwnd);
        s.mode = Mode::Start;
        s.resume_mode = Mode::Start;
        s
    }

    /// Integer send window.
    pub fn window(&self) -> u32 {
        self.cwnd.floor() as u32
    }

    pub fn set_cwnd(&mut self, cwnd: f64) {
        self.cwnd = cwnd.max(1.0);
    }

    /// Smoothed RTT with an unmeasured subflow counting as zero.
    pub fn srtt_or_zero(&self) -> f64 {
        self.srtt.unwrap_or(0.0)
    }

    /// Retransmission timeout, floored at `min_rto`.
    pub fn rto(&self, min_rto: f64) -> f64 {
        match self.srtt {
            Some(s) => (s + 4.0 * self.rttvar).max(min_rto),
            None => min_rto.max(1.0),
        }
    }

    pub fn is_probing(&self) -> bool {
        matches!(self.probe, ProbeState::Active { .. })
    }

    pub fn stable_windows(&self) -> u32 {
        self.stable_windows
    }

    fn record_rate(&mut self, now: SimTime, rate: f64) {
        while self.bw_samples.back().is_some_and(|&(_, r)| r <= rate) {
            self.bw_samples.pop_back();
        }
        self.bw_samples.push_back((now, rate));
        self.expire_rates(now);
    }

    fn expire_rates(&mut self, now: SimTime) {
        while self
            .bw_samples
            .front()
            .is_some_and(|&(t, _)| now.saturating_sub(t) > self.bw_window)
            && self.bw_samples.len() > 1
        {
            self.bw_samples.pop_front();
        }
        self.max_delivery_rate = self.bw_samples.front().map_or(0.0, |s| s.1);
    }
}

/// Updates accounting for `sample.acked` newly acknowledged packets.
pub fn on_ack(s: &mut SubflowState, sample: &AckSample, now: SimTime) -> Result<AckReport, AccountingFault> {
    if sample.acked > s.in_flight {
        return Err(AccountingFault::AckedExceedsInFlight {
            subflow_id: s.subflow_id,
            acked: sample.acked,
            in_flight: s.in_flight,
        });
    }
    if !(sample.rtt > 0.0) {
        return Err(AccountingFault::BadRttSample {
            subflow_id: s.subflow_id,
            rtt: sample.rtt,
        });
    }
    s.in_flight -= sample.acked;
    s.delivered_bytes += sample.delivered;
    let rtt = sample.rtt;
    s.last_rtt = Some(rtt);
    s.srtt = Some(match s.srtt {
        None => {
            s.rttvar = rtt / 2.0;
            rtt
        }
        Some(srtt) => {
            s.rttvar = 0.75 * s.rttvar + 0.25 * (srtt - rtt).abs();
            srtt + (rtt - srtt) / 8.0
        }
    });
    if s.min_rtt.map_or(true, |m| rtt < m) {
        s.min_rtt = Some(rtt);
        s.min_rtt_stamp = now;
    }
    if let ProbeState::Active { best, .. } = &mut s.probe {
        *best = Some(best.map_or(rtt, |b: f64| b.min(rtt)));
    }
    match sample.rate_bps {
        Some(rate) if rate.is_finite() && rate > 0.0 => s.record_rate(now, rate),
        _ => s.expire_rates(now),
    }
    Ok(AckReport {
        subflow_id: s.subflow_id,
        time: now,
        acked: sample.acked,
        delivered_bytes: sample.delivered,
        rtt,
        cwnd: s.cwnd,
        srtt: s.srtt.unwrap_or(rtt),
        min_rtt: s.min_rtt.unwrap_or(rtt),
        bw_estimate: s.max_delivery_rate,
        mode: s.mode,
    })
}

/// Halves the window (floor 1) and enters recovery. Duplicate-ACK losses
/// keep the subflow schedulable unless `block_on_fast_recovery` is set.
pub fn on_loss(s: &mut SubflowState, kind: LossKind, _now: SimTime) {
    s.set_cwnd((s.cwnd / 2.0).floor());
    s.stable_windows = 0;
    s.window_acked = 0.0;
    s.window_goal = s.cwnd;
    if let ProbeState::Active { saved_cwnd, .. } = s.probe {
        // A loss aborts the probe; the halved pre-probe window is restored.
        s.probe = ProbeState::Idle;
        s.set_cwnd((saved_cwnd / 2.0).floor());
        s.mode = s.resume_mode;
    }
    let enter = kind == LossKind::Timeout || s.block_on_fast_recovery;
    if enter && s.mode != Mode::Recovery {
        s.resume_mode = if s.mode == Mode::Start {
            Mode::Start
        } else {
            Mode::Normal
        };
        s.mode = Mode::Recovery;
    }
}

/// Leaves recovery once the loss window has been repaired.
pub fn on_recovery_complete(s: &mut SubflowState) {
    if s.mode == Mode::Recovery {
        s.mode = s.resume_mode;
    }
}
