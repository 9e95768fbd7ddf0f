use serde::{Deserialize, Serialize};

use super::frames::{CwndDirective, Frame, FrameDecoder, MetricReport};

/// Consecutive silent windows after which a subflow stops gating invocation.
pub const INACTIVITY_WINDOWS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvocationMode {
    EveryWindow,
    AllSubflowsReported,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvocationPolicy {
    pub mode: InvocationMode,
    /// Seconds.
    pub window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxyDecision {
    InvokeDecision,
    Wait,
}

/// Aggregation point between the per-subflow clients and the engine for one
/// connection.
#[derive(Debug, Clone)]
pub struct Proxy {
    pub conn_id: u32,
    pub policy: InvocationPolicy,
    pub decoder: FrameDecoder,
    pending: Vec<Vec<MetricReport>>,
    silent: Vec<u32>,
    last_report_seq: Vec<Option<u64>>,
    last_decision_seq: Option<u64>,
    pub rejected_directives: u64,
    pub stale_directives: u64,
    pub dropped_reports: u64,
}

impl Proxy {
    pub fn new(conn_id: u32, subflows: usize, policy: InvocationPolicy) -> Self {
        assert!(policy.window > 0.0, "invocation window must be positive");
        Proxy {
            conn_id,
            policy,
            decoder: FrameDecoder::default(),
            pending: vec![Vec::new(); subflows],
            silent: vec![0; subflows],
            last_report_seq: vec![None; subflows],
            last_decision_seq: None,
            rejected_directives: 0,
            stale_directives: 0,
            dropped_reports: 0,
        }
    }

    pub fn subflows(&self) -> usize {
        self.pending.len()
    }

    /// Decodes a chunk of client traffic and buffers its metric reports.
    pub fn ingest(&mut self, bytes: &[u8]) {
        for frame in self.decoder.decode_stream(bytes) {
            match frame {
                Frame::Metric(r) => self.ingest_report(r),
                Frame::Directive(_) => self.dropped_reports += 1,
            }
        }
    }

    pub fn ingest_report(&mut self, r: MetricReport) {
        let i = r.subflow_id as usize;
        if r.conn_id != self.conn_id || i >= self.pending.len() {
            self.dropped_reports += 1;
            return;
        }
        if self.last_report_seq[i].is_some_and(|s| r.seq <= s) {
            self.dropped_reports += 1;
            return;
        }
        self.last_report_seq[i] = Some(r.seq);
        self.pending[i].push(r);
    }

    pub fn is_active(&self, subflow: usize) -> bool {
        self.silent[subflow] < INACTIVITY_WINDOWS
    }

    /// Called at every window boundary.
    pub fn collect(&mut self) -> ProxyDecision {
        for (i, reports) in self.pending.iter().enumerate() {
            if reports.is_empty() {
                self.silent[i] = self.silent[i].saturating_add(1);
            } else {
                self.silent[i] = 0;
            }
        }
        match self.policy.mode {
            InvocationMode::EveryWindow => ProxyDecision::InvokeDecision,
            InvocationMode::AllSubflowsReported => {
                let ready = (0..self.pending.len()).all(|i| !self.pending[i].is_empty() || !self.is_active(i));
                if ready {
                    ProxyDecision::InvokeDecision
                } else {
                    ProxyDecision::Wait
                }
            }
        }
    }

    /// Hands the buffered reports to the engine and starts a new window.
    pub fn take_reports(&mut self) -> Vec<Vec<MetricReport>> {
        self.pending.iter_mut().map(std::mem::take).collect()
    }

    /// Splits a joint directive into one message per subflow. Directives for
    /// another connection or with a sequence number that is not newer than
    /// the last forwarded one are dropped.
    pub fn demux(&mut self, d: &CwndDirective) -> Vec<CwndDirective> {
        if d.conn_id != self.conn_id {
            log::warn!(
                "proxy for connection {} rejected directive for unknown connection {}",
                self.conn_id,
                d.conn_id
            );
            self.rejected_directives += 1;
            return Vec::new();
        }
        if self.last_decision_seq.is_some_and(|s| d.decision_seq <= s) {
            self.stale_directives += 1;
            return Vec::new();
        }
        self.last_decision_seq = Some(d.decision_seq);
        d.target_cwnd
            .iter()
            .enumerate()
            .map(|(i, &t)| CwndDirective {
                conn_id: d.conn_id,
                decision_seq: d.decision_seq,
                target_cwnd: vec![t],
                subflow_id: Some(i as u32),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(sub: u32, seq: u64) -> MetricReport {
        MetricReport {
            conn_id: 0,
            subflow_id: sub,
            seq,
            timestamp_us: seq,
            delivered_bytes: 1500,
            rtt_us: 10_000,
            cwnd: 10,
            min_rtt_us: 10_000,
            bw_estimate_bps: 1_000_000,
            mode: "normal".into(),
            expflag: false,
        }
    }

    fn policy(mode: InvocationMode) -> InvocationPolicy {
        InvocationPolicy { mode, window: 0.02 }
    }

    #[test]
    fn waits_for_every_subflow() {
        let mut p = Proxy::new(0, 2, policy(InvocationMode::AllSubflowsReported));
        p.ingest_report(report(0, 1));
        assert_eq!(p.collect(), ProxyDecision::Wait);
        p.ingest_report(report(1, 1));
        assert_eq!(p.collect(), ProxyDecision::InvokeDecision);
    }

    #[test]
    fn every_window_always_invokes() {
        let mut p = Proxy::new(0, 2, policy(InvocationMode::EveryWindow));
        assert_eq!(p.collect(), ProxyDecision::InvokeDecision);
    }

    #[test]
    fn silent_subflow_stops_blocking_after_three_windows() {
        let mut p = Proxy::new(0, 2, policy(InvocationMode::AllSubflowsReported));
        let mut seq = 0;
        let mut decisions = Vec::new();
        for _ in 0..4 {
            seq += 1;
            p.ingest_report(report(0, seq));
            decisions.push(p.collect());
            if decisions.last() == Some(&ProxyDecision::InvokeDecision) {
                p.take_reports();
            }
        }
        use ProxyDecision::*;
        assert_eq!(decisions, [Wait, Wait, InvokeDecision, InvokeDecision]);
        assert!(!p.is_active(1));
        p.ingest_report(report(1, 1));
        p.collect();
        assert!(p.is_active(1));
    }

    #[test]
    fn demux_splits_and_guards_sequence() {
        let mut p = Proxy::new(0, 2, policy(InvocationMode::EveryWindow));
        let d = CwndDirective {
            conn_id: 0,
            decision_seq: 1,
            target_cwnd: vec![10, 12],
            subflow_id: None,
        };
        let parts = p.demux(&d);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[1].target_cwnd, vec![12]);
        assert_eq!(parts[1].subflow_id, Some(1));
        assert!(p.demux(&d).is_empty());
        assert_eq!(p.stale_directives, 1);
        let other = CwndDirective {
            conn_id: 9,
            decision_seq: 5,
            ..d
        };
        assert!(p.demux(&other).is_empty());
        assert_eq!(p.rejected_directives, 1);
    }
}
