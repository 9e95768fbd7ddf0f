//! Classical window controllers used as comparison points.

use serde::{Deserialize, Serialize};

use crate::netsim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineAlgorithm {
    Reno,
    Cubic,
    Lia,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicParams {
    pub c: f64,
    /// Multiplicative decrease fraction: the window drops to `(1 − beta)·W`.
    pub beta: f64,
}

impl Default for CubicParams {
    fn default() -> Self {
        CubicParams { c: 0.4, beta: 0.3 }
    }
}

/// `W(t) = C(t − K)³ + W_max` with `K = ∛(W_max·β/C)`, floored at one packet.
pub fn cubic_window(t_since_loss: f64, w_max: f64, c: f64, beta: f64) -> f64 {
    assert!(c > 0.0, "cubic C must be positive");
    let k = (w_max * beta / c).cbrt();
    (c * (t_since_loss - k).powi(3) + w_max).max(1.0)
}

/// Per-ACK increase for subflow `i` under linked increases:
/// `min(a / cwnd_total, 1 / cwnd_i)` where
/// `a = cwnd_total · max_k(cwnd_k / rtt_k²) / (Σ_k cwnd_k / rtt_k)²`.
/// Evaluated as `max_k(s_k² / cwnd_k)` with `s_k = (cwnd_k / rtt_k) / Σ`, so
/// a lone subflow gets exactly `1 / cwnd`.
pub fn lia_increase(cwnds: &[f64], rtts: &[f64], i: usize) -> f64 {
    assert_eq!(cwnds.len(), rtts.len());
    assert!(rtts.iter().all(|&r| r > 0.0), "every subflow needs an RTT estimate");
    let denom: f64 = cwnds.iter().zip(rtts).map(|(w, r)| w / r).sum();
    let a_over_total = cwnds
        .iter()
        .zip(rtts)
        .map(|(w, r)| {
            let share = (w / r) / denom;
            share * share / w
        })
        .fold(0.0, f64::max);
    a_over_total.min(1.0 / cwnds[i])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSubflow {
    pub cwnd: f64,
    pub ssthresh: f64,
    ca_count: f64,
    w_max: f64,
    epoch_start: Option<SimTime>,
    w_est: f64,
}

impl BaselineSubflow {
    pub fn new(initial_cwnd: f64) -> Self {
        BaselineSubflow {
            cwnd: initial_cwnd.max(1.0),
            ssthresh: f64::INFINITY,
            ca_count: 0.0,
            w_max: 0.0,
            epoch_start: None,
            w_est: 0.0,
        }
    }

    pub fn in_slow_start(&self) -> bool {
        self.cwnd < self.ssthresh
    }
}

/// Reno per-ACK update: +1 in slow start, +1 per window of ACKs otherwise.
pub fn reno_on_ack(s: &mut BaselineSubflow, acked: u32) -> f64 {
    for _ in 0..acked {
        if s.in_slow_start() {
            s.cwnd += 1.0;
        } else {
            s.ca_count += 1.0;
            if s.ca_count >= s.cwnd.floor() {
                s.ca_count -= s.cwnd.floor();
                s.cwnd += 1.0;
            }
        }
    }
    s.cwnd
}

/// Multiplicative decrease to half, with `ssthresh ≥ 2`.
pub fn reno_on_loss(s: &mut BaselineSubflow) -> f64 {
    s.ssthresh = (s.cwnd / 2.0).floor().max(2.0);
    s.cwnd = s.ssthresh;
    s.ca_count = 0.0;
    s.cwnd
}

/// Per-connection controller state for the comparison algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub algorithm: BaselineAlgorithm,
    pub subflows: Vec<BaselineSubflow>,
    pub cubic: CubicParams,
}

impl BaselineState {
    pub fn new(algorithm: BaselineAlgorithm, subflows: usize, initial_cwnd: f64) -> Self {
        BaselineState {
            algorithm,
            subflows: (0..subflows).map(|_| BaselineSubflow::new(initial_cwnd)).collect(),
            cubic: CubicParams::default(),
        }
    }

    pub fn cwnd(&self, i: usize) -> f64 {
        self.subflows[i].cwnd
    }

    /// Window after `acked` packets are acknowledged on subflow `i`. `rtts`
    /// holds the smoothed RTT of every subflow (seconds, 0 when unknown).
    pub fn on_ack(&mut self, i: usize, acked: u32, now: SimTime, rtts: &[f64]) -> f64 {
        match self.algorithm {
            BaselineAlgorithm::Reno => reno_on_ack(&mut self.subflows[i], acked),
            BaselineAlgorithm::Cubic => self.cubic_on_ack(i, acked, now, rtts[i]),
            BaselineAlgorithm::Lia => {
                if self.subflows[i].in_slow_start() || rtts.iter().any(|&r| r <= 0.0) {
                    return reno_on_ack(&mut self.subflows[i], acked);
                }
                for _ in 0..acked {
                    let cwnds: Vec<f64> = self.subflows.iter().map(|s| s.cwnd).collect();
                    self.subflows[i].cwnd += lia_increase(&cwnds, rtts, i);
                }
                self.subflows[i].cwnd
            }
        }
    }

    pub fn on_loss(&mut self, i: usize) -> f64 {
        let beta = self.cubic.beta;
        let s = &mut self.subflows[i];
        match self.algorithm {
            BaselineAlgorithm::Reno | BaselineAlgorithm::Lia => reno_on_loss(s),
            BaselineAlgorithm::Cubic => {
                s.w_max = s.cwnd;
                s.cwnd = (s.cwnd * (1.0 - beta)).max(2.0);
                s.ssthresh = s.cwnd;
                s.epoch_start = None;
                s.cwnd
            }
        }
    }

    fn cubic_on_ack(&mut self, i: usize, acked: u32, now: SimTime, rtt: f64) -> f64 {
        let CubicParams { c, beta } = self.cubic;
        let s = &mut self.subflows[i];
        if s.in_slow_start() {
            s.cwnd += acked as f64;
            return s.cwnd;
        }
        let start = *s.epoch_start.get_or_insert_with(|| {
            if s.w_max < s.cwnd {
                s.w_max = s.cwnd;
            }
            s.w_est = s.cwnd;
            now
        });
        let t = (now - start).as_secs() + rtt.max(0.0);
        let target = cubic_window(t, s.w_max, c, beta);
        for _ in 0..acked {
            if target > s.cwnd {
                s.cwnd += (target - s.cwnd) / s.cwnd;
            } else {
                s.cwnd += 0.01 / s.cwnd;
            }
            // Reno-equivalent window so CUBIC is never slower than AIMD.
            s.w_est += 3.0 * beta / (2.0 - beta) / s.cwnd;
        }
        if s.w_est > s.cwnd {
            s.cwnd = s.w_est;
        }
        s.cwnd
    }
}
