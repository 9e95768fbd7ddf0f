use crate::control_plane::MetricReport;
use crate::netsim::MSS_BYTES;

/// Number of scalar fields per subflow.
pub const FIELDS_PER_SUBFLOW: usize = 6;

/// Window-aggregated view of one subflow. Built only from that subflow's own
/// reports.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SubflowObs {
    /// Bits per second.
    pub tput_smoothed: f64,
    /// Seconds.
    pub rtt_smoothed: f64,
    pub cwnd: f64,
    pub bw_estimate: f64,
    pub base_rtt: f64,
    pub expflag: bool,
    /// No report arrived in the window; values were carried over.
    pub stale: bool,
}

impl SubflowObs {
    /// Estimated bandwidth-delay product in packets.
    pub fn bdp_packets(&self) -> f64 {
        self.bw_estimate * self.base_rtt / (MSS_BYTES as f64 * 8.0)
    }

    /// Scale-free encoding fed to the network.
    pub fn features(&self) -> [f64; FIELDS_PER_SUBFLOW] {
        let util = if self.bw_estimate > 0.0 {
            self.tput_smoothed / self.bw_estimate
        } else {
            0.0
        };
        let inflation = if self.base_rtt > 0.0 {
            self.rtt_smoothed / self.base_rtt - 1.0
        } else {
            0.0
        };
        let clip = |x: f64| x.clamp(-10.0, 10.0);
        [
            clip(util),
            clip(inflation),
            clip(self.cwnd / self.bdp_packets().max(1.0)),
            clip(self.bw_estimate / 1e9),
            clip(self.base_rtt / 0.1),
            if self.expflag { 1.0 } else { 0.0 },
        ]
    }
}

/// One decision step's observation across all subflows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observation {
    pub subflows: Vec<SubflowObs>,
}

impl Observation {
    pub fn dim(m: usize) -> usize {
        m * FIELDS_PER_SUBFLOW
    }

    pub fn features(&self) -> Vec<f64> {
        self.subflows.iter().flat_map(|s| s.features()).collect()
    }
}

/// Aggregates one window of reports for a single subflow: throughput from
/// delivered bytes, RTT as the sample mean, the rest from the latest report.
/// An empty window carries `prev` forward and marks it stale. With
/// `ewma > 0` the new throughput and RTT are blended with `prev`.
pub fn aggregate_subflow(reports: &[MetricReport], window: f64, prev: Option<&SubflowObs>, ewma: f64) -> SubflowObs {
    assert!(window > 0.0, "aggregation window must be positive");
    let Some(last) = reports.last() else {
        let mut o = prev.copied().unwrap_or_default();
        o.stale = true;
        return o;
    };
    let bytes: u64 = reports.iter().map(|r| r.delivered_bytes).sum();
    let mut tput = bytes as f64 * 8.0 / window;
    let mut rtt = reports.iter().map(|r| r.rtt_us as f64).sum::<f64>() / reports.len() as f64 * 1e-6;
    if let Some(p) = prev.filter(|p| ewma > 0.0 && !p.stale) {
        tput = (1.0 - ewma) * tput + ewma * p.tput_smoothed;
        rtt = (1.0 - ewma) * rtt + ewma * p.rtt_smoothed;
    }
    let base_rtt = (last.min_rtt_us as f64 * 1e-6).min(rtt);
    SubflowObs {
        tput_smoothed: tput,
        rtt_smoothed: rtt,
        cwnd: last.cwnd as f64,
        bw_estimate: last.bw_estimate_bps as f64,
        base_rtt,
        expflag: last.expflag,
        stale: false,
    }
}

/// Per-subflow aggregation over a window of `window` seconds.
pub fn aggregate_window(
    reports: &[Vec<MetricReport>],
    window: f64,
    prev: Option<&Observation>,
    ewma: f64,
) -> Observation {
    Observation {
        subflows: reports
            .iter()
            .enumerate()
            .map(|(i, r)| aggregate_subflow(r, window, prev.and_then(|p| p.subflows.get(i)), ewma))
            .collect(),
    }
}

/// True iff the window did not grow over the last `period` steps. `history`
/// runs oldest to newest and needs `period + 1` entries.
pub fn update_expflag(history: &[f64], period: usize) -> bool {
    if period == 0 || history.len() < period + 1 {
        return false;
    }
    history[history.len() - period - 1..].windows(2).all(|w| w[1] <= w[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(delivered: u64, rtt_us: u64) -> MetricReport {
        MetricReport {
            conn_id: 0,
            subflow_id: 0,
            seq: 0,
            timestamp_us: 0,
            delivered_bytes: delivered,
            rtt_us,
            cwnd: 20,
            min_rtt_us: 3_000,
            bw_estimate_bps: 10_000_000,
            mode: "normal".into(),
            expflag: true,
        }
    }

    #[test]
    fn throughput_from_delivered_bytes() {
        let o = aggregate_subflow(&[report(1500, 4_000), report(1500, 6_000)], 1e-3, None, 0.0);
        // 3000·8 / 1 ms
        assert!((o.tput_smoothed - 24e6).abs() < 1e-6);
        assert!((o.rtt_smoothed - 0.005).abs() < 1e-15);
        assert_eq!((o.cwnd, o.expflag, o.stale), (20.0, true, false));
    }

    #[test]
    fn empty_window_carries_previous() {
        let prev = aggregate_subflow(&[report(1500, 4_000)], 1e-3, None, 0.0);
        let o = aggregate_subflow(&[], 1e-3, Some(&prev), 0.0);
        assert!(o.stale);
        assert_eq!(o.tput_smoothed, prev.tput_smoothed);
    }

    #[test]
    fn expflag_examples() {
        let p = 6;
        assert!(update_expflag(&[5.0; 7], p));
        assert!(!update_expflag(&[5.0; 6], p));
        assert!(!update_expflag(&[5.0, 5.0, 5.0, 5.0, 5.0, 6.0, 6.0], p));
        assert!(update_expflag(&[9.0, 8.0, 8.0, 7.0, 7.0, 7.0, 7.0], p));
        assert!(update_expflag(&[1.0, 9.0, 8.0, 8.0, 7.0, 7.0, 7.0, 7.0], p));
    }

    #[test]
    fn layout_is_fixed_width() {
        let o = Observation {
            subflows: vec![SubflowObs::default(); 3],
        };
        assert_eq!(o.features().len(), Observation::dim(3));
    }
}
