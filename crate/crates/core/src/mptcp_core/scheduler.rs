use super::subflow::{Mode, SubflowState};

/// A multipath connection as the scheduler sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionState {
    pub subflows: Vec<SubflowState>,
    /// Offered load Λ in bits per second (0 for bulk transfer).
    pub total_arrival_rate: f64,
    pub app_backlog: u64,
}

impl ConnectionState {
    pub fn new(subflows: Vec<SubflowState>) -> Self {
        assert!(!subflows.is_empty(), "a connection needs at least one subflow");
        ConnectionState {
            subflows,
            total_arrival_rate: 0.0,
            app_backlog: 0,
        }
    }
}

/// Window has room and the subflow is not repairing a loss.
pub fn availability(s: &SubflowState) -> bool {
    s.window() > s.queued + s.in_flight && s.mode != Mode::Recovery
}

/// Index of the available subflow with the smallest smoothed RTT; ties go to
/// the lowest index. Unmeasured subflows count as zero RTT.
pub fn select_subflow(conn: &ConnectionState) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in conn.subflows.iter().enumerate() {
        if !availability(s) {
            continue;
        }
        let rtt = s.srtt_or_zero();
        if best.map_or(true, |(_, b)| rtt < b) {
            best = Some((i, rtt));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(id: usize, cwnd: f64, q: u32, f: u32, mode: Mode, srtt: Option<f64>) -> SubflowState {
        let mut s = SubflowState::new(id, cwnd);
        s.queued = q;
        s.in_flight = f;
        s.mode = mode;
        s.srtt = srtt;
        s
    }

    #[test]
    fn availability_examples() {
        assert!(availability(&sub(0, 10.0, 3, 5, Mode::Normal, None)));
        assert!(!availability(&sub(0, 8.0, 3, 5, Mode::Normal, None)));
        assert!(!availability(&sub(0, 10.0, 0, 0, Mode::Recovery, None)));
    }

    #[test]
    fn picks_min_rtt() {
        let c = ConnectionState::new(vec![
            sub(1, 10.0, 0, 0, Mode::Normal, Some(0.005)),
            sub(2, 10.0, 0, 0, Mode::Normal, Some(0.003)),
        ]);
        assert_eq!(select_subflow(&c), Some(1));
    }

    #[test]
    fn skips_recovering_subflow() {
        let c = ConnectionState::new(vec![
            sub(1, 10.0, 0, 0, Mode::Normal, Some(0.005)),
            sub(2, 10.0, 0, 0, Mode::Recovery, Some(0.003)),
        ]);
        assert_eq!(select_subflow(&c), Some(0));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = ConnectionState::new(vec![
            sub(1, 10.0, 0, 0, Mode::Normal, Some(0.004)),
            sub(2, 10.0, 0, 0, Mode::Normal, Some(0.004)),
        ]);
        assert_eq!(select_subflow(&c), Some(0));
    }

    #[test]
    fn none_available() {
        let c = ConnectionState::new(vec![sub(1, 2.0, 1, 1, Mode::Normal, None)]);
        assert_eq!(select_subflow(&c), None);
    }
}
