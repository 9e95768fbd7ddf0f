use super::scheduler::{availability, ConnectionState};

/// Packets assigned to each subflow over a window.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AllocationStats {
    pub assigned: Vec<u64>,
}

impl AllocationStats {
    pub fn new(subflows: usize) -> Self {
        AllocationStats {
            assigned: vec![0; subflows],
        }
    }

    pub fn record(&mut self, subflow: usize) {
        self.assigned[subflow] += 1;
    }

    pub fn total(&self) -> u64 {
        self.assigned.iter().sum()
    }

    pub fn reset(&mut self) {
        self.assigned.iter_mut().for_each(|a| *a = 0);
    }
}

/// Empirical shares `assigned_i / Σ assigned`; all zero for an empty window.
pub fn allocation_share(stats: &AllocationStats) -> Vec<f64> {
    let total = stats.total();
    if total == 0 {
        return vec![0.0; stats.assigned.len()];
    }
    stats.assigned.iter().map(|&a| a as f64 / total as f64).collect()
}

/// Per-subflow load `λ_i = Λ·p_i`.
pub fn split_load(total_rate: f64, shares: &[f64]) -> Vec<f64> {
    shares.iter().map(|p| total_rate * p).collect()
}

/// Indicator form: `1[srtt_i is the minimum] / Σφ` for available subflows.
/// Only sums to one when the minimum is unique among available subflows.
pub fn indicator_allocation(conn: &ConnectionState) -> Vec<f64> {
    let avail: Vec<bool> = conn.subflows.iter().map(availability).collect();
    let n_avail = avail.iter().filter(|&&a| a).count();
    if n_avail == 0 {
        return vec![0.0; conn.subflows.len()];
    }
    let min = conn
        .subflows
        .iter()
        .zip(&avail)
        .filter(|(_, &a)| a)
        .map(|(s, _)| s.srtt_or_zero())
        .fold(f64::INFINITY, f64::min);
    conn.subflows
        .iter()
        .zip(&avail)
        .map(|(s, &a)| {
            if a && s.srtt_or_zero() == min {
                1.0 / n_avail as f64
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mptcp_core::SubflowState;

    #[test]
    fn single_winner() {
        let s = AllocationStats { assigned: vec![100, 0] };
        assert_eq!(allocation_share(&s), vec![1.0, 0.0]);
    }

    #[test]
    fn even_split() {
        let s = AllocationStats { assigned: vec![50, 50] };
        assert_eq!(allocation_share(&s), vec![0.5, 0.5]);
    }

    #[test]
    fn load_split() {
        let l = split_load(100e6, &[0.7, 0.3]);
        assert!((l[0] - 70e6).abs() < 1e-6 && (l[1] - 30e6).abs() < 1e-6);
    }

    #[test]
    fn empty_window_is_all_zero() {
        assert_eq!(allocation_share(&AllocationStats::new(3)), vec![0.0; 3]);
    }

    #[test]
    fn indicator_with_unique_minimum() {
        let mut a = SubflowState::new(0, 10.0);
        a.srtt = Some(0.005);
        let mut b = SubflowState::new(1, 10.0);
        b.srtt = Some(0.003);
        let c = ConnectionState::new(vec![a, b]);
        assert_eq!(indicator_allocation(&c), vec![0.0, 0.5]);
    }
}
