use serde::{Deserialize, Serialize};

/// Joint discrete action space: each of `m` subflows picks
/// `δ ∈ {−n, …, n}`, applied as a window change of `k·δ` packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub n: u32,
    pub k: u32,
    pub m: usize,
}

impl ActionSpace {
    pub fn new(n: u32, k: u32, m: usize) -> Self {
        assert!(m >= 1, "at least one subflow");
        ActionSpace { n, k, m }
    }

    pub fn radix(&self) -> usize {
        2 * self.n as usize + 1
    }

    pub fn size(&self) -> usize {
        self.radix().pow(self.m as u32)
    }

    /// Mixed-radix decode with subflow 0 in the least-significant digit.
    pub fn decode(&self, index: usize) -> Vec<i32> {
        assert!(index < self.size(), "action index {index} out of range");
        let r = self.radix();
        let mut rest = index;
        (0..self.m)
            .map(|_| {
                let digit = rest % r;
                rest /= r;
                digit as i32 - self.n as i32
            })
            .collect()
    }

    pub fn encode(&self, deltas: &[i32]) -> usize {
        assert_eq!(deltas.len(), self.m);
        let r = self.radix();
        deltas.iter().rev().fold(0, |acc, &d| {
            assert!(d.unsigned_abs() <= self.n, "delta {d} out of range");
            acc * r + (d + self.n as i32) as usize
        })
    }

    /// Window changes in packets.
    pub fn cwnd_deltas(&self, index: usize) -> Vec<i64> {
        self.decode(index)
            .into_iter()
            .map(|d| d as i64 * self.k as i64)
            .collect()
    }

    /// The all-zero action.
    pub fn hold(&self) -> usize {
        self.encode(&vec![0; self.m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_examples() {
        let a = ActionSpace::new(2, 2, 2);
        assert_eq!(a.size(), 25);
        assert_eq!(a.decode(0), vec![-2, -2]);
        assert_eq!(a.decode(12), vec![0, 0]);
        assert_eq!(a.decode(24), vec![2, 2]);
        assert_eq!(a.decode(1), vec![-1, -2]);
        assert_eq!(a.hold(), 12);
        assert_eq!(a.cwnd_deltas(24), vec![4, 4]);
    }

    #[test]
    #[should_panic]
    fn out_of_range_index() {
        ActionSpace::new(1, 1, 2).decode(9);
    }
}
