use serde::{Deserialize, Serialize};

use super::observation::SubflowObs;

/// Steps without window growth before the exploration flag is raised.
pub const EXPFLAG_PERIOD: usize = 6;

/// How throughput is scaled into the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TputNorm {
    /// Divide by the subflow's own bandwidth estimate.
    BwEstimate,
    /// Divide by the path's configured capacity (simulation-only knowledge).
    PathCapacity,
}

/// Reward shaping parameters. Times are seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub beta: f64,
    pub g: f64,
    pub d_f: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub w_d: f64,
    pub tput_norm: TputNorm,
    pub expflag_period: usize,
    pub cwnd_min: f64,
    /// Upper window bound as a multiple of the estimated BDP.
    pub cwnd_max_bdp: f64,
}

impl RewardConfig {
    /// Defaults for an RTT floor of `d_f` seconds.
    pub fn for_floor(d_f: f64) -> Self {
        RewardConfig {
            beta: 2.0 * d_f,
            g: 1.0,
            d_f,
            sigma: 1e-3,
            kappa: 4.0,
            w_d: 1.0,
            tput_norm: TputNorm::BwEstimate,
            expflag_period: EXPFLAG_PERIOD,
            cwnd_min: 2.0,
            cwnd_max_bdp: 4.0,
        }
    }

    /// Window bounds for a subflow given its estimated BDP in packets.
    pub fn cwnd_bounds(&self, bdp_packets: f64) -> (f64, f64) {
        let max = (self.cwnd_max_bdp * bdp_packets).max(4.0 * self.cwnd_min).round();
        (self.cwnd_min, max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryOverride {
    None,
    PlusOne,
    MinusOne,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardComponents {
    pub t: f64,
    pub alpha: f64,
    pub p_d: f64,
    pub r_rho: f64,
    pub r_i: f64,
    pub boundary_override: BoundaryOverride,
}

/// Permissible RTT ratio `β(1 + g(D_min − D_f)/σ)/D_min`, floored at 1.
pub fn threshold(d_min: f64, cfg: &RewardConfig) -> f64 {
    assert!(d_min > 0.0, "D_min must be positive");
    let t = cfg.beta * (1.0 + cfg.g * (d_min - cfg.d_f) / cfg.sigma) / d_min;
    t.max(1.0)
}

/// `1 / (1 + exp(−κ(D̄/D_min − T)))`.
pub fn alpha(d_bar: f64, d_min: f64, t: f64, kappa: f64) -> f64 {
    assert!(d_min > 0.0, "D_min must be positive");
    1.0 / (1.0 + (-kappa * (d_bar / d_min - t)).exp())
}

/// `−w_D(D̄/D_min − T)`.
pub fn rtt_penalty(d_bar: f64, d_min: f64, t: f64, w_d: f64) -> f64 {
    -w_d * (d_bar / d_min - t)
}

/// `w_ρ·ρ̄`.
pub fn tput_reward(rho_bar: f64, w_rho: f64) -> f64 {
    w_rho * rho_bar
}

/// Inputs for one subflow's reward. `before` supplies the window and flag
/// the action was chosen on, `after` the RTT and throughput it produced.
#[derive(Debug, Clone, Copy)]
pub struct RewardInput<'a> {
    pub before: &'a SubflowObs,
    pub after: &'a SubflowObs,
    pub delta: i32,
    pub k: u32,
    /// Commanded window the step's delta was added to.
    pub base_cwnd: f64,
    pub cwnd_bounds: (f64, f64),
    /// Used with [`TputNorm::PathCapacity`].
    pub capacity_bps: f64,
}

pub fn subflow_reward(inp: &RewardInput<'_>, cfg: &RewardConfig) -> RewardComponents {
    let (lo, hi) = inp.cwnd_bounds;
    let proposed = inp.base_cwnd + inp.delta as f64 * inp.k as f64;
    let out_of_bounds = inp.delta != 0 && (proposed > hi || proposed < lo);
    let d_min = inp.after.base_rtt.max(1e-9);
    let d_bar = inp.after.rtt_smoothed.max(d_min);
    let t = threshold(d_min, cfg);
    let a = alpha(d_bar, d_min, t, cfg.kappa);
    let p_d = rtt_penalty(d_bar, d_min, t, cfg.w_d);
    let norm = match cfg.tput_norm {
        TputNorm::BwEstimate => inp.after.bw_estimate,
        TputNorm::PathCapacity => inp.capacity_bps,
    };
    let w_rho = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    let r_rho = tput_reward(inp.after.tput_smoothed, w_rho);
    let (boundary_override, r_i) = if out_of_bounds {
        (BoundaryOverride::MinusOne, -1.0)
    } else if inp.before.expflag && inp.delta <= 0 {
        (BoundaryOverride::MinusOne, -1.0)
    } else if inp.before.expflag && !inp.after.stale {
        (BoundaryOverride::PlusOne, 1.0)
    } else {
        (BoundaryOverride::None, a * p_d + (1.0 - a) * r_rho)
    };
    RewardComponents {
        t,
        alpha: a,
        p_d,
        r_rho,
        r_i,
        boundary_override,
    }
}

pub fn total_reward(components: &[RewardComponents]) -> f64 {
    components.iter().map(|c| c.r_i).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RewardConfig {
        RewardConfig {
            beta: 6e-3,
            g: 1.0,
            d_f: 3e-3,
            sigma: 1e-3,
            ..RewardConfig::for_floor(3e-3)
        }
    }

    #[test]
    fn threshold_examples() {
        let c = cfg();
        // At the floor the growth term vanishes: β / D_min.
        assert!((threshold(3e-3, &c) - 2.0).abs() < 1e-12);
        // (6·2)/4
        assert!((threshold(4e-3, &c) - 3.0).abs() < 1e-12);
        let tight = RewardConfig { beta: 1e-3, ..c };
        assert_eq!(threshold(3e-3, &tight), 1.0);
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha(6e-3, 3e-3, 2.0, 4.0), 0.5);
        assert!(alpha(9e-3, 3e-3, 2.0, 1e6) > 1.0 - 1e-12);
        let a = alpha(7.5e-3, 3e-3, 2.0, 2.0);
        assert!((a - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        assert!((a - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(rtt_penalty(6e-3, 3e-3, 2.0, 1.0), 0.0);
        assert!((rtt_penalty(7.5e-3, 3e-3, 2.0, 1.0) + 0.5).abs() < 1e-12);
        assert!(rtt_penalty(4e-3, 3e-3, 2.0, 1.0) > 0.0);
    }

    #[test]
    fn tput_examples() {
        assert_eq!(tput_reward(0.0, 1.0), 0.0);
        assert_eq!(tput_reward(5e6, 1.0 / 5e6), 1.0);
        assert_eq!(tput_reward(2.0, 3.0) * 2.0, tput_reward(4.0, 3.0));
    }

    fn obs(cwnd: f64, expflag: bool) -> SubflowObs {
        SubflowObs {
            tput_smoothed: 8e6,
            rtt_smoothed: 6e-3,
            cwnd,
            bw_estimate: 10e6,
            base_rtt: 3e-3,
            expflag,
            stale: false,
        }
    }

    fn input<'a>(b: &'a SubflowObs, a: &'a SubflowObs, delta: i32) -> RewardInput<'a> {
        RewardInput {
            before: b,
            after: a,
            delta,
            k: 2,
            base_cwnd: b.cwnd,
            cwnd_bounds: (2.0, 40.0),
            capacity_bps: 10e6,
        }
    }

    #[test]
    fn exploration_bonus_and_bounds() {
        let c = cfg();
        let (b, a) = (obs(10.0, true), obs(10.0, false));
        assert_eq!(subflow_reward(&input(&b, &a, 1), &c).r_i, 1.0);
        assert_eq!(subflow_reward(&input(&b, &a, 0), &c).r_i, -1.0);
        let at_max = obs(40.0, false);
        let r = subflow_reward(&input(&at_max, &a, 1), &c);
        assert_eq!((r.r_i, r.boundary_override), (-1.0, BoundaryOverride::MinusOne));
        let low = obs(3.0, false);
        assert_eq!(subflow_reward(&input(&low, &a, -1), &c).r_i, -1.0);
    }

    #[test]
    fn stale_window_gets_no_bonus() {
        let c = cfg();
        let b = obs(10.0, true);
        let a = SubflowObs {
            stale: true,
            ..obs(10.0, false)
        };
        assert_eq!(
            subflow_reward(&input(&b, &a, 1), &c).boundary_override,
            BoundaryOverride::None
        );
    }

    #[test]
    fn weighted_combination() {
        // α = 0.5, P_D = −0.4, R_ρ = 0.8 gives 0.5·(−0.4) + 0.5·0.8.
        let r: f64 = 0.5 * -0.4 + 0.5 * 0.8;
        assert!((r - 0.2).abs() < 1e-15);
        let c = cfg();
        let b = obs(10.0, false);
        let a = obs(10.0, false);
        let comp = subflow_reward(&input(&b, &a, 0), &c);
        assert_eq!(comp.alpha, 0.5);
        assert_eq!(comp.p_d, 0.0);
        assert!((comp.r_i - 0.5 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn totals() {
        let mk = |r| RewardComponents {
            t: 1.0,
            alpha: 0.5,
            p_d: 0.0,
            r_rho: 0.0,
            r_i: r,
            boundary_override: BoundaryOverride::None,
        };
        assert!((total_reward(&[mk(0.2), mk(0.3)]) - 0.5).abs() < 1e-15);
        assert!((total_reward(&[mk(-1.0), mk(0.4)]) + 0.6).abs() < 1e-15);
        assert_eq!(total_reward(&[mk(0.7)]), 0.7);
    }
}
