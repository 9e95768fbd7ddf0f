use mpcc::baseline_cc::{cubic_window, lia_increase, reno_on_ack, BaselineSubflow};
use mpcc::control_plane::{encode_frame, ApplyOutcome, ClientSubflow, CwndDirective, Frame, FrameDecoder};
use mpcc::dtqn_agent::{td_targets, AgentConfig, ContextBatch, NetQ, QNetwork};
use mpcc::harness::jain_index;
use mpcc::mptcp_core::{allocation_share, select_subflow, AllocationStats, ConnectionState, Mode, SubflowState};
use mpcc::netsim::{EnqueueOutcome, PathModel, SimTime};
use mpcc::pomdp_env::{
    alpha, subflow_reward, threshold, ActionSpace, BoundaryOverride, RewardConfig, RewardInput, SubflowObs,
};
use numerics::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [Mode; 4] = [Mode::Normal, Mode::Recovery, Mode::Start, Mode::Probe];
const RTTS: [Option<f64>; 5] = [None, Some(0.002), Some(0.005), Some(0.005), Some(0.010)];

fn subflow_strategy() -> impl Strategy<Value = (u32, u32, u32, usize, usize)> {
    (1u32..=12, 0u32..4, 0u32..12, 0..MODES.len(), 0..RTTS.len())
}

fn build(specs: &[(u32, u32, u32, usize, usize)]) -> Vec<SubflowState> {
    specs
        .iter()
        .enumerate()
        .map(|(i, &(cwnd, q, f, mode, rtt))| {
            let mut s = SubflowState::new(i, cwnd as f64);
            s.queued = q;
            s.in_flight = f;
            s.mode = MODES[mode];
            s.srtt = RTTS[rtt];
            s
        })
        .collect()
}

fn scan(subs: &[SubflowState]) -> Option<usize> {
    let mut best = None;
    let mut best_rtt = f64::INFINITY;
    for (i, s) in subs.iter().enumerate() {
        let open = s.cwnd > (s.queued + s.in_flight) as f64 && s.mode != Mode::Recovery;
        let rtt = s.srtt.unwrap_or(0.0);
        if open && rtt < best_rtt {
            best = Some(i);
            best_rtt = rtt;
        }
    }
    best
}

fn obs(rtt: f64, base: f64, tput: f64, cwnd: f64, expflag: bool) -> SubflowObs {
    SubflowObs {
        tput_smoothed: tput,
        rtt_smoothed: rtt,
        cwnd,
        bw_estimate: 50e6,
        base_rtt: base,
        expflag,
        stale: false,
    }
}

fn reward_at(cfg: &RewardConfig, ratio: f64, d_min: f64, tput: f64) -> f64 {
    let before = obs(d_min, d_min, tput, 20.0, false);
    let after = obs(ratio * d_min, d_min, tput, 20.0, false);
    let inp = RewardInput {
        before: &before,
        after: &after,
        delta: 0,
        k: 2,
        base_cwnd: 20.0,
        cwnd_bounds: (2.0, 400.0),
        capacity_bps: 50e6,
    };
    subflow_reward(&inp, cfg).r_i
}

fn tiny_net(seed: u64) -> (QNetwork, numerics::ParamStore, AgentConfig) {
    let cfg = AgentConfig {
        subflows: 2,
        n_actions: 4,
        fc_dims: (6, 5),
        embedding_dim: 8,
        heads: 2,
        ff_dim: 8,
        context_len: 3,
        ..AgentConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (net, ps) = QNetwork::init(&cfg, &mut rng);
    (net, ps, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scheduler_matches_a_literal_scan(specs in prop::collection::vec(subflow_strategy(), 1..7)) {
        let subs = build(&specs);
        prop_assert_eq!(select_subflow(&ConnectionState::new(subs.clone())), scan(&subs));
    }

    #[test]
    fn allocation_shares_sum_to_one(assigned in prop::collection::vec(0u64..1000, 1..6)) {
        prop_assume!(assigned.iter().any(|&a| a > 0));
        let shares = allocation_share(&AllocationStats { assigned });
        prop_assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn action_codes_are_a_bijection(n in 1u32..4, m in 1usize..4, seed in any::<u64>()) {
        let space = ActionSpace::new(n, 2, m);
        let index = (seed % space.size() as u64) as usize;
        let deltas = space.decode(index);
        prop_assert!(deltas.iter().all(|d| d.unsigned_abs() <= n));
        prop_assert_eq!(space.encode(&deltas), index);
    }

    #[test]
    fn alpha_increases_with_rtt(
        d_min in 1e-3f64..50e-3,
        t in 1.0f64..5.0,
        kappa in 0.5f64..10.0,
        r1 in 1.0f64..4.0,
        step in 1e-3f64..0.5,
    ) {
        let r2 = r1 + step;
        let (a1, a2) = (alpha(r1 * d_min, d_min, t, kappa), alpha(r2 * d_min, d_min, t, kappa));
        prop_assert!(a2 > a1, "alpha {a1} then {a2}");
    }

    #[test]
    fn reward_falls_with_rtt_above_the_threshold(
        d_f in 1e-3f64..50e-3,
        excess in 0.0f64..2e-3,
        kappa in 0.5f64..10.0,
        w_d in 0.1f64..3.0,
        above in 0.0f64..3.0,
        step in 1e-3f64..1.0,
        tput in 0.0f64..50e6,
    ) {
        let cfg = RewardConfig { kappa, w_d, ..RewardConfig::for_floor(d_f) };
        let d_min = d_f + excess;
        let t = threshold(d_min, &cfg);
        let r1 = t + above;
        let (a, b) = (reward_at(&cfg, r1, d_min, tput), reward_at(&cfg, r1 + step, d_min, tput));
        prop_assert!(b <= a + 1e-12, "R {a} then {b}");
    }

    #[test]
    fn overrides_dominate(
        ratio in 1.0f64..10.0,
        tput in 0.0f64..60e6,
        delta in -2i32..=2,
        expflag in any::<bool>(),
        cwnd in 2.0f64..100.0,
        hi in 4.0f64..100.0,
    ) {
        let cfg = RewardConfig::for_floor(0.01);
        let before = obs(0.01, 0.01, tput, cwnd, expflag);
        let after = obs(ratio * 0.01, 0.01, tput, cwnd, false);
        let inp = RewardInput {
            before: &before,
            after: &after,
            delta,
            k: 2,
            base_cwnd: cwnd,
            cwnd_bounds: (2.0, hi),
            capacity_bps: 50e6,
        };
        let c = subflow_reward(&inp, &cfg);
        let proposed = cwnd + 2.0 * delta as f64;
        let outside = delta != 0 && !(2.0..=hi).contains(&proposed);
        if outside || expflag {
            prop_assert_ne!(c.boundary_override, BoundaryOverride::None);
            prop_assert!(c.r_i == 1.0 || c.r_i == -1.0);
        } else {
            prop_assert_eq!(c.boundary_override, BoundaryOverride::None);
        }
    }

    #[test]
    fn path_conserves_packets(ops in prop::collection::vec(any::<bool>(), 1..400), loss in 0.0f64..0.3, cap in 1usize..20) {
        let mut path: PathModel = PathModel::simple(0, 10e6, 0.001, cap, loss).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut now = SimTime::ZERO;
        for enqueue in ops {
            now = now + SimTime::from_secs(1e-4);
            if enqueue {
                let _: EnqueueOutcome = path.enqueue_packet(1500, now, &mut rng, ());
            } else {
                path.complete_departure(now);
            }
            let c = path.counters();
            prop_assert_eq!(c.offered, c.departed + c.dropped_loss + c.dropped_overflow + path.queue_len() as u64);
            prop_assert!(path.queue_len() <= cap);
        }
    }

    #[test]
    fn directives_apply_once_in_order(order in Just((0u64..20).collect::<Vec<_>>()).prop_shuffle(), dups in prop::collection::vec(0usize..20, 0..10)) {
        let mut wire = Vec::new();
        let mut sent: Vec<u64> = order.clone();
        sent.extend(dups.iter().map(|&i| order[i]));
        for &seq in &sent {
            let d = CwndDirective { conn_id: 0, decision_seq: seq, target_cwnd: vec![10 + seq as u32], subflow_id: Some(0) };
            wire.extend(encode_frame(&Frame::Directive(d)));
        }
        let mut dec = FrameDecoder::default();
        let frames = dec.decode_stream(&wire);
        prop_assert_eq!(frames.len(), sent.len());
        let mut client = ClientSubflow::default();
        let mut s = SubflowState::new(0, 100.0);
        let mut applied = Vec::new();
        for f in frames {
            let Frame::Directive(d) = f else { unreachable!() };
            if client.apply_directive(&mut s, d.decision_seq, d.target_cwnd[0]) != ApplyOutcome::Stale {
                applied.push(d.decision_seq);
            }
        }
        prop_assert!(applied.windows(2).all(|w| w[0] < w[1]), "{:?}", applied);
        prop_assert_eq!(applied.last().copied(), Some(19));
        // Decreases apply at once; increases wait for ACKs.
        prop_assert_eq!(s.cwnd, 10.0 + applied[0] as f64);
    }

    #[test]
    fn jain_index_is_a_share(rates in prop::collection::vec(0.0f64..1e9, 1..8)) {
        prop_assume!(rates.iter().any(|&r| r > 0.0));
        let j = jain_index(&rates).unwrap();
        prop_assert!(j > 0.0 && j <= 1.0);
        let equal = rates.iter().all(|&r| r == rates[0]);
        if !equal {
            prop_assert!(j < 1.0, "{rates:?} gives {j}");
        }
    }

    #[test]
    fn equal_rates_are_perfectly_fair(x in 1e-3f64..1e10, n in 1usize..50) {
        prop_assert_eq!(jain_index(&vec![x; n]).unwrap(), 1.0);
    }

    #[test]
    fn lia_alone_is_reno(w in 2.0f64..500.0, rtt in 1e-4f64..1.0) {
        prop_assert_eq!(lia_increase(&[w], &[rtt], 0), 1.0 / w);
    }

    #[test]
    fn cubic_is_continuous_and_plateaus_at_w_max(w_max in 2.0f64..1000.0, t in 0.0f64..10.0) {
        let (c, beta) = (0.4, 0.3);
        let k = (w_max * beta / c).cbrt();
        prop_assert!((cubic_window(k, w_max, c, beta) - w_max).abs() < 1e-9 * w_max);
        let h = 1e-7;
        let jump = (cubic_window(t + h, w_max, c, beta) - cubic_window(t, w_max, c, beta)).abs();
        prop_assert!(jump < 1e-3, "jump {jump} at {t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn later_positions_never_change_earlier_q(seed in 0u64..1000, pos in 0usize..3) {
        let (net, ps, cfg) = tiny_net(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let x = Tensor::uniform(vec![3, cfg.obs_dim()], 1.0, &mut rng);
        let mut y = x.clone();
        for v in &mut y.data_mut()[pos * cfg.obs_dim()..] {
            *v += 0.5;
        }
        let (qx, qy) = (net.q_values(&ps, &x, 1, None), net.q_values(&ps, &y, 1, None));
        for t in 0..pos {
            prop_assert_eq!(qx.row(t), qy.row(t));
        }
    }

    #[test]
    fn shared_parameters_give_the_max_backup(seed in 0u64..1000) {
        let (net, ps, cfg) = tiny_net(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let (b, l) = (2, cfg.context_len);
        let batch = ContextBatch {
            batch: b,
            len: l,
            obs: Tensor::uniform(vec![b * l, cfg.obs_dim()], 1.0, &mut rng),
            next_obs: Tensor::uniform(vec![b * l, cfg.obs_dim()], 1.0, &mut rng),
            actions: vec![1; b * l],
            rewards: (0..b * l).map(|i| i as f64 * 0.25 - 0.5).collect(),
            dones: (0..b * l).map(|i| i == 2).collect(),
            valid: (0..b * l).map(|i| i != 0).collect(),
        };
        let q = NetQ { net: &net, params: &ps };
        let targets = td_targets(&q, &q, &batch, cfg.gamma);
        let next = net.q_values(&ps, &batch.next_obs, b, Some(&batch.valid));
        for r in 0..b * l {
            let want = if !batch.valid[r] {
                0.0
            } else if batch.dones[r] {
                batch.rewards[r]
            } else {
                batch.rewards[r] + cfg.gamma * next.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            prop_assert_eq!(targets[r], want);
        }
    }
}

#[test]
fn reward_can_rise_with_rtt_below_the_threshold() {
    // With no throughput, R = −w_D·x·α(x) for x = ratio − T, which is
    // positive for x < 0 and zero at x = 0.
    let cfg = RewardConfig::for_floor(0.01);
    let t = threshold(0.01, &cfg);
    let low = reward_at(&cfg, 1.0, 0.01, 0.0);
    let mid = reward_at(&cfg, (1.0 + t) / 2.0, 0.01, 0.0);
    assert!(mid > low, "{low} then {mid}");
    assert_eq!(reward_at(&cfg, t, 0.01, 0.0), 0.0);
}

#[test]
fn reno_congestion_avoidance_matches_lia_over_a_window() {
    let mut s = BaselineSubflow::new(10.0);
    s.ssthresh = 5.0;
    let start = s.cwnd;
    let mut lia = start;
    for _ in 0..10 {
        lia += lia_increase(&[start], &[0.01], 0);
    }
    reno_on_ack(&mut s, 10);
    assert_eq!(s.cwnd, start + 1.0);
    assert!((lia - s.cwnd).abs() < 1e-12);
}
