use log::warn;
use thiserror::Error;

use super::metrics::{summarize, MetricLog, MetricRow, Summary};
use super::scenario::{Algorithm, Scenario};
use crate::control_plane::Engine;
use crate::dtqn_agent::{Agent, AgentError};
use crate::mptcp_core::AccountingFault;
use crate::netsim::{PathError, SimTime};
use crate::pomdp_env::{Env, EnvError, Network, StepInfo};
use crate::world::{AppSource, ConnectionSpec, ControllerSpec, IntervalStats, World};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Accounting(#[from] AccountingFault),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("agent expects {agent} subflows and {actions} actions, scenario has {subflows} and {expected}")]
    AgentMismatch {
        agent: usize,
        actions: usize,
        subflows: usize,
        expected: usize,
    },
    #[error("competitors are not supported together with flow_sizes")]
    FlowWithCompetitors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub log: MetricLog,
    pub summary: Summary,
}

/// Rows for one interval of one connection, ending at `time`.
pub(crate) fn interval_rows(
    time: f64,
    elapsed: f64,
    conn: u32,
    stats: &[IntervalStats],
    cwnd: &[f64],
) -> Vec<MetricRow> {
    stats
        .iter()
        .zip(cwnd)
        .enumerate()
        .map(|(i, (s, &w))| MetricRow {
            time_s: time,
            conn_id: conn,
            subflow_id: i as u32,
            goodput_bps: if elapsed > 0.0 {
                s.goodput_bytes as f64 * 8.0 / elapsed
            } else {
                0.0
            },
            rtt_ms: s.mean_rtt().map(|r| r * 1e3),
            cwnd: w,
            loss_events: s.loss_events,
            reward: None,
            loss_value: None,
            epsilon: None,
        })
        .collect()
}

fn anchors(time: f64, conn: u32, cwnd: &[f64]) -> Vec<MetricRow> {
    cwnd.iter()
        .enumerate()
        .map(|(i, &w)| MetricRow::anchor(time, conn, i as u32, w))
        .collect()
}

fn cwnds(world: &World, conn: usize) -> Vec<f64> {
    let c = world.connection(conn);
    (0..c.subflows()).map(|i| c.subflow(i).cwnd).collect()
}

/// Tracks which connections have started or finished and emits their rows
/// at each sampling instant.
struct Sampler {
    /// Log id of each world connection.
    ids: Vec<u32>,
    last: Vec<Option<f64>>,
    closed: Vec<bool>,
}

impl Sampler {
    fn new(ids: Vec<u32>) -> Self {
        let n = ids.len();
        Sampler {
            ids,
            last: vec![None; n],
            closed: vec![false; n],
        }
    }

    /// Rows for connections other than those in `skip`, sampled at `now`.
    fn sample(&mut self, now: f64, world: &World, skip: &[usize], rows: &mut Vec<MetricRow>) {
        for c in 0..self.ids.len() {
            if self.closed[c] || skip.contains(&c) {
                continue;
            }
            let conn = world.connection(c);
            let start = conn.start_time().as_secs();
            if start > now {
                continue;
            }
            let last = match self.last[c] {
                Some(t) => t,
                None => {
                    rows.extend(anchors(start, self.ids[c], &cwnds(world, c)));
                    start
                }
            };
            let stats = world.interval(c);
            let t = match conn.finish_time() {
                Some(f) => {
                    self.closed[c] = true;
                    f.as_secs().min(now)
                }
                None => now,
            };
            if t > last {
                rows.extend(interval_rows(t, t - last, self.ids[c], &stats, &cwnds(world, c)));
                self.last[c] = Some(t);
            }
        }
    }

    fn note(&mut self, c: usize, t: f64) {
        self.last[c] = Some(t);
    }
}

fn check_agent(agent: &Agent, sc: &Scenario) -> Result<(), RunError> {
    let want = sc.agent_config();
    let have = agent.config();
    if have.subflows != want.subflows || have.n_actions != want.n_actions {
        return Err(RunError::AgentMismatch {
            agent: have.subflows,
            actions: have.n_actions,
            subflows: want.subflows,
            expected: want.n_actions,
        });
    }
    Ok(())
}

/// Runs one seed of a scenario. Learning algorithms act greedily with
/// `agent`; without one, a freshly initialised agent is used.
pub fn run_scenario(sc: &Scenario, seed: u64, agent: Option<&Agent>) -> Result<RunOutput, RunError> {
    if !sc.flow_sizes.is_empty() && !sc.competitors.is_empty() {
        return Err(RunError::FlowWithCompetitors);
    }
    let fresh;
    let agent = match (sc.algorithm.is_agent(), agent) {
        (false, _) => None,
        (true, Some(a)) => Some(a),
        (true, None) => {
            warn!("scenario {}: no trained agent given, using an untrained one", sc.name);
            fresh = Agent::new(sc.agent_config(), seed)?;
            Some(&fresh)
        }
    };
    if let Some(a) = agent {
        check_agent(a, sc)?;
    }
    let mut rows = Vec::new();
    if sc.flow_sizes.is_empty() {
        run_one(sc, seed, agent, AppSource::Bulk, 0, &mut rows)?;
    } else {
        for (k, &bytes) in sc.flow_sizes.iter().enumerate() {
            run_one(sc, seed, agent, AppSource::Flow { bytes }, k as u32, &mut rows)?;
        }
    }
    let log = MetricLog::from_rows(rows);
    let summary = summarize(&log, sc);
    Ok(RunOutput { log, summary })
}

fn run_one(
    sc: &Scenario,
    seed: u64,
    agent: Option<&Agent>,
    app: AppSource,
    conn_id: u32,
    rows: &mut Vec<MetricRow>,
) -> Result<(), RunError> {
    let mut net = sc.network();
    net.agent_app = app;
    let n_conns = 1 + net.cross_traffic.len();
    let ids: Vec<u32> = std::iter::once(conn_id).chain((1..n_conns).map(|c| c as u32)).collect();
    match agent {
        Some(a) => run_agent(sc, &net, seed, a, ids, rows),
        None => run_fixed(sc, &net, seed, ids, rows),
    }
}

fn run_fixed(
    sc: &Scenario,
    net: &Network,
    seed: u64,
    ids: Vec<u32>,
    rows: &mut Vec<MetricRow>,
) -> Result<(), RunError> {
    let mut world = net.build(seed)?;
    world.set_reporting(false);
    let controller = match sc.algorithm {
        Algorithm::FixedCwnd => ControllerSpec::Fixed(sc.fixed_cwnd.clone().unwrap_or_default()),
        alg => ControllerSpec::Baseline(alg.baseline().expect("non-learning algorithm")),
    };
    world.add_connection(ConnectionSpec {
        paths: net.subflow_paths.clone(),
        controller,
        app: net.agent_app,
        start: 0.0,
    });
    for c in &net.cross_traffic {
        world.add_connection(c.clone());
    }
    let mut sampler = Sampler::new(ids);
    let mut k = 0u64;
    loop {
        k += 1;
        let t = (k as f64 * sc.decision_interval).min(sc.duration);
        world.run_until(SimTime::from_secs(t))?;
        sampler.sample(world.now().as_secs(), &world, &[], rows);
        for c in 0..world.connections().len() {
            world.take_interval(c);
        }
        if t >= sc.duration || world.connection(0).finish_time().is_some() {
            return Ok(());
        }
    }
}

fn run_agent(
    sc: &Scenario,
    net: &Network,
    seed: u64,
    agent: &Agent,
    ids: Vec<u32>,
    rows: &mut Vec<MetricRow>,
) -> Result<(), RunError> {
    let reward = sc.reward_config();
    let mut cfg = sc.env_config();
    cfg.horizon = usize::MAX;
    cfg.warmup_limit = sc.duration;
    let mut env = Env::new(net.clone(), cfg, reward)?;
    let mut obs = env.reset(seed)?;
    let mut engine = Engine::new(agent, env.action_space(), reward, 0, seed);
    let m = net.subflow_paths.len();
    let initial = vec![net.world.agent_initial_cwnd; m];
    rows.extend(anchors(0.0, ids[0], &initial));
    let mut sampler = Sampler::new(ids.clone());
    let emit_agent = |info: &StepInfo, env: &Env, last: f64, rows: &mut Vec<MetricRow>| {
        let t = env
            .world()
            .connection(0)
            .finish_time()
            .map_or(info.time, |f| f.as_secs().min(info.time));
        rows.extend(interval_rows(t, t - last, ids[0], &info.interval, &info.cwnd));
        t
    };
    let mut last = emit_agent(&env.warmup().clone(), &env, 0.0, rows);
    sampler.note(0, last);
    sample_cross(&mut sampler, &mut env, rows);
    while !env.finished() && env.world().now().as_secs() < sc.duration {
        let d = engine.serve(&obs);
        let r = env.step(d.action)?;
        debug_assert_eq!(r.info.targets, d.directive.target_cwnd);
        let n = rows.len();
        last = emit_agent(&r.info, &env, last, rows);
        for (row, c) in rows[n..].iter_mut().zip(&r.components) {
            row.reward = Some(c.r_i);
        }
        sampler.note(0, last);
        sample_cross(&mut sampler, &mut env, rows);
        obs = r.obs;
    }
    Ok(())
}

fn sample_cross(sampler: &mut Sampler, env: &mut Env, rows: &mut Vec<MetricRow>) {
    sampler.sample(env.world().now().as_secs(), env.world(), &[0], rows);
    for c in 1..env.world().connections().len() {
        env.take_interval(c);
    }
}
