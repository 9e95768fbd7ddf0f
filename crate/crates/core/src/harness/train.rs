use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{MetricLog, MetricRow};
use super::run::{interval_rows, RunError};
use super::scenario::Scenario;
use crate::dtqn_agent::{epsilon, Agent, ReplayBuffer, Transition};
use crate::pomdp_env::Env;

pub struct TrainOutcome {
    pub agent: Agent,
    /// Agent subflows only; episodes are laid end to end in time.
    pub log: MetricLog,
    pub episodes: usize,
}

/// Trains a fresh agent for `steps` environment steps on `sc`'s network.
/// Episode `e` uses seed `seed + e`.
pub fn train(sc: &Scenario, steps: u64, seed: u64) -> Result<TrainOutcome, RunError> {
    let agent = Agent::new(sc.agent_config(), seed)?;
    train_from(sc, agent, steps, seed)
}

/// Continues training `agent`.
pub fn train_from(sc: &Scenario, mut agent: Agent, steps: u64, seed: u64) -> Result<TrainOutcome, RunError> {
    let cfg = agent.config().clone();
    let reward = sc.reward_config();
    let mut env = Env::new(sc.network(), sc.env_config(), reward)?;
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity.min(steps.max(1) as usize), cfg.obs_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let m = cfg.subflows;
    let mut rows = Vec::new();
    let mut offset = 0.0;
    let mut last_loss = None;
    let mut step = 0u64;
    let mut episodes = 0;
    while step < steps {
        let mut obs = env.reset(seed + episodes as u64)?;
        episodes += 1;
        let w = env.warmup();
        if rows.is_empty() {
            for i in 0..m {
                rows.push(MetricRow::anchor(
                    0.0,
                    0,
                    i as u32,
                    env.network().world.agent_initial_cwnd,
                ));
            }
        }
        rows.extend(interval_rows(offset + w.time, w.elapsed, 0, &w.interval, &w.cwnd));
        let mut ctx = agent.new_context();
        ctx.push(obs.features());
        let mut prev = w.time;
        let mut ep_reward = 0.0;
        loop {
            let eps = epsilon(&cfg, step, steps);
            let action = agent.act(&ctx, eps, &mut rng);
            let r = env.step(action)?;
            step += 1;
            let next = r.obs.features();
            buffer.push(Transition {
                obs: obs.features(),
                action,
                reward: r.reward,
                done: r.done,
                next_obs: next.clone(),
            });
            ctx.push(next);
            let ready = buffer.len() >= cfg.batch_size * cfg.context_len;
            if ready && step > cfg.learning_starts && step % cfg.train_every.max(1) == 0 {
                if let Some(tm) = agent.train_step(&buffer, &mut rng) {
                    last_loss = Some(tm.loss);
                }
            }
            let n = rows.len();
            rows.extend(interval_rows(
                offset + r.info.time,
                r.info.time - prev,
                0,
                &r.info.interval,
                &r.info.cwnd,
            ));
            for (row, c) in rows[n..].iter_mut().zip(&r.components) {
                row.reward = Some(c.r_i);
                row.loss_value = last_loss;
                row.epsilon = Some(eps);
            }
            prev = r.info.time;
            ep_reward += r.reward;
            obs = r.obs;
            if r.done || step >= steps {
                break;
            }
        }
        if !buffer.is_empty() && step >= steps {
            buffer.end_episode();
        }
        info!(
            "episode {episodes}: steps {step}/{steps}, return {ep_reward:.2}, lr {:.2e}, loss {:?}",
            agent.lr(),
            last_loss
        );
        offset += prev;
    }
    Ok(TrainOutcome {
        agent,
        log: MetricLog::from_rows(rows),
        episodes,
    })
}
