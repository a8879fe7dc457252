//! Decentralised execution with privatised state broadcasts, and Monte Carlo
//! evaluation.
//!
//! Every agent keeps its own random stream, derived from the master seed, the
//! rollout index and the agent index, so results do not depend on the number
//! of worker threads or on the order in which agents are stepped.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::game_model::{JointAction, JointState, MarkovGame, MixedRadix, ReachAvoidSpec, StateClass};
use crate::privacy::{build_mechanism, sample_sparse, MechanismTable, PrivacyParams};
use crate::synthesis::{AgentPolicy, JointPolicy};

pub const DEFAULT_HORIZON: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionConfig {
    pub privacy: PrivacyParams,
    pub horizon: usize,
    pub n_rollouts: usize,
    pub master_seed: u64,
}

impl ExecutionConfig {
    pub fn new(privacy: PrivacyParams, n_rollouts: usize, master_seed: u64) -> Self {
        Self {
            privacy,
            horizon: DEFAULT_HORIZON,
            n_rollouts,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return validation("horizon must be at least 1");
        }
        if self.n_rollouts == 0 {
            return validation("n_rollouts must be at least 1");
        }
        self.privacy.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub outcome: Outcome,
    pub length: usize,
    /// Visited joint states with the joint action taken there; the final
    /// state carries no action.
    pub true_trajectory: Vec<(JointState, Option<JointAction>)>,
    /// Per agent: the broadcast states, starting from the initial state.
    pub private_trajectories: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub n_rollouts: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub std_error: f64,
    /// Mean length over rollouts that did not time out.
    pub mean_length: f64,
    pub timeout_count: usize,
}

/// Mechanisms for every agent, or none in truthful mode.
#[derive(Debug, Clone)]
pub struct Channel {
    mechanisms: Option<Vec<MechanismTable>>,
}

impl Channel {
    pub fn truthful() -> Self {
        Self { mechanisms: None }
    }

    /// One mechanism per agent with shared parameters.
    pub fn new(game: &MarkovGame, params: &PrivacyParams) -> Result<Self> {
        if !params.enabled {
            return Ok(Self::truthful());
        }
        Self::per_agent(game, &vec![*params; game.n_agents()])
    }

    pub fn per_agent(game: &MarkovGame, params: &[PrivacyParams]) -> Result<Self> {
        if params.len() != game.n_agents() {
            return validation("one set of privacy parameters per agent is required");
        }
        let tables = game
            .agents()
            .iter()
            .zip(params)
            .map(|(m, p)| build_mechanism(m, p))
            .collect::<Result<_>>()?;
        Ok(Self {
            mechanisms: Some(tables),
        })
    }

    pub fn mechanisms(&self) -> Option<&[MechanismTable]> {
        self.mechanisms.as_deref()
    }
}

/// Mixes `(seed, index)` into a well-spread 64-bit value.
pub fn rollout_seed(master_seed: u64, rollout_index: u64) -> u64 {
    let mut z = master_seed ^ rollout_index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream of `agent` within rollout `rollout_index`.
pub fn agent_rng(master_seed: u64, rollout_index: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rollout_seed(master_seed, rollout_index));
    rng.set_stream(agent as u64);
    rng
}

/// What one agent is allowed to use when choosing an action: its own true
/// state, the teammates' broadcast states and its own policy slice.
#[derive(Debug, Clone, Copy)]
pub struct AgentController<'a> {
    agent: usize,
    policy: AgentPolicy<'a>,
    index: &'a MixedRadix,
}

impl<'a> AgentController<'a> {
    pub fn new(policy: AgentPolicy<'a>, index: &'a MixedRadix) -> Self {
        Self {
            agent: policy.agent(),
            policy,
            index,
        }
    }

    /// Joint state estimate: the broadcast tuple with the own component
    /// replaced by the true local state.
    pub fn estimate(&self, own_state: usize, broadcast: &[usize]) -> Result<usize> {
        let mut estimate = broadcast.to_vec();
        estimate[self.agent] = own_state;
        self.index.encode(&estimate)
    }

    pub fn decide<R: Rng + ?Sized>(&self, own_state: usize, broadcast: &[usize], rng: &mut R) -> Result<usize> {
        let probs = self.policy.at(self.estimate(own_state, broadcast)?)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(a);
            }
        }
        probs
            .iter()
            .rposition(|&p| p > 0.0)
            .ok_or_else(|| Error::Contract("empty action distribution".into()))
    }
}

fn check_inputs(game: &MarkovGame, policy: &JointPolicy, channel: &Channel) -> Result<()> {
    if policy.joint_state_count() != game.joint_state_count() || policy.n_agents() != game.n_agents() {
        return Err(Error::Contract("policy does not cover the joint state space".into()));
    }
    if let Some(m) = channel.mechanisms() {
        if m.len() != game.n_agents() {
            return validation("one mechanism per agent is required");
        }
        for (table, mdp) in m.iter().zip(game.agents()) {
            if table.state_count() != mdp.state_count() {
                return validation("mechanism does not match the agent's state space");
            }
        }
    }
    Ok(())
}

fn terminal(spec: &ReachAvoidSpec, joint: usize) -> Option<Outcome> {
    match spec.class(joint) {
        StateClass::Target => Some(Outcome::Success),
        StateClass::Dead => Some(Outcome::Failure),
        StateClass::Transient => None,
    }
}

fn simulate(
    game: &MarkovGame,
    spec: &ReachAvoidSpec,
    policy: &JointPolicy,
    channel: &Channel,
    config: &ExecutionConfig,
    rollout_index: u64,
    record: bool,
) -> Result<RolloutResult> {
    let n = game.n_agents();
    let index = game.state_index();
    let controllers: Vec<AgentController> = (0..n)
        .map(|i| AgentController::new(policy.agent_slice(i), index))
        .collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| agent_rng(config.master_seed, rollout_index, i)).collect();
    let mut state = game.initial_state().0;
    let mut broadcast = state.clone();
    let mut private_trajectories: Vec<Vec<usize>> = if record {
        state.iter().map(|&s| vec![s]).collect()
    } else {
        Vec::new()
    };
    let mut true_trajectory = Vec::new();
    let mut joint = index.encode(&state)?;
    let mut action = vec![0; n];
    let mut outcome = terminal(spec, joint);
    let mut length = 0;
    while outcome.is_none() && length < config.horizon {
        for i in 0..n {
            action[i] = controllers[i].decide(state[i], &broadcast, &mut rngs[i])?;
        }
        if record {
            true_trajectory.push((JointState(state.clone()), Some(JointAction(action.clone()))));
        }
        for i in 0..n {
            let dist = game.agent(i).transition(state[i], action[i])?;
            state[i] = sample_sparse(dist, &mut rngs[i]);
        }
        match channel.mechanisms() {
            Some(tables) => {
                for i in 0..n {
                    broadcast[i] = tables[i].sample(state[i], broadcast[i], &mut rngs[i])?;
                }
            }
            None => broadcast.copy_from_slice(&state),
        }
        if record {
            for i in 0..n {
                private_trajectories[i].push(broadcast[i]);
            }
        }
        length += 1;
        joint = index.encode(&state)?;
        outcome = terminal(spec, joint);
    }
    if record {
        true_trajectory.push((JointState(state), None));
    }
    Ok(RolloutResult {
        outcome: outcome.unwrap_or(Outcome::Timeout),
        length,
        true_trajectory,
        private_trajectories,
    })
}

/// One execution of the decentralised protocol, fully recorded.
pub fn run_rollout(
    game: &MarkovGame,
    spec: &ReachAvoidSpec,
    policy: &JointPolicy,
    channel: &Channel,
    config: &ExecutionConfig,
    rollout_index: u64,
) -> Result<RolloutResult> {
    config.validate()?;
    check_inputs(game, policy, channel)?;
    simulate(game, spec, policy, channel, config, rollout_index, true)
}

/// Outcomes and lengths of `config.n_rollouts` rollouts in index order.
pub fn rollout_outcomes(
    game: &MarkovGame,
    spec: &ReachAvoidSpec,
    policy: &JointPolicy,
    channel: &Channel,
    config: &ExecutionConfig,
) -> Result<Vec<(Outcome, usize)>> {
    config.validate()?;
    check_inputs(game, policy, channel)?;
    (0..config.n_rollouts as u64)
        .into_par_iter()
        .map(|i| simulate(game, spec, policy, channel, config, i, false).map(|r| (r.outcome, r.length)))
        .collect()
}

pub fn summarize(outcomes: &[(Outcome, usize)]) -> EvalStats {
    let n = outcomes.len();
    let successes = outcomes.iter().filter(|o| o.0 == Outcome::Success).count();
    let finished: Vec<usize> = outcomes
        .iter()
        .filter(|o| o.0 != Outcome::Timeout)
        .map(|o| o.1)
        .collect();
    let p = successes as f64 / n.max(1) as f64;
    EvalStats {
        n_rollouts: n,
        successes,
        success_rate: p,
        std_error: (p * (1.0 - p) / n.max(1) as f64).sqrt(),
        mean_length: if finished.is_empty() {
            f64::NAN
        } else {
            finished.iter().sum::<usize>() as f64 / finished.len() as f64
        },
        timeout_count: n - finished.len(),
    }
}

/// Monte Carlo success rate under the channel described by `config.privacy`.
pub fn evaluate(game: &MarkovGame, spec: &ReachAvoidSpec, policy: &JointPolicy, config: &ExecutionConfig) -> Result<EvalStats> {
    let channel = Channel::new(game, &config.privacy)?;
    evaluate_with_channel(game, spec, policy, &channel, config)
}

pub fn evaluate_with_channel(
    game: &MarkovGame,
    spec: &ReachAvoidSpec,
    policy: &JointPolicy,
    channel: &Channel,
    config: &ExecutionConfig,
) -> Result<EvalStats> {
    Ok(summarize(&rollout_outcomes(game, spec, policy, channel, config)?))
}

/// Mean truthful trajectory length over rollouts that did not time out.
pub fn estimate_expected_length(
    game: &MarkovGame,
    spec: &ReachAvoidSpec,
    policy: &JointPolicy,
    config: &ExecutionConfig,
) -> Result<f64> {
    let truthful = ExecutionConfig {
        privacy: PrivacyParams::truthful(),
        ..*config
    };
    Ok(evaluate(game, spec, policy, &truthful)?.mean_length)
}

/// CSV trajectory log with columns
/// `rollout_id,t,true_state,private_states,joint_action,outcome`; tuples are
/// written with `|` separators.
pub fn trajectory_csv(results: &[(u64, RolloutResult)]) -> String {
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join("|");
    let mut out = String::from("rollout_id,t,true_state,private_states,joint_action,outcome\n");
    for (id, r) in results {
        let outcome = match r.outcome {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::Timeout => "timeout",
        };
        for (t, (s, a)) in r.true_trajectory.iter().enumerate() {
            let private: Vec<usize> = r.private_trajectories.iter().map(|p| p[t]).collect();
            let action = a.as_ref().map(|a| join(&a.0)).unwrap_or_default();
            writeln!(out, "{id},{t},{},{},{action},{outcome}", join(&s.0), join(&private)).expect("string write");
        }
    }
    out
}
