//! Minimum-dependency policy synthesis.
//!
//! The objective `v(x) - δ l(x) - β C̄(x)` is a difference of concave
//! functions of the occupancy measure. The concave-convex procedure
//! linearises `Σ_i H_i` at the previous iterate; the resulting subproblem
//! is a KL-regularised control problem towards the product of the previous
//! local conditionals, which soft policy iteration solves exactly.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::game_model::{MarkovGame, ReachAvoidSpec};
use crate::linalg::solve_transient;
use crate::occupancy::{expected_length_of, OccupancyModel, OccupancyVector, ENTROPY_FLOOR};

/// Joint states with less occupancy mass fall back to uniform local actions.
pub const MASS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub delta: f64,
    pub beta: f64,
    pub max_ccp_iters: usize,
    pub ccp_tol: f64,
    pub max_inner_iters: usize,
    pub inner_tol: f64,
    pub entropy_floor: f64,
    /// Choice among optimal deterministic policies when `β = 0`.
    pub tie_break: TieBreak,
    pub seed: u64,
    /// Keep a copy of every `snapshot_every`-th iterate (0 keeps none).
    pub snapshot_every: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            delta: 0.0,
            beta: 0.0,
            max_ccp_iters: 500,
            ccp_tol: 1e-7,
            max_inner_iters: 200,
            inner_tol: 1e-11,
            entropy_floor: ENTROPY_FLOOR,
            tie_break: TieBreak::LowestIndex,
            seed: 0,
            snapshot_every: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn new(delta: f64, beta: f64) -> Self {
        Self {
            delta,
            beta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return validation(format!("delta must be nonnegative, got {}", self.delta));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return validation(format!("beta must be nonnegative, got {}", self.beta));
        }
        if self.max_ccp_iters == 0 || self.max_inner_iters == 0 {
            return validation("iteration budgets must be positive");
        }
        if !(self.ccp_tol > 0.0 && self.inner_tol > 0.0 && self.entropy_floor > 0.0) {
            return validation("tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub delta: f64,
    pub beta: f64,
    pub iters: usize,
    pub seed: u64,
}

/// Local action distributions of every agent at every joint state.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy {
    action_counts: Vec<usize>,
    /// `probs[joint_state][agent][action]`
    probs: Vec<Vec<Vec<f64>>>,
    pub meta: PolicyMeta,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    states: Vec<PolicyFileState>,
    meta: PolicyMeta,
}

#[derive(Serialize, Deserialize)]
struct PolicyFileState {
    joint_state: Vec<usize>,
    agents: Vec<Vec<f64>>,
}

impl JointPolicy {
    /// Uniform local actions everywhere.
    pub fn uniform(game: &MarkovGame, meta: PolicyMeta) -> Self {
        let action_counts: Vec<usize> = game.agents().iter().map(|m| m.action_count()).collect();
        let row: Vec<Vec<f64>> = action_counts.iter().map(|&n| vec![1.0 / n as f64; n]).collect();
        Self {
            probs: vec![row; game.joint_state_count()],
            action_counts,
            meta,
        }
    }

    /// Builds a policy from explicit tables, normalising each distribution.
    pub fn from_tables(game: &MarkovGame, probs: Vec<Vec<Vec<f64>>>, meta: PolicyMeta) -> Result<Self> {
        let action_counts: Vec<usize> = game.agents().iter().map(|m| m.action_count()).collect();
        if probs.len() != game.joint_state_count() {
            return validation(format!(
                "policy covers {} joint states, the game has {}",
                probs.len(),
                game.joint_state_count()
            ));
        }
        let mut probs = probs;
        for (s, row) in probs.iter_mut().enumerate() {
            if row.len() != action_counts.len() {
                return validation(format!("joint state {s}: expected {} agents", action_counts.len()));
            }
            for (i, dist) in row.iter_mut().enumerate() {
                if dist.len() != action_counts[i] {
                    return validation(format!("joint state {s}, agent {i}: wrong action count"));
                }
                let total: f64 = dist.iter().sum();
                if dist.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
                    return validation(format!("joint state {s}, agent {i}: not a distribution"));
                }
                dist.iter_mut().for_each(|p| *p /= total);
            }
        }
        Ok(Self {
            action_counts,
            probs,
            meta,
        })
    }

    pub fn joint_state_count(&self) -> usize {
        self.probs.len()
    }

    pub fn n_agents(&self) -> usize {
        self.action_counts.len()
    }

    /// `π^i(· | s)` for joint state id `s`.
    pub fn local(&self, joint_state: usize, agent: usize) -> Result<&[f64]> {
        self.probs
            .get(joint_state)
            .and_then(|row| row.get(agent))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Contract(format!("policy undefined at ({joint_state}, agent {agent})")))
    }

    /// Rows of agent `agent`'s local distributions indexed by joint state.
    pub fn agent_slice(&self, agent: usize) -> AgentPolicy<'_> {
        AgentPolicy { policy: self, agent }
    }

    /// Product of the local distributions on the transient pairs of `model`.
    pub fn joint_action_probs(&self, model: &OccupancyModel) -> Vec<f64> {
        let a_n = model.joint_action_count();
        let mut out = vec![0.0; model.pair_count()];
        for (t, &s) in model.transient_states().iter().enumerate() {
            for a in 0..a_n {
                out[t * a_n + a] = (0..self.n_agents())
                    .map(|i| self.probs[s][i][model.local_action(a, i)])
                    .product();
            }
        }
        out
    }

    pub fn to_json(&self, game: &MarkovGame) -> Result<String> {
        let states = self
            .probs
            .iter()
            .enumerate()
            .map(|(s, agents)| {
                Ok(PolicyFileState {
                    joint_state: game.decode_state(s)?.0,
                    agents: agents.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(serde_json::to_string(&PolicyFile {
            states,
            meta: self.meta.clone(),
        })?)
    }

    pub fn from_json(text: &str, game: &MarkovGame) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(text)?;
        let n = game.joint_state_count();
        let mut probs: Vec<Option<Vec<Vec<f64>>>> = vec![None; n];
        for entry in file.states {
            let id = game.state_index().encode(&entry.joint_state)?;
            if probs[id].replace(entry.agents).is_some() {
                return validation(format!("joint state {:?} listed twice", entry.joint_state));
            }
        }
        let probs = probs
            .into_iter()
            .enumerate()
            .map(|(s, p)| p.ok_or_else(|| Error::Validation(format!("policy missing joint state {s}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_tables(game, probs, file.meta)
    }
}

/// Read-only view of one agent's part of a joint policy.
#[derive(Debug, Clone, Copy)]
pub struct AgentPolicy<'a> {
    policy: &'a JointPolicy,
    agent: usize,
}

impl AgentPolicy<'_> {
    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn at(&self, joint_state: usize) -> Result<&[f64]> {
        self.policy.local(joint_state, self.agent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SubproblemStatus {
    Converged,
    /// Inner iteration budget reached; the last iterate is returned.
    MaxIterations,
    /// The ascent check failed by more than its slack.
    NoAscent,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iter: usize,
    /// `v - δ l - β C̄`
    pub objective: f64,
    pub success: f64,
    pub length: f64,
    pub correlation: f64,
    pub status: SubproblemStatus,
    pub inner_iters: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterateLog {
    pub records: Vec<IterateRecord>,
    /// Threads used by the linear algebra kernels.
    pub threads: usize,
}

impl IterateLog {
    /// Largest drop of the objective between consecutive iterates.
    pub fn max_decrease(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[0].objective - w[1].objective)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub occupancy: OccupancyVector,
    pub policy: JointPolicy,
    pub log: IterateLog,
    /// `(iteration, x)` pairs requested through `snapshot_every`; the
    /// initial and final iterates are always included when enabled.
    pub snapshots: Vec<(usize, OccupancyVector)>,
    /// The initial state is not transient, so there is nothing to optimise.
    pub degenerate: bool,
}

/// `v - δ l - β C̄`.
pub fn true_objective(model: &OccupancyModel, x: &OccupancyVector, config: &SynthesisConfig) -> Result<f64> {
    let corr = if config.beta > 0.0 {
        model.surrogate_total_correlation(x)?
    } else {
        0.0
    };
    Ok(model.success_prob_of(x)? - config.delta * expected_length_of(x) - config.beta * corr)
}

/// Concave surrogate `v - δ l + β H_joint(x) - β <∇Σ_i H_i(x_prev), x>`.
pub fn surrogate_objective(
    model: &OccupancyModel,
    x: &OccupancyVector,
    x_prev: &OccupancyVector,
    config: &SynthesisConfig,
) -> Result<f64> {
    let grad = model.grad_sum_local_entropies(x_prev)?;
    let lin: f64 = grad.iter().zip(&x.values).map(|(g, v)| g * v).sum();
    Ok(model.success_prob_of(x)? - config.delta * expected_length_of(x)
        + config.beta * (model.joint_action_entropy(x)? - lin))
}

fn record(
    model: &OccupancyModel,
    x: &OccupancyVector,
    config: &SynthesisConfig,
    iter: usize,
    status: SubproblemStatus,
    inner_iters: usize,
    started: Instant,
) -> Result<IterateRecord> {
    let correlation = model.surrogate_total_correlation(x)?;
    let success = model.success_prob_of(x)?;
    let length = expected_length_of(x);
    Ok(IterateRecord {
        iter,
        objective: success - config.delta * length - config.beta * correlation,
        success,
        length,
        correlation,
        status,
        inner_iters,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

fn degenerate_result(game: &MarkovGame, model: &OccupancyModel, config: &SynthesisConfig) -> SynthesisResult {
    SynthesisResult {
        occupancy: model.zeros(),
        policy: JointPolicy::uniform(game, meta(config, 0)),
        log: IterateLog {
            records: Vec::new(),
            threads: 1,
        },
        snapshots: Vec::new(),
        degenerate: true,
    }
}

fn meta(config: &SynthesisConfig, iters: usize) -> PolicyMeta {
    PolicyMeta {
        delta: config.delta,
        beta: config.beta,
        iters,
        seed: config.seed,
    }
}

/// Actions within this much of the optimal value count as optimal.
const GREEDY_TOL: f64 = 1e-12;

/// Maximises `v - δ l` over the flow polytope.
///
/// The optimum of the occupancy LP is attained at a deterministic proper
/// policy, found here by policy iteration started from a proper policy.
/// Among the optimal actions a deterministic representative is picked by
/// `rule`, and its occupancy is obtained from the flow equations.
pub fn solve_linear_program(model: &OccupancyModel, delta: f64, rule: TieBreak) -> Result<OccupancyVector> {
    let Some(init) = model.initial_position() else {
        return Ok(model.zeros());
    };
    let values = optimal_values(model, delta)?;
    let actions = proper_greedy_actions(model, &values, delta, rule)?;
    let x = model.occupancy_from_action_probs(&deterministic_probs(model, &actions))?;
    let achieved = model.success_prob_of(&x)? - delta * expected_length_of(&x);
    if achieved < values[init] - 1e-6 {
        return Err(Error::Solver(format!(
            "greedy policy attains {achieved}, the optimum is {}",
            values[init]
        )));
    }
    Ok(x)
}

fn deterministic_probs(model: &OccupancyModel, actions: &[usize]) -> Vec<f64> {
    let a_n = model.joint_action_count();
    let mut probs = vec![0.0; model.pair_count()];
    for (t, &a) in actions.iter().enumerate() {
        probs[t * a_n + a] = 1.0;
    }
    probs
}

fn q_value(model: &OccupancyModel, values: &[f64], delta: f64, t: usize, a: usize) -> f64 {
    model.reach_prob(t, a) - delta + model.successors(t, a).iter().map(|&(y, p)| p * values[y]).sum::<f64>()
}

/// Optimal values of `v - δ l` from every transient state.
pub fn optimal_values(model: &OccupancyModel, delta: f64) -> Result<Vec<f64>> {
    let a_n = model.joint_action_count();
    let n_t = model.transient_count();
    let all: Vec<Vec<usize>> = vec![(0..a_n).collect(); n_t];
    let mut actions = attractor(model, &all, vec![None; n_t])?;
    for _ in 0..10_000 {
        let probs = deterministic_probs(model, &actions);
        let r: Vec<f64> = actions
            .iter()
            .enumerate()
            .map(|(t, &a)| model.reach_prob(t, a) - delta)
            .collect();
        let values = solve_transient(&model.policy_matrix(&probs), &r, false)?;
        let mut improved = false;
        for t in 0..n_t {
            let current = q_value(model, &values, delta, t, actions[t]);
            let mut best = (actions[t], current);
            for a in 0..a_n {
                let q = q_value(model, &values, delta, t, a);
                if q > best.1 + 1e-12 * (1.0 + current.abs()) {
                    best = (a, q);
                }
            }
            if best.0 != actions[t] {
                actions[t] = best.0;
                improved = true;
            }
        }
        if !improved {
            return Ok(values);
        }
    }
    Err(Error::Solver("policy iteration did not terminate".into()))
}

/// Completes `chosen` with actions from `allowed` that reach absorption or
/// an already completed state, layer by layer, lowest index first.
fn attractor(model: &OccupancyModel, allowed: &[Vec<usize>], mut chosen: Vec<Option<usize>>) -> Result<Vec<usize>> {
    let n_t = model.transient_count();
    let leaks = |t: usize, a: usize| model.successors(t, a).iter().map(|e| e.1).sum::<f64>() < 1.0 - 1e-12;
    let mut progress = true;
    while progress {
        progress = false;
        let snapshot = chosen.clone();
        for t in 0..n_t {
            if chosen[t].is_some() {
                continue;
            }
            let exits = |a: usize| leaks(t, a) || model.successors(t, a).iter().any(|&(y, _)| snapshot[y].is_some());
            if let Some(&a) = allowed[t].iter().find(|&&a| exits(a)) {
                chosen[t] = Some(a);
                progress = true;
            }
        }
    }
    chosen
        .into_iter()
        .enumerate()
        .map(|(t, a)| a.ok_or_else(|| Error::Solver(format!("no proper action at transient state {t}"))))
        .collect()
}

/// How a deterministic policy is picked among optimal actions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// First optimal action in index order; states where that choice never
    /// leaves the transient set are repaired attractor-style.
    #[default]
    LowestIndex,
    /// Attractor layering from absorption: each state takes the first
    /// optimal action that makes progress at the earliest layer.
    Shortest,
}

/// Deterministic optimal actions that leave every end component.
fn proper_greedy_actions(model: &OccupancyModel, values: &[f64], delta: f64, rule: TieBreak) -> Result<Vec<usize>> {
    let a_n = model.joint_action_count();
    let n_t = model.transient_count();
    let optimal: Vec<Vec<usize>> = (0..n_t)
        .map(|t| {
            let best = (0..a_n).map(|a| q_value(model, values, delta, t, a)).fold(f64::NEG_INFINITY, f64::max);
            (0..a_n)
                .filter(|&a| q_value(model, values, delta, t, a) >= best - GREEDY_TOL)
                .collect()
        })
        .collect();
    let mut chosen: Vec<Option<usize>> = vec![None; n_t];
    if rule == TieBreak::LowestIndex {
        let first: Vec<usize> = optimal.iter().map(|o| o[0]).collect();
        // keep the first choice wherever it leads out of the transient set
        let mut preds = vec![Vec::new(); n_t];
        let mut queue = std::collections::VecDeque::new();
        for t in 0..n_t {
            let succ = model.successors(t, first[t]);
            for &(y, _) in succ {
                preds[y].push(t);
            }
            if succ.iter().map(|e| e.1).sum::<f64>() < 1.0 - 1e-12 {
                chosen[t] = Some(first[t]);
                queue.push_back(t);
            }
        }
        while let Some(y) = queue.pop_front() {
            for &t in &preds[y] {
                if chosen[t].is_none() {
                    chosen[t] = Some(first[t]);
                    queue.push_back(t);
                }
            }
        }
    }
    attractor(model, &optimal, chosen)
}

/// Baseline: maximise the success probability alone.
pub fn solve_baseline(game: &MarkovGame, spec: &ReachAvoidSpec, config: &SynthesisConfig) -> Result<SynthesisResult> {
    let baseline = SynthesisConfig {
        delta: BASELINE_LENGTH_TIE,
        beta: 0.0,
        ..config.clone()
    };
    baseline.validate()?;
    let model = OccupancyModel::new(game, spec)?;
    let result = ccp_with_model(game, &model, &baseline)?;
    if let Some(init) = model.initial_position() {
        let best = optimal_values(&model, 0.0)?[init];
        let v = model.success_prob_of(&result.occupancy)?;
        if v < best - 1e-6 {
            return Err(Error::Solver(format!("baseline attains {v}, the optimum is {best}")));
        }
    }
    Ok(result)
}

/// The exact optimum of `v` alone can be attained by policies that wander
/// for an astronomically long time to gain the last `1e-8` of success
/// probability. The baseline breaks such ties by length through this tiny
/// penalty and then checks that `v` stays within `1e-6` of the optimum.
pub const BASELINE_LENGTH_TIE: f64 = 1e-9;

/// Runs the concave-convex procedure from the uniform-policy occupancy.
/// With `β = 0` the problem is linear and solved in one step.
pub fn ccp_synthesize(game: &MarkovGame, spec: &ReachAvoidSpec, config: &SynthesisConfig) -> Result<SynthesisResult> {
    config.validate()?;
    let model = OccupancyModel::new(game, spec)?;
    ccp_with_model(game, &model, config)
}

/// Same as [`ccp_synthesize`] reusing a prebuilt occupancy index.
pub fn ccp_with_model(
    game: &MarkovGame,
    model: &OccupancyModel,
    config: &SynthesisConfig,
) -> Result<SynthesisResult> {
    config.validate()?;
    if model.initial_position().is_none() {
        return Ok(degenerate_result(game, model, config));
    }
    let started = Instant::now();
    let mut log = IterateLog {
        records: Vec::new(),
        threads: 1,
    };
    if config.beta == 0.0 {
        let x = solve_linear_program(model, config.delta, config.tie_break)?;
        log.records
            .push(record(model, &x, config, 0, SubproblemStatus::Converged, 1, started)?);
        let policy = extract_policy_with_model(game, model, &x, meta(config, 1))?;
        let snapshots = if config.snapshot_every > 0 { vec![(0, x.clone())] } else { Vec::new() };
        return Ok(SynthesisResult {
            occupancy: x,
            policy,
            log,
            snapshots,
            degenerate: false,
        });
    }

    let mut x = model.uniform_occupancy()?;
    log.records
        .push(record(model, &x, config, 0, SubproblemStatus::Converged, 0, started)?);
    let mut snapshots = Vec::new();
    if config.snapshot_every > 0 {
        snapshots.push((0, x.clone()));
    }
    let mut iters = 0;
    for iter in 1..=config.max_ccp_iters {
        let previous = log.records.last().expect("initial record").objective;
        let step = match subproblem(model, &x, config) {
            Ok(step) => step,
            Err(e) => {
                let status = SubproblemStatus::Failed(e.to_string());
                log.records.push(record(model, &x, config, iter, status, 0, started)?);
                break;
            }
        };
        let rec = record(model, &step.x, config, iter, step.status.clone(), step.inner_iters, started)?;
        if rec.objective < previous - 1e-6 {
            let mut rec = rec;
            rec.status = SubproblemStatus::NoAscent;
            log.records.push(rec);
            break;
        }
        let objective = rec.objective;
        log.records.push(rec);
        x = step.x;
        iters = iter;
        if config.snapshot_every > 0 && iter % config.snapshot_every == 0 {
            snapshots.push((iter, x.clone()));
        }
        if (objective - previous).abs() <= config.ccp_tol * previous.abs().max(1.0) {
            break;
        }
    }
    if config.snapshot_every > 0 && snapshots.last().map(|s| s.0) != Some(iters) {
        snapshots.push((iters, x.clone()));
    }
    let policy = extract_policy_with_model(game, model, &x, meta(config, iters))?;
    Ok(SynthesisResult {
        occupancy: x,
        policy,
        log,
        snapshots,
        degenerate: false,
    })
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub x: OccupancyVector,
    pub status: SubproblemStatus,
    pub inner_iters: usize,
    /// Surrogate objective at `x`.
    pub value: f64,
}

/// Maximises the CCP surrogate linearised at `x_prev`.
pub fn solve_subproblem(
    game: &MarkovGame,
    spec: &ReachAvoidSpec,
    x_prev: &OccupancyVector,
    config: &SynthesisConfig,
) -> Result<SubproblemSolution> {
    config.validate()?;
    let model = OccupancyModel::new(game, spec)?;
    if config.beta == 0.0 {
        let x = solve_linear_program(&model, config.delta, config.tie_break)?;
        let value = model.success_prob_of(&x)? - config.delta * expected_length_of(&x);
        return Ok(SubproblemSolution {
            x,
            status: SubproblemStatus::Converged,
            inner_iters: 1,
            value,
        });
    }
    subproblem(&model, x_prev, config)
}

/// Soft policy iteration on rewards `R - δ + β log q` with entropy bonus
/// `β H(π)`, where `q` is the product of the local conditionals of `x_prev`.
fn subproblem(model: &OccupancyModel, x_prev: &OccupancyVector, config: &SynthesisConfig) -> Result<SubproblemSolution> {
    let Some(init) = model.initial_position() else {
        return Ok(SubproblemSolution {
            x: model.zeros(),
            status: SubproblemStatus::Converged,
            inner_iters: 0,
            value: 0.0,
        });
    };
    let beta = config.beta;
    let a_n = model.joint_action_count();
    let n_t = model.transient_count();
    let log_q: Vec<f64> = model
        .local_product_policy(x_prev)?
        .into_iter()
        .map(|q| q.max(config.entropy_floor).ln())
        .collect();
    let cost: Vec<f64> = model.reach_probs().iter().map(|r| r - config.delta).collect();

    // start from the conditional policy of x_prev so the first evaluation is
    // the surrogate at x_prev and every improvement step ascends from there
    let mass = model.state_mass(x_prev);
    let mut pi = vec![0.0; model.pair_count()];
    for t in 0..n_t {
        let row = &mut pi[t * a_n..(t + 1) * a_n];
        if mass[t] > MASS_FLOOR {
            for (a, p) in row.iter_mut().enumerate() {
                *p = x_prev.values[t * a_n + a] / mass[t];
            }
        } else {
            softmax_into(&log_q[t * a_n..(t + 1) * a_n], row);
        }
    }

    let mut status = SubproblemStatus::MaxIterations;
    let mut inner_iters = 0;
    let mut value = evaluate_soft(model, &pi, &cost, &log_q, beta)?;
    let start_value = value[init];
    let mut logits = vec![0.0; a_n];
    for it in 1..=config.max_inner_iters {
        inner_iters = it;
        let mut next = vec![0.0; pi.len()];
        let mut change = 0.0f64;
        for t in 0..n_t {
            for a in 0..a_n {
                let k = t * a_n + a;
                let future: f64 = model.successors(t, a).iter().map(|&(y, p)| p * value[y]).sum();
                logits[a] = log_q[k] + (cost[k] + future) / beta;
            }
            let row = &mut next[t * a_n..(t + 1) * a_n];
            softmax_into(&logits, row);
            for a in 0..a_n {
                change = change.max((row[a] - pi[t * a_n + a]).abs());
            }
        }
        pi = next;
        value = evaluate_soft(model, &pi, &cost, &log_q, beta)?;
        if change < config.inner_tol {
            status = SubproblemStatus::Converged;
            break;
        }
    }
    if value[init] < start_value - 1e-9 {
        status = SubproblemStatus::NoAscent;
    }
    let x = model.occupancy_from_action_probs(&pi)?;
    Ok(SubproblemSolution {
        x,
        status,
        inner_iters,
        value: value[init],
    })
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Soft value of `pi`: solves `(I - P_π) V = r_π` with
/// `r_π = Σ_a π (c + β log q - β log π)`.
fn evaluate_soft(model: &OccupancyModel, pi: &[f64], cost: &[f64], log_q: &[f64], beta: f64) -> Result<Vec<f64>> {
    let a_n = model.joint_action_count();
    let r: Vec<f64> = pi
        .chunks(a_n)
        .enumerate()
        .map(|(t, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(a, &p)| {
                    let k = t * a_n + a;
                    p * (cost[k] + beta * (log_q[k] - p.ln()))
                })
                .sum()
        })
        .collect();
    solve_transient(&model.policy_matrix(pi), &r, false)
}

/// Occupancy induced by executing the local policies together under
/// truthful communication. It differs from the synthesised `x` wherever `x`
/// does not factorise across agents.
pub fn policy_occupancy(model: &OccupancyModel, policy: &JointPolicy) -> Result<OccupancyVector> {
    model.occupancy_from_action_probs(&policy.joint_action_probs(model))
}

/// Marginalises the joint occupancy into local policies.
pub fn extract_policy(game: &MarkovGame, spec: &ReachAvoidSpec, x: &OccupancyVector) -> Result<JointPolicy> {
    let model = OccupancyModel::new(game, spec)?;
    extract_policy_with_model(game, &model, x, PolicyMeta {
        delta: 0.0,
        beta: 0.0,
        iters: 0,
        seed: 0,
    })
}

pub fn extract_policy_with_model(
    game: &MarkovGame,
    model: &OccupancyModel,
    x: &OccupancyVector,
    meta: PolicyMeta,
) -> Result<JointPolicy> {
    if x.values.len() != model.pair_count() {
        return validation("occupancy vector does not match the game");
    }
    let mut policy = JointPolicy::uniform(game, meta);
    let a_n = model.joint_action_count();
    let mass = model.state_mass(x);
    for (t, &s) in model.transient_states().iter().enumerate() {
        if mass[t] <= MASS_FLOOR {
            continue;
        }
        for i in 0..game.n_agents() {
            let dist = &mut policy.probs[s][i];
            dist.iter_mut().for_each(|p| *p = 0.0);
            for a in 0..a_n {
                dist[model.local_action(a, i)] += x.values[t * a_n + a];
            }
            let total: f64 = dist.iter().sum();
            dist.iter_mut().for_each(|p| *p /= total);
        }
    }
    Ok(policy)
}

/// Mass-weighted `Σ_i H(A^i | s) - H(A | s)` at every transient state, in
/// the order of [`OccupancyModel::transient_states`].
pub fn independence_gap(game: &MarkovGame, spec: &ReachAvoidSpec, x: &OccupancyVector) -> Result<Vec<f64>> {
    let model = OccupancyModel::new(game, spec)?;
    independence_gap_with_model(&model, x)
}

pub fn independence_gap_with_model(model: &OccupancyModel, x: &OccupancyVector) -> Result<Vec<f64>> {
    if x.values.len() != model.pair_count() {
        return validation("occupancy vector does not match the game");
    }
    let a_n = model.joint_action_count();
    let plogp = |v: f64, mass: f64| if v > 0.0 { v * (mass / v).ln() } else { 0.0 };
    Ok(x.values
        .chunks(a_n)
        .map(|row| {
            let mass: f64 = row.iter().sum();
            if mass <= 0.0 {
                return 0.0;
            }
            let joint: f64 = row.iter().map(|&v| plogp(v, mass)).sum();
            let local: f64 = (0..model.n_agents())
                .map(|i| {
                    let mut m = vec![0.0; model.local_action_count(i)];
                    for (a, &v) in row.iter().enumerate() {
                        m[model.local_action(a, i)] += v;
                    }
                    m.iter().map(|&v| plogp(v, mass)).sum::<f64>()
                })
                .sum();
            (local - joint).max(0.0)
        })
        .collect())
}

/// Optimal reach probability from every transient state by value iteration.
/// Independent of the LP and used to cross-check it.
pub fn optimal_reach_values(model: &OccupancyModel, tol: f64, max_sweeps: usize) -> Vec<f64> {
    let a_n = model.joint_action_count();
    let mut v = vec![0.0; model.transient_count()];
    for _ in 0..max_sweeps {
        let mut change = 0.0f64;
        for t in 0..v.len() {
            let best = (0..a_n)
                .map(|a| {
                    model.reach_prob(t, a)
                        + model.successors(t, a).iter().map(|&(y, p)| p * v[y]).sum::<f64>()
                })
                .fold(0.0, f64::max);
            change = change.max((best - v[t]).abs());
            v[t] = best;
        }
        if change < tol {
            break;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::{JointState, LocalMdp};
    use std::collections::BTreeSet;

    fn chain(len: usize) -> (MarkovGame, ReachAvoidSpec) {
        let entries = (0..len).flat_map(|s| [(s, 0, (s + 1).min(len), 1.0), (s, 1, s, 1.0)]);
        let m = LocalMdp::new(len + 1, 0, 2, entries.chain([(len, 0, len, 1.0), (len, 1, len, 1.0)])).unwrap();
        let g = MarkovGame::new(vec![m]).unwrap();
        let spec = ReachAvoidSpec::new(&g, BTreeSet::from([len]), BTreeSet::new()).unwrap();
        (g, spec)
    }

    #[test]
    fn deterministic_chain_baseline() {
        let (g, spec) = chain(4);
        let out = solve_baseline(&g, &spec, &SynthesisConfig::default()).unwrap();
        let model = OccupancyModel::new(&g, &spec).unwrap();
        assert!((model.success_prob_of(&out.occupancy).unwrap() - 1.0).abs() < 1e-9);
        assert!(!out.degenerate);
        for s in 0..4 {
            assert_eq!(out.policy.local(s, 0).unwrap(), &[1.0, 0.0]);
        }
    }

    #[test]
    fn dead_initial_state_is_degenerate() {
        let m = LocalMdp::new(2, 0, 1, [(0, 0, 0, 1.0), (1, 0, 1, 1.0)]).unwrap();
        let g = MarkovGame::new(vec![m]).unwrap();
        let spec = ReachAvoidSpec::new(&g, BTreeSet::from([1]), BTreeSet::new()).unwrap();
        let out = solve_baseline(&g, &spec, &SynthesisConfig::default()).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.occupancy.values.iter().sum::<f64>(), 0.0);
        assert_eq!(out.policy.local(0, 0).unwrap(), &[1.0]);
    }

    #[test]
    fn length_penalty_lp_matches_hand_solution() {
        // 0 --a0--> target w.p. 0.5, else stay; 0 --a1--> 1; 1 -> target surely
        let m = LocalMdp::new(
            3,
            0,
            2,
            [(0, 0, 2, 0.5), (0, 0, 0, 0.5), (0, 1, 1, 1.0), (1, 0, 2, 1.0), (1, 1, 2, 1.0), (2, 0, 2, 1.0), (2, 1, 2, 1.0)],
        )
        .unwrap();
        let g = MarkovGame::new(vec![m]).unwrap();
        let spec = ReachAvoidSpec::new(&g, BTreeSet::from([2]), BTreeSet::new()).unwrap();
        let config = SynthesisConfig::new(0.1, 0.0);
        let sub = solve_subproblem(&g, &spec, &OccupancyModel::new(&g, &spec).unwrap().zeros(), &config).unwrap();
        // both routes succeed surely; the gamble takes 2 expected steps, the detour exactly 2
        assert!((sub.value - 0.8).abs() < 1e-9, "{}", sub.value);
    }

    #[test]
    fn entropy_only_single_state_is_uniform() {
        let m = LocalMdp::new(2, 0, 3, [(0, 0, 1, 1.0), (0, 1, 1, 1.0), (0, 2, 1, 1.0), (1, 0, 1, 1.0), (1, 1, 1, 1.0), (1, 2, 1, 1.0)]).unwrap();
        let g = MarkovGame::new(vec![m]).unwrap();
        let spec = ReachAvoidSpec::new(&g, BTreeSet::from([1]), BTreeSet::new()).unwrap();
        let model = OccupancyModel::new(&g, &spec).unwrap();
        let x = model.uniform_occupancy().unwrap();
        let sub = solve_subproblem(&g, &spec, &x, &SynthesisConfig::new(0.0, 1.0)).unwrap();
        for v in &sub.x.values {
            assert!((v - 1.0 / 3.0).abs() < 1e-9);
        }

        // with one agent the linearisation is tight, so any conditional is a
        // fixed point of the entropy-only subproblem
        let x = OccupancyVector {
            values: vec![0.6, 0.3, 0.1],
        };
        let sub = solve_subproblem(&g, &spec, &x, &SynthesisConfig::new(0.0, 1.0)).unwrap();
        for (a, b) in sub.x.values.iter().zip(&x.values) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((sub.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn extraction_examples() {
        let m = LocalMdp::new(2, 0, 2, [(0, 0, 1, 1.0), (0, 1, 1, 1.0), (1, 0, 1, 1.0), (1, 1, 1, 1.0)]).unwrap();
        let g = MarkovGame::new(vec![m.clone(), m]).unwrap();
        let spec = ReachAvoidSpec::from_tuples(&g, &[JointState(vec![1, 1])], &[]).unwrap();
        let model = OccupancyModel::new(&g, &spec).unwrap();
        let t = model.position(0).unwrap();
        let mut x = model.zeros();
        for a in 0..4 {
            x.values[t * 4 + a] = 0.25;
        }
        let p = extract_policy(&g, &spec, &x).unwrap();
        assert_eq!(p.local(0, 0).unwrap(), &[0.5, 0.5]);
        assert!(independence_gap(&g, &spec, &x).unwrap()[t].abs() < 1e-12);

        let mut x = model.zeros();
        x.values[t * 4 + 3] = 1.0;
        let p = extract_policy(&g, &spec, &x).unwrap();
        assert_eq!(p.local(0, 0).unwrap(), &[0.0, 1.0]);
        assert_eq!(p.local(0, 1).unwrap(), &[0.0, 1.0]);
        // (0, 1) carries no mass
        let s01 = g.encode_state(&JointState(vec![0, 1])).unwrap();
        assert_eq!(p.local(s01, 0).unwrap(), &[0.5, 0.5]);

        let mut x = model.zeros();
        x.values[t * 4] = 0.5;
        x.values[t * 4 + 3] = 0.5;
        let gap = independence_gap(&g, &spec, &x).unwrap()[t];
        assert!((gap - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn policy_json_round_trip() {
        let (g, spec) = chain(3);
        let out = solve_baseline(&g, &spec, &SynthesisConfig::default()).unwrap();
        let text = out.policy.to_json(&g).unwrap();
        assert_eq!(JointPolicy::from_json(&text, &g).unwrap(), out.policy);
        assert!(JointPolicy::from_json(r#"{"states":[],"meta":{"delta":0,"beta":0,"iters":0,"seed":0}}"#, &g).is_err());
    }
}
