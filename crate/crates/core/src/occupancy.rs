//! Occupancy measures over transient joint state-action pairs.
//!
//! `x[s, a]` is the expected number of times joint action `a` is taken in
//! joint state `s` before the team is absorbed in the target or dead set.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::game_model::{MarkovGame, ReachAvoidSpec};
use crate::linalg::{solve_transient, SparseRows};

/// Floor applied inside logarithms.
pub const ENTROPY_FLOOR: f64 = 1e-12;

/// Maximum flow residual of an occupancy vector reported as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Index structure shared by all occupancy vectors of one game.
#[derive(Debug, Clone)]
pub struct OccupancyModel {
    n_agents: usize,
    joint_action_count: usize,
    transient: Vec<usize>,
    position: Vec<Option<usize>>,
    initial: Option<usize>,
    /// Per pair `t * A + a`: successors inside the transient set.
    succ: Vec<Vec<(usize, f64)>>,
    /// Per pair: one-step probability of entering the target set.
    reach: Vec<f64>,
    state_digits: Vec<usize>,
    action_digits: Vec<usize>,
    local_states: Vec<usize>,
    local_actions: Vec<usize>,
}

/// Dense occupancy vector aligned with an [`OccupancyModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyVector {
    pub values: Vec<f64>,
}

/// One agent's local state-action occupancy, stored row-major by local state.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalOccupancy {
    pub agent: usize,
    pub state_count: usize,
    pub action_count: usize,
    pub values: Vec<f64>,
}

impl MarginalOccupancy {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.action_count + a]
    }
}

impl OccupancyModel {
    pub fn new(game: &MarkovGame, spec: &ReachAvoidSpec) -> Result<Self> {
        game.check_enumerable()?;
        let n_states = game.joint_state_count();
        let n_actions = game.joint_action_count();
        let n = game.n_agents();
        let transient: Vec<usize> = (0..n_states).filter(|&s| spec.is_transient(s)).collect();
        let mut position = vec![None; n_states];
        for (t, &s) in transient.iter().enumerate() {
            position[s] = Some(t);
        }
        let mut succ = Vec::with_capacity(transient.len() * n_actions);
        let mut reach = Vec::with_capacity(transient.len() * n_actions);
        for &s in &transient {
            for a in 0..n_actions {
                let mut inner = Vec::new();
                let mut hit = 0.0;
                for (y, p) in game.joint_transition_ids(s, a)? {
                    if let Some(ty) = position[y] {
                        inner.push((ty, p));
                    } else if spec.target_set.contains(&y) {
                        hit += p;
                    }
                }
                succ.push(inner);
                reach.push(hit);
            }
        }
        let mut state_digits = Vec::with_capacity(transient.len() * n);
        for &s in &transient {
            state_digits.extend(game.decode_state(s)?.0);
        }
        let mut action_digits = Vec::with_capacity(n_actions * n);
        for a in 0..n_actions {
            action_digits.extend(game.decode_action(a)?.0);
        }
        let initial = position[game.initial_state_id()];
        Ok(Self {
            n_agents: n,
            joint_action_count: n_actions,
            transient,
            position,
            initial,
            succ,
            reach,
            state_digits,
            action_digits,
            local_states: game.agents().iter().map(|m| m.state_count()).collect(),
            local_actions: game.agents().iter().map(|m| m.action_count()).collect(),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn joint_action_count(&self) -> usize {
        self.joint_action_count
    }

    pub fn transient_count(&self) -> usize {
        self.transient.len()
    }

    pub fn pair_count(&self) -> usize {
        self.transient.len() * self.joint_action_count
    }

    /// Joint state ids of the transient states in index order.
    pub fn transient_states(&self) -> &[usize] {
        &self.transient
    }

    /// Transient index of a joint state, or `None` for target and dead states.
    pub fn position(&self, joint_state: usize) -> Option<usize> {
        self.position.get(joint_state).copied().flatten()
    }

    /// Transient index of the initial state, `None` when it is absorbing.
    pub fn initial_position(&self) -> Option<usize> {
        self.initial
    }

    pub fn local_state_count(&self, agent: usize) -> usize {
        self.local_states[agent]
    }

    pub fn local_action_count(&self, agent: usize) -> usize {
        self.local_actions[agent]
    }

    /// Local state of `agent` in transient state `t`.
    pub fn local_state(&self, t: usize, agent: usize) -> usize {
        self.state_digits[t * self.n_agents + agent]
    }

    /// Local action of `agent` in joint action `a`.
    pub fn local_action(&self, a: usize, agent: usize) -> usize {
        self.action_digits[a * self.n_agents + agent]
    }

    /// Transient successors of pair `(t, a)`.
    pub fn successors(&self, t: usize, a: usize) -> &[(usize, f64)] {
        &self.succ[t * self.joint_action_count + a]
    }

    /// One-step target probability of pair `(t, a)`.
    pub fn reach_prob(&self, t: usize, a: usize) -> f64 {
        self.reach[t * self.joint_action_count + a]
    }

    pub fn reach_probs(&self) -> &[f64] {
        &self.reach
    }

    pub fn zeros(&self) -> OccupancyVector {
        OccupancyVector {
            values: vec![0.0; self.pair_count()],
        }
    }

    fn check(&self, x: &OccupancyVector) -> Result<()> {
        if x.values.len() != self.pair_count() {
            return validation(format!(
                "occupancy vector has {} entries, expected {}",
                x.values.len(),
                self.pair_count()
            ));
        }
        Ok(())
    }

    /// Outflow minus inflow minus the unit source, per transient state.
    pub fn flow_residual(&self, x: &OccupancyVector) -> Result<Vec<f64>> {
        self.check(x)?;
        let a_n = self.joint_action_count;
        let mut r = vec![0.0; self.transient_count()];
        for (t, row) in x.values.chunks(a_n).enumerate() {
            r[t] += row.iter().sum::<f64>();
            for (a, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    for &(y, p) in self.successors(t, a) {
                        r[y] -= v * p;
                    }
                }
            }
        }
        if let Some(i) = self.initial {
            r[i] -= 1.0;
        }
        Ok(r)
    }

    /// Non-negative and flow-conserving within [`FEASIBILITY_TOL`].
    pub fn is_feasible(&self, x: &OccupancyVector) -> Result<bool> {
        let r = self.flow_residual(x)?;
        Ok(x.values.iter().all(|&v| v >= -FEASIBILITY_TOL)
            && r.iter().all(|v| v.abs() <= FEASIBILITY_TOL))
    }

    /// Probability of reaching the target: occupancy-weighted one-step entry.
    pub fn success_prob_of(&self, x: &OccupancyVector) -> Result<f64> {
        self.check(x)?;
        Ok(x.values.iter().zip(&self.reach).map(|(v, r)| v * r).sum())
    }

    /// Total occupancy mass `X_s = Σ_a x[s, a]` of each transient state.
    pub fn state_mass(&self, x: &OccupancyVector) -> Vec<f64> {
        x.values
            .chunks(self.joint_action_count)
            .map(|row| row.iter().sum())
            .collect()
    }

    pub fn marginal_occupancy(&self, x: &OccupancyVector, agent: usize) -> Result<MarginalOccupancy> {
        self.check(x)?;
        if agent >= self.n_agents {
            return Err(Error::Index(format!("agent {agent} of {}", self.n_agents)));
        }
        let (ns, na) = (self.local_states[agent], self.local_actions[agent]);
        let mut values = vec![0.0; ns * na];
        for (t, row) in x.values.chunks(self.joint_action_count).enumerate() {
            let si = self.local_state(t, agent);
            for (a, &v) in row.iter().enumerate() {
                values[si * na + self.local_action(a, agent)] += v;
            }
        }
        Ok(MarginalOccupancy {
            agent,
            state_count: ns,
            action_count: na,
            values,
        })
    }

    /// Joint conditional action entropy `H(A | S)` weighted by occupancy.
    pub fn joint_action_entropy(&self, x: &OccupancyVector) -> Result<f64> {
        self.check(x)?;
        conditional_action_entropy(&x.values, self.joint_action_count)
    }

    /// `Σ_i H_i(A^i | S^i)` over the local marginals.
    pub fn sum_local_entropies(&self, x: &OccupancyVector) -> Result<f64> {
        (0..self.n_agents)
            .map(|i| {
                let m = self.marginal_occupancy(x, i)?;
                conditional_action_entropy(&m.values, m.action_count)
            })
            .sum()
    }

    /// Total-correlation surrogate `Σ_i H_i − H_joint`.
    pub fn surrogate_total_correlation(&self, x: &OccupancyVector) -> Result<f64> {
        Ok(self.sum_local_entropies(x)? - self.joint_action_entropy(x)?)
    }

    /// Gradient of `Σ_i H_i` with respect to every joint entry.
    pub fn grad_sum_local_entropies(&self, x: &OccupancyVector) -> Result<Vec<f64>> {
        let logs = self.local_log_ratios(x)?;
        let mut grad = vec![0.0; self.pair_count()];
        for t in 0..self.transient_count() {
            for a in 0..self.joint_action_count {
                grad[t * self.joint_action_count + a] = (0..self.n_agents)
                    .map(|i| {
                        let na = self.local_actions[i];
                        logs[i][self.local_state(t, i) * na + self.local_action(a, i)]
                    })
                    .sum();
            }
        }
        Ok(grad)
    }

    /// `log(X_{s^i} / x_{s^i, a^i})` per agent with floored denominators.
    /// Local states without mass get the uniform value `log |A^i|`.
    fn local_log_ratios(&self, x: &OccupancyVector) -> Result<Vec<Vec<f64>>> {
        (0..self.n_agents)
            .map(|i| {
                let m = self.marginal_occupancy(x, i)?;
                let na = m.action_count;
                let mut out = vec![0.0; m.values.len()];
                for (s, row) in m.values.chunks(na).enumerate() {
                    let mass: f64 = row.iter().sum();
                    for (a, &v) in row.iter().enumerate() {
                        out[s * na + a] = if mass > 0.0 {
                            (mass / v.max(ENTROPY_FLOOR)).ln()
                        } else {
                            (na as f64).ln()
                        };
                    }
                }
                Ok(out)
            })
            .collect()
    }

    /// Product of local conditionals `q(a | s) = Π_i x_{s^i,a^i} / X_{s^i}`
    /// for every pair, floored at [`ENTROPY_FLOOR`] per factor; uniform on
    /// local states without mass.
    pub fn local_product_policy(&self, x: &OccupancyVector) -> Result<Vec<f64>> {
        let logs = self.local_log_ratios(x)?;
        let mut q = vec![0.0; self.pair_count()];
        for t in 0..self.transient_count() {
            for a in 0..self.joint_action_count {
                let mut p = 1.0;
                for (i, log) in logs.iter().enumerate() {
                    let na = self.local_actions[i];
                    p *= (-log[self.local_state(t, i) * na + self.local_action(a, i)]).exp();
                }
                q[t * self.joint_action_count + a] = p;
            }
        }
        Ok(q)
    }

    /// State-to-state matrix of the policy `probs[t * A + a]` on the
    /// transient set.
    pub(crate) fn policy_matrix(&self, probs: &[f64]) -> SparseRows {
        let a_n = self.joint_action_count;
        let mut rows: SparseRows = Vec::with_capacity(self.transient_count());
        let mut dense = vec![0.0; self.transient_count()];
        let mut touched = Vec::new();
        for t in 0..self.transient_count() {
            for a in 0..a_n {
                let pa = probs[t * a_n + a];
                if pa == 0.0 {
                    continue;
                }
                for &(y, p) in self.successors(t, a) {
                    if dense[y] == 0.0 {
                        touched.push(y);
                    }
                    dense[y] += pa * p;
                }
            }
            touched.sort_unstable();
            rows.push(touched.iter().map(|&y| (y, dense[y])).collect());
            for &y in &touched {
                dense[y] = 0.0;
            }
            touched.clear();
        }
        rows
    }

    /// Occupancy induced by a stationary joint policy given per pair as
    /// `probs[t * A + a] = π(a | s_t)`.
    pub fn occupancy_from_action_probs(&self, probs: &[f64]) -> Result<OccupancyVector> {
        if probs.len() != self.pair_count() {
            return validation("policy table does not match the occupancy index");
        }
        let Some(init) = self.initial else {
            return Ok(self.zeros());
        };
        let mut b = vec![0.0; self.transient_count()];
        b[init] = 1.0;
        let mass = solve_transient(&self.policy_matrix(probs), &b, true)?;
        let a_n = self.joint_action_count;
        let values = probs
            .iter()
            .enumerate()
            .map(|(k, &p)| (mass[k / a_n] * p).max(0.0))
            .collect();
        Ok(OccupancyVector { values })
    }

    /// Occupancy of the policy that picks every joint action uniformly.
    pub fn uniform_occupancy(&self) -> Result<OccupancyVector> {
        let p = 1.0 / self.joint_action_count as f64;
        self.occupancy_from_action_probs(&vec![p; self.pair_count()])
    }

    /// CSV rows `joint_state_id,joint_action_id,x` for nonzero entries.
    pub fn to_csv(&self, x: &OccupancyVector) -> Result<String> {
        self.check(x)?;
        let mut out = String::from("joint_state_id,joint_action_id,x\n");
        for (k, &v) in x.values.iter().enumerate() {
            if v != 0.0 {
                let s = self.transient[k / self.joint_action_count];
                writeln!(out, "{s},{},{v:e}", k % self.joint_action_count).expect("string write");
            }
        }
        Ok(out)
    }

    pub fn from_csv(&self, text: &str) -> Result<OccupancyVector> {
        let mut x = self.zeros();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("joint_state_id") {
                continue;
            }
            let bad = || Error::Validation(format!("malformed occupancy row {}: {line}", line_no + 1));
            let mut cols = line.split(',');
            let s: usize = cols.next().and_then(|c| c.trim().parse().ok()).ok_or_else(bad)?;
            let a: usize = cols.next().and_then(|c| c.trim().parse().ok()).ok_or_else(bad)?;
            let v: f64 = cols.next().and_then(|c| c.trim().parse().ok()).ok_or_else(bad)?;
            let t = self
                .position(s)
                .ok_or_else(|| Error::Validation(format!("joint state {s} is not transient")))?;
            if a >= self.joint_action_count || v < 0.0 || !v.is_finite() {
                return Err(bad());
            }
            x.values[t * self.joint_action_count + a] = v;
        }
        Ok(x)
    }
}

/// Expected number of transient steps, `Σ x[s, a]`.
pub fn expected_length_of(x: &OccupancyVector) -> f64 {
    x.values.iter().sum()
}

/// `Σ_s Σ_a x[s,a] log(X_s / x[s,a])` for a table stored row-major with
/// `action_count` entries per state, in nats, with `0 log(·/0) = 0`.
pub fn conditional_action_entropy(table: &[f64], action_count: usize) -> Result<f64> {
    if action_count == 0 || table.len() % action_count != 0 {
        return validation("occupancy table is not a whole number of rows");
    }
    let mut h = 0.0;
    for row in table.chunks(action_count) {
        let mass: f64 = row.iter().sum();
        for &v in row {
            if v > 0.0 {
                h += v * (mass / v.max(ENTROPY_FLOOR)).ln();
            }
        }
    }
    Ok(h.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::{JointState, LocalMdp};
    use std::collections::BTreeSet;

    // state 0 loops w.p. 0.5 and moves to target 1 otherwise
    fn self_loop() -> (MarkovGame, ReachAvoidSpec) {
        let m = LocalMdp::new(2, 0, 1, [(0, 0, 0, 0.5), (0, 0, 1, 0.5), (1, 0, 1, 1.0)]).unwrap();
        let g = MarkovGame::new(vec![m]).unwrap();
        let spec = ReachAvoidSpec::new(&g, BTreeSet::from([1]), BTreeSet::new()).unwrap();
        (g, spec)
    }

    #[test]
    fn residual_examples() {
        let (g, spec) = self_loop();
        let model = OccupancyModel::new(&g, &spec).unwrap();
        assert_eq!(model.flow_residual(&model.zeros()).unwrap(), vec![-1.0]);
        let x = OccupancyVector { values: vec![2.0] };
        assert_eq!(model.flow_residual(&x).unwrap(), vec![0.0]);
        assert_eq!(expected_length_of(&x), 2.0);
        assert_eq!(model.success_prob_of(&x).unwrap(), 1.0);
        assert!(model.flow_residual(&OccupancyVector { values: vec![] }).is_err());
        let solved = model.uniform_occupancy().unwrap();
        assert!((solved.values[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn one_step_success() {
        // 0 -> target 1 w.p. 0.6, avoid 2 otherwise
        let m = LocalMdp::new(3, 0, 1, [(0, 0, 1, 0.6), (0, 0, 2, 0.4), (1, 0, 1, 1.0), (2, 0, 2, 1.0)]).unwrap();
        let g = MarkovGame::new(vec![m]).unwrap();
        let spec = ReachAvoidSpec::new(&g, BTreeSet::from([1]), BTreeSet::from([2])).unwrap();
        let model = OccupancyModel::new(&g, &spec).unwrap();
        let x = model.uniform_occupancy().unwrap();
        assert!((model.success_prob_of(&x).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(expected_length_of(&x), 1.0);
        assert_eq!(model.success_prob_of(&model.zeros()).unwrap(), 0.0);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(conditional_action_entropy(&[1.0, 0.0, 0.0, 3.0], 2).unwrap(), 0.0);
        let h = conditional_action_entropy(&[0.5, 0.5], 2).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
        let h = conditional_action_entropy(&[2.0, 2.0], 2).unwrap();
        assert!((h - 4.0 * std::f64::consts::LN_2).abs() < 1e-14);
        assert!(conditional_action_entropy(&[1.0, 2.0, 3.0], 2).is_err());
    }

    /// Two single-state agents with two actions each; the joint state is
    /// transient and every action reaches the target w.p. 1.
    fn coin_pair() -> (MarkovGame, ReachAvoidSpec) {
        let m = LocalMdp::new(2, 0, 2, [(0, 0, 1, 1.0), (0, 1, 1, 1.0), (1, 0, 1, 1.0), (1, 1, 1, 1.0)]).unwrap();
        let g = MarkovGame::new(vec![m.clone(), m]).unwrap();
        let spec = ReachAvoidSpec::from_tuples(&g, &[JointState(vec![1, 1])], &[]).unwrap();
        (g, spec)
    }

    #[test]
    fn correlation_examples() {
        let (g, spec) = coin_pair();
        let model = OccupancyModel::new(&g, &spec).unwrap();
        let t = model.position(0).unwrap();
        let pair = |a: usize| t * 4 + a;
        let mut x = model.zeros();
        for a in 0..4 {
            x.values[pair(a)] = 0.25;
        }
        assert!(model.surrogate_total_correlation(&x).unwrap().abs() < 1e-12);
        let m0 = model.marginal_occupancy(&x, 0).unwrap();
        assert_eq!((m0.get(0, 0), m0.get(0, 1)), (0.5, 0.5));
        for g in model.grad_sum_local_entropies(&x).unwrap() {
            assert!((g - 2.0 * std::f64::consts::LN_2).abs() < 1e-14);
        }

        let mut x = model.zeros();
        // joint actions (0,0) and (1,1)
        x.values[pair(0)] = 0.5;
        x.values[pair(3)] = 0.5;
        let c = model.surrogate_total_correlation(&x).unwrap();
        assert!((c - std::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn csv_round_trip() {
        let (g, spec) = coin_pair();
        let model = OccupancyModel::new(&g, &spec).unwrap();
        let x = model.uniform_occupancy().unwrap();
        let back = model.from_csv(&model.to_csv(&x).unwrap()).unwrap();
        assert_eq!(back, x);
        assert!(model.from_csv("0,9,1.0").is_err());
    }
}
