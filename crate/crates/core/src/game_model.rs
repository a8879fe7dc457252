//! Local MDPs, their product Markov game and reach-avoid specifications.
//!
//! Transitions are stored sparsely per `(state, action)` pair. Joint states
//! and joint actions are never materialised as tuples unless asked for; they
//! are addressed through a row-major mixed-radix index in which agent 0 is
//! the most significant digit.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Tolerance used when validating that a transition distribution sums to one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Upper bound on `|joint states| * |joint actions|` for full enumeration.
pub const MAX_JOINT_PAIRS: usize = 100_000;

/// Sparse probability distribution, sorted by outcome with no zero entries.
pub type SparseDist = Vec<(usize, f64)>;

/// One agent's finite MDP (states, initial state, actions, transitions).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMdp {
    state_count: usize,
    initial_state: usize,
    action_count: usize,
    transitions: Vec<SparseDist>,
    successors: Vec<Vec<usize>>,
    pub state_labels: Option<Vec<String>>,
    pub action_labels: Option<Vec<String>>,
}

impl LocalMdp {
    /// Builds an MDP from `(state, action, next, prob)` entries.
    ///
    /// Every `(state, action)` pair must be given a distribution. Duplicate
    /// entries are summed. Distributions whose mass is within
    /// [`NORMALIZATION_TOL`] of one are renormalised, anything else is rejected.
    pub fn new(
        state_count: usize,
        initial_state: usize,
        action_count: usize,
        entries: impl IntoIterator<Item = (usize, usize, usize, f64)>,
    ) -> Result<Self> {
        if state_count == 0 || action_count == 0 {
            return validation("an MDP needs at least one state and one action");
        }
        if initial_state >= state_count {
            return validation(format!(
                "initial state {initial_state} out of range for {state_count} states"
            ));
        }
        let mut dense = vec![Vec::<(usize, f64)>::new(); state_count * action_count];
        for (s, a, y, p) in entries {
            if s >= state_count || y >= state_count || a >= action_count {
                return Err(Error::Index(format!("transition entry ({s}, {a}, {y})")));
            }
            if !p.is_finite() || p < 0.0 {
                return validation(format!("probability {p} for ({s}, {a}, {y}) is negative"));
            }
            if p > 1.0 + NORMALIZATION_TOL {
                return validation(format!("probability {p} for ({s}, {a}, {y}) exceeds one"));
            }
            let row = &mut dense[s * action_count + a];
            match row.iter_mut().find(|(t, _)| *t == y) {
                Some(slot) => slot.1 += p,
                None => row.push((y, p)),
            }
        }
        let mut transitions = Vec::with_capacity(dense.len());
        for (idx, mut row) in dense.into_iter().enumerate() {
            row.retain(|&(_, p)| p > 0.0);
            row.sort_by_key(|&(y, _)| y);
            let total: f64 = row.iter().map(|&(_, p)| p).sum();
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return validation(format!(
                    "distribution for state {} action {} sums to {total}",
                    idx / action_count,
                    idx % action_count
                ));
            }
            for entry in row.iter_mut() {
                entry.1 /= total;
            }
            transitions.push(row);
        }
        let successors = (0..state_count)
            .map(|s| {
                let set: BTreeSet<usize> = (0..action_count)
                    .flat_map(|a| transitions[s * action_count + a].iter().map(|&(y, _)| y))
                    .collect();
                set.into_iter().collect()
            })
            .collect();
        Ok(Self {
            state_count,
            initial_state,
            action_count,
            transitions,
            successors,
            state_labels: None,
            action_labels: None,
        })
    }

    pub fn with_labels(mut self, states: Vec<String>, actions: Vec<String>) -> Result<Self> {
        if states.len() != self.state_count || actions.len() != self.action_count {
            return validation("label count does not match the model");
        }
        self.state_labels = Some(states);
        self.action_labels = Some(actions);
        Ok(self)
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s < self.state_count {
            Ok(())
        } else {
            Err(Error::Index(format!("state {s} of {}", self.state_count)))
        }
    }

    /// The distribution `T(s, a, ·)`.
    pub fn transition(&self, s: usize, a: usize) -> Result<&[(usize, f64)]> {
        self.check_state(s)?;
        if a >= self.action_count {
            return Err(Error::Index(format!("action {a} of {}", self.action_count)));
        }
        Ok(&self.transitions[s * self.action_count + a])
    }

    /// Probability `T(s, a, y)`, zero for unlisted successors.
    pub fn transition_prob(&self, s: usize, a: usize, y: usize) -> Result<f64> {
        Ok(self
            .transition(s, a)?
            .iter()
            .find(|&&(t, _)| t == y)
            .map_or(0.0, |&(_, p)| p))
    }

    /// States reachable from `s` in one step under some action, ascending.
    pub fn feasible_successors(&self, s: usize) -> Result<&[usize]> {
        self.check_state(s)?;
        Ok(&self.successors[s])
    }

    /// Number of feasible successors of `s`.
    pub fn out_degree(&self, s: usize) -> Result<usize> {
        Ok(self.feasible_successors(s)?.len())
    }

    /// One iff `s` is a feasible successor of `y`.
    ///
    /// The argument order follows the mechanism construction: the first
    /// argument is the candidate next state, the second the current one.
    pub fn feasibility_indicator(&self, s: usize, y: usize) -> Result<u8> {
        self.check_state(s)?;
        Ok(u8::from(self.feasible_successors(y)?.binary_search(&s).is_ok()))
    }

    pub(crate) fn successors_unchecked(&self, s: usize) -> &[usize] {
        &self.successors[s]
    }

    pub(crate) fn transition_unchecked(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.action_count + a]
    }

    /// All entries as `(state, action, next, prob)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.transitions.iter().enumerate().flat_map(move |(idx, row)| {
            let (s, a) = (idx / self.action_count, idx % self.action_count);
            row.iter().map(move |&(y, p)| (s, a, y, p))
        })
    }
}

/// A tuple of local states, one per agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointState(pub Vec<usize>);

/// A tuple of local actions, one per agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointAction(pub Vec<usize>);

impl JointState {
    /// Teammates' components with agent `i` removed.
    pub fn others(&self, i: usize) -> Vec<usize> {
        project_others(&self.0, i)
    }
}

impl JointAction {
    pub fn others(&self, i: usize) -> Vec<usize> {
        project_others(&self.0, i)
    }
}

fn project_others(v: &[usize], i: usize) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &x)| x)
        .collect()
}

/// Mixed-radix bijection between tuples and dense integers.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedRadix {
    radix: Vec<usize>,
    size: usize,
}

impl MixedRadix {
    pub fn new(radix: Vec<usize>) -> Result<Self> {
        let mut size: usize = 1;
        for &r in &radix {
            size = size
                .checked_mul(r)
                .ok_or_else(|| Error::Capacity("joint index overflows usize".into()))?;
        }
        Ok(Self { radix, size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radix(&self) -> &[usize] {
        &self.radix
    }

    pub fn encode(&self, digits: &[usize]) -> Result<usize> {
        if digits.len() != self.radix.len() {
            return Err(Error::Index(format!(
                "tuple of length {} for {} agents",
                digits.len(),
                self.radix.len()
            )));
        }
        let mut id = 0;
        for (i, (&d, &r)) in digits.iter().zip(&self.radix).enumerate() {
            if d >= r {
                return Err(Error::Index(format!("component {i} = {d} not below {r}")));
            }
            id = id * r + d;
        }
        Ok(id)
    }

    pub fn decode(&self, mut id: usize) -> Result<Vec<usize>> {
        if id >= self.size {
            return Err(Error::Index(format!("joint index {id} of {}", self.size)));
        }
        let mut digits = vec![0; self.radix.len()];
        for i in (0..self.radix.len()).rev() {
            digits[i] = id % self.radix[i];
            id /= self.radix[i];
        }
        Ok(digits)
    }

    /// Digit `i` of `id` without allocating.
    pub fn digit(&self, id: usize, i: usize) -> usize {
        let stride: usize = self.radix[i + 1..].iter().product();
        (id / stride) % self.radix[i]
    }
}

/// Product of local MDPs with independent transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGame {
    agents: Vec<LocalMdp>,
    states: MixedRadix,
    actions: MixedRadix,
}

impl MarkovGame {
    pub fn new(agents: Vec<LocalMdp>) -> Result<Self> {
        if agents.is_empty() {
            return validation("a game needs at least one agent");
        }
        let states = MixedRadix::new(agents.iter().map(LocalMdp::state_count).collect())?;
        let actions = MixedRadix::new(agents.iter().map(LocalMdp::action_count).collect())?;
        Ok(Self {
            agents,
            states,
            actions,
        })
    }

    pub fn agents(&self) -> &[LocalMdp] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &LocalMdp {
        &self.agents[i]
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn joint_state_count(&self) -> usize {
        self.states.size()
    }

    pub fn joint_action_count(&self) -> usize {
        self.actions.size()
    }

    pub fn state_index(&self) -> &MixedRadix {
        &self.states
    }

    pub fn action_index(&self) -> &MixedRadix {
        &self.actions
    }

    pub fn encode_state(&self, s: &JointState) -> Result<usize> {
        self.states.encode(&s.0)
    }

    pub fn decode_state(&self, id: usize) -> Result<JointState> {
        self.states.decode(id).map(JointState)
    }

    pub fn encode_action(&self, a: &JointAction) -> Result<usize> {
        self.actions.encode(&a.0)
    }

    pub fn decode_action(&self, id: usize) -> Result<JointAction> {
        self.actions.decode(id).map(JointAction)
    }

    pub fn initial_state(&self) -> JointState {
        JointState(self.agents.iter().map(LocalMdp::initial_state).collect())
    }

    pub fn initial_state_id(&self) -> usize {
        self.encode_state(&self.initial_state())
            .expect("initial states are valid by construction")
    }

    /// Errors unless the joint state-action space fits [`MAX_JOINT_PAIRS`].
    pub fn check_enumerable(&self) -> Result<()> {
        let pairs = self
            .joint_state_count()
            .checked_mul(self.joint_action_count())
            .unwrap_or(usize::MAX);
        if pairs > MAX_JOINT_PAIRS {
            return Err(Error::Capacity(format!(
                "{pairs} joint state-action pairs exceed the enumeration guard of {MAX_JOINT_PAIRS}"
            )));
        }
        Ok(())
    }

    /// Product distribution over successor joint states.
    pub fn joint_transition(&self, s: &JointState, a: &JointAction) -> Result<Vec<(JointState, f64)>> {
        let s_id = self.encode_state(s)?;
        let a_id = self.encode_action(a)?;
        self.joint_transition_ids(s_id, a_id)?
            .into_iter()
            .map(|(y, p)| Ok((self.decode_state(y)?, p)))
            .collect()
    }

    /// Same as [`MarkovGame::joint_transition`] but on dense indices.
    pub fn joint_transition_ids(&self, s: usize, a: usize) -> Result<SparseDist> {
        let local_s = self.states.decode(s)?;
        let local_a = self.actions.decode(a)?;
        let mut out: SparseDist = vec![(0, 1.0)];
        for (i, mdp) in self.agents.iter().enumerate() {
            let local = mdp.transition_unchecked(local_s[i], local_a[i]);
            let radix = self.states.radix()[i];
            let mut next = Vec::with_capacity(out.len() * local.len());
            for &(prefix, p) in &out {
                for &(y, q) in local {
                    next.push((prefix * radix + y, p * q));
                }
            }
            out = next;
        }
        Ok(out)
    }

    /// Joint states reachable in one step from `s` under some joint action.
    fn joint_successors(&self, s: usize) -> Vec<usize> {
        let local_s = self.states.decode(s).expect("valid id");
        let sets: Vec<&[usize]> = self
            .agents
            .iter()
            .zip(&local_s)
            .map(|(m, &si)| m.successors_unchecked(si))
            .collect();
        cartesian_ids(&sets, self.states.radix())
    }

    /// Reverse of the one-step feasibility relation.
    fn joint_predecessors(&self, y: usize, local_preds: &[Vec<Vec<usize>>]) -> Vec<usize> {
        let local_y = self.states.decode(y).expect("valid id");
        let sets: Vec<&[usize]> = local_preds
            .iter()
            .zip(&local_y)
            .map(|(preds, &yi)| preds[yi].as_slice())
            .collect();
        cartesian_ids(&sets, self.states.radix())
    }
}

fn cartesian_ids(sets: &[&[usize]], radix: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize];
    for (set, &r) in sets.iter().zip(radix) {
        out = out
            .iter()
            .flat_map(|&prefix| set.iter().map(move |&d| prefix * r + d))
            .collect();
    }
    out
}

/// Classification of a joint state with respect to a reach-avoid objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateClass {
    Transient,
    Target,
    /// Avoid states and states that cannot reach the target.
    Dead,
}

/// Target, avoid and dead-end sets over joint state ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachAvoidSpec {
    pub target_set: BTreeSet<usize>,
    pub avoid_set: BTreeSet<usize>,
    pub dead_set: BTreeSet<usize>,
    classes: Vec<StateClass>,
}

impl ReachAvoidSpec {
    /// Validates the sets and computes the dead-end set.
    pub fn new(game: &MarkovGame, target: BTreeSet<usize>, avoid: BTreeSet<usize>) -> Result<Self> {
        let dead_set = compute_dead_ends(game, &target, &avoid)?;
        let mut classes = vec![StateClass::Transient; game.joint_state_count()];
        for &s in &target {
            classes[s] = StateClass::Target;
        }
        for &s in &dead_set {
            classes[s] = StateClass::Dead;
        }
        Ok(Self {
            target_set: target,
            avoid_set: avoid,
            dead_set,
            classes,
        })
    }

    pub fn from_tuples(game: &MarkovGame, target: &[JointState], avoid: &[JointState]) -> Result<Self> {
        let encode = |v: &[JointState]| -> Result<BTreeSet<usize>> {
            v.iter().map(|s| game.encode_state(s)).collect()
        };
        Self::new(game, encode(target)?, encode(avoid)?)
    }

    pub fn class(&self, joint_state: usize) -> StateClass {
        self.classes[joint_state]
    }

    pub fn is_transient(&self, joint_state: usize) -> bool {
        self.classes[joint_state] == StateClass::Transient
    }
}

/// Joint states from which no path avoiding `avoid` reaches `target`.
///
/// Backward breadth-first search from the target over the positive-probability
/// edge relation, never expanding avoid states; the result is the complement.
pub fn compute_dead_ends(
    game: &MarkovGame,
    target: &BTreeSet<usize>,
    avoid: &BTreeSet<usize>,
) -> Result<BTreeSet<usize>> {
    game.check_enumerable()?;
    let n = game.joint_state_count();
    if let Some(&bad) = target.iter().chain(avoid).find(|&&s| s >= n) {
        return Err(Error::Index(format!("joint state {bad} of {n}")));
    }
    if let Some(s) = target.intersection(avoid).next() {
        return validation(format!("joint state {s} is both target and avoid"));
    }
    let local_preds: Vec<Vec<Vec<usize>>> = game
        .agents()
        .iter()
        .map(|m| {
            let mut preds = vec![Vec::new(); m.state_count()];
            for s in 0..m.state_count() {
                for &y in m.successors_unchecked(s) {
                    preds[y].push(s);
                }
            }
            preds
        })
        .collect();
    let mut can_reach = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &t in target {
        can_reach[t] = true;
        queue.push_back(t);
    }
    while let Some(y) = queue.pop_front() {
        for p in game.joint_predecessors(y, &local_preds) {
            if !can_reach[p] && !avoid.contains(&p) {
                can_reach[p] = true;
                queue.push_back(p);
            }
        }
    }
    Ok((0..n).filter(|&s| !can_reach[s]).collect())
}

/// Forward check that `s` has a positive-probability path to the target
/// that avoids the avoid set. Used to cross-check [`compute_dead_ends`].
pub fn reaches_target(game: &MarkovGame, spec: &ReachAvoidSpec, s: usize) -> bool {
    let mut seen = vec![false; game.joint_state_count()];
    let mut queue = VecDeque::from([s]);
    seen[s] = true;
    while let Some(u) = queue.pop_front() {
        if spec.target_set.contains(&u) {
            return true;
        }
        if spec.avoid_set.contains(&u) {
            continue;
        }
        for y in game.joint_successors(u) {
            if !seen[y] {
                seen[y] = true;
                queue.push_back(y);
            }
        }
    }
    false
}

/// On-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub agents: Vec<AgentFile>,
    pub target: Vec<Vec<usize>>,
    pub avoid: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AgentFile {
    pub states: usize,
    pub initial: usize,
    pub actions: usize,
    /// `[state, action, next, prob]` rows.
    pub transitions: Vec<(usize, usize, usize, f64)>,
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<(MarkovGame, ReachAvoidSpec)> {
        let agents = self
            .agents
            .iter()
            .map(|a| LocalMdp::new(a.states, a.initial, a.actions, a.transitions.iter().copied()))
            .collect::<Result<Vec<_>>>()?;
        let game = MarkovGame::new(agents)?;
        let to_states = |v: &[Vec<usize>]| v.iter().cloned().map(JointState).collect::<Vec<_>>();
        let spec = ReachAvoidSpec::from_tuples(&game, &to_states(&self.target), &to_states(&self.avoid))?;
        Ok((game, spec))
    }

    pub fn from_model(game: &MarkovGame, spec: &ReachAvoidSpec) -> Self {
        let decode = |set: &BTreeSet<usize>| -> Vec<Vec<usize>> {
            set.iter()
                .map(|&s| game.state_index().decode(s).expect("valid id"))
                .collect()
        };
        Self {
            agents: game
                .agents()
                .iter()
                .map(|m| AgentFile {
                    states: m.state_count(),
                    initial: m.initial_state(),
                    actions: m.action_count(),
                    transitions: m.entries().collect(),
                })
                .collect(),
            target: decode(&spec.target_set),
            avoid: decode(&spec.avoid_set),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> LocalMdp {
        // single action, s -> s+1, last state absorbing
        let entries = (0..n).map(move |s| (s, 0, (s + 1).min(n - 1), 1.0));
        LocalMdp::new(n, 0, 1, entries).unwrap()
    }

    fn splitter(p: f64) -> LocalMdp {
        LocalMdp::new(2, 0, 1, [(0, 0, 0, p), (0, 0, 1, 1.0 - p), (1, 0, 1, 1.0)]).unwrap()
    }

    #[test]
    fn rejects_unnormalised_rows() {
        let err = LocalMdp::new(2, 0, 1, [(0, 0, 0, 0.5), (1, 0, 1, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = LocalMdp::new(2, 0, 1, [(0, 0, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "missing row for state 1");
        let err = LocalMdp::new(2, 0, 1, [(0, 0, 0, -0.1), (0, 0, 1, 1.1), (1, 0, 1, 1.0)]);
        assert!(err.is_err());
        assert!(LocalMdp::new(2, 2, 1, [(0, 0, 0, 1.0), (1, 0, 1, 1.0)]).is_err());
    }

    #[test]
    fn renormalises_within_tolerance() {
        let m = LocalMdp::new(2, 0, 1, [(0, 0, 0, 0.5), (0, 0, 1, 0.5 + 5e-13), (1, 0, 1, 1.0)]).unwrap();
        let total: f64 = m.transition(0, 0).unwrap().iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn deterministic_product_has_single_successor() {
        let g = MarkovGame::new(vec![chain(3), chain(3)]).unwrap();
        let out = g
            .joint_transition(&JointState(vec![0, 1]), &JointAction(vec![0, 0]))
            .unwrap();
        assert_eq!(out, vec![(JointState(vec![1, 2]), 1.0)]);
    }

    #[test]
    fn product_of_splits() {
        let g = MarkovGame::new(vec![splitter(0.9), splitter(0.5)]).unwrap();
        let out = g
            .joint_transition(&JointState(vec![0, 0]), &JointAction(vec![0, 0]))
            .unwrap();
        let mut probs: Vec<f64> = out.iter().map(|e| e.1).collect();
        probs.sort_by(f64::total_cmp);
        let expected = [0.05, 0.05, 0.45, 0.45];
        for (p, e) in probs.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_joint_indices() {
        let g = MarkovGame::new(vec![chain(3), chain(2)]).unwrap();
        assert!(matches!(
            g.joint_transition(&JointState(vec![0, 2]), &JointAction(vec![0, 0])),
            Err(Error::Index(_))
        ));
        assert!(g.decode_state(6).is_err());
    }

    #[test]
    fn index_round_trip() {
        let g = MarkovGame::new(vec![chain(3), chain(4), chain(2)]).unwrap();
        for id in 0..g.joint_state_count() {
            let s = g.decode_state(id).unwrap();
            assert_eq!(g.encode_state(&s).unwrap(), id);
            for (i, &d) in s.0.iter().enumerate() {
                assert_eq!(g.state_index().digit(id, i), d);
            }
        }
        assert_eq!(JointState(vec![4, 5, 6]).others(1), vec![4, 6]);
    }

    #[test]
    fn feasibility_queries() {
        let absorbing = LocalMdp::new(1, 0, 2, [(0, 0, 0, 1.0), (0, 1, 0, 1.0)]).unwrap();
        assert_eq!(absorbing.feasible_successors(0).unwrap(), &[0]);
        assert_eq!(absorbing.out_degree(0).unwrap(), 1);
        assert_eq!(absorbing.feasibility_indicator(0, 0).unwrap(), 1);
        let c = chain(3);
        assert_eq!(c.feasibility_indicator(1, 0).unwrap(), 1);
        assert_eq!(c.feasibility_indicator(0, 1).unwrap(), 0);
        assert!(c.feasible_successors(3).is_err());
    }

    #[test]
    fn chain_dead_ends() {
        let g = MarkovGame::new(vec![chain(3)]).unwrap();
        let spec = ReachAvoidSpec::new(&g, BTreeSet::from([2]), BTreeSet::from([1])).unwrap();
        assert_eq!(spec.dead_set, BTreeSet::from([0, 1]));
    }

    #[test]
    fn fully_connected_dead_set_is_avoid() {
        let entries = (0..3).flat_map(|s| (0..3).map(move |y| (s, 0, y, 1.0 / 3.0)));
        let m = LocalMdp::new(3, 0, 1, entries).unwrap();
        let g = MarkovGame::new(vec![m.clone(), m]).unwrap();
        let avoid = BTreeSet::from([0, 4]);
        let spec = ReachAvoidSpec::new(&g, BTreeSet::from([8]), avoid.clone()).unwrap();
        assert_eq!(spec.dead_set, avoid);
    }

    #[test]
    fn overlapping_target_and_avoid_rejected() {
        let g = MarkovGame::new(vec![chain(3)]).unwrap();
        let err = ReachAvoidSpec::new(&g, BTreeSet::from([2]), BTreeSet::from([2])).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn model_file_round_trip() {
        let g = MarkovGame::new(vec![splitter(0.3), chain(2)]).unwrap();
        let spec = ReachAvoidSpec::from_tuples(&g, &[JointState(vec![1, 1])], &[JointState(vec![0, 1])]).unwrap();
        let file = ModelFile::from_model(&g, &spec);
        let text = serde_json::to_string(&file).unwrap();
        let (g2, spec2) = ModelFile::from_json(&text).unwrap().build().unwrap();
        assert_eq!(g, g2);
        assert_eq!(spec, spec2);
    }
}
