#![allow(dead_code)]

use std::collections::BTreeSet;

use coop_privacy::game_model::{LocalMdp, MarkovGame, ReachAvoidSpec};
use coop_privacy::occupancy::{OccupancyModel, OccupancyVector};
use coop_privacy::privacy::{build_mechanism, true_transition_prob, MechanismTable, PrivacyParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random MDP with `2..=max_states` states and one or two actions. The
/// initial state always has at least two feasible successors.
pub fn random_mdp(seed: u64, max_states: usize) -> LocalMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_states);
    let actions = rng.gen_range(1..=2);
    let init = rng.gen_range(0..n);
    let mut entries = Vec::new();
    for s in 0..n {
        for a in 0..actions {
            let mut support: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.4)).collect();
            if s == init && a == 0 {
                while support.len() < 2 {
                    let y = rng.gen_range(0..n);
                    if !support.contains(&y) {
                        support.push(y);
                    }
                }
            }
            if support.is_empty() {
                support.push(rng.gen_range(0..n));
            }
            let weights: Vec<f64> = support.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for (&y, w) in support.iter().zip(&weights) {
                entries.push((s, a, y, w / total));
            }
        }
    }
    LocalMdp::new(n, init, actions, entries).unwrap()
}

/// The calibrated mechanism with `τ` doubled (capped at 0.999) wherever the
/// previous state has a choice of successors.
pub fn corrupted_mechanism(mdp: &LocalMdp, params: &PrivacyParams) -> MechanismTable {
    let tau = (0..mdp.state_count())
        .map(|s| {
            let rho = mdp.out_degree(s).unwrap();
            let t = true_transition_prob(rho, params.epsilon, params.k).unwrap();
            if rho > 1 {
                (2.0 * t).min(0.999)
            } else {
                t
            }
        })
        .collect();
    MechanismTable::with_true_transition_probs(mdp, tau).unwrap()
}

/// `build_mechanism` shortcut for tests.
pub fn mechanism(mdp: &LocalMdp, epsilon: f64, k: u32) -> MechanismTable {
    build_mechanism(mdp, &PrivacyParams::new(epsilon, k).unwrap()).unwrap()
}

/// Two or three agents on random three-state MDPs, a random target joint
/// state and possibly one avoid state. Retries until the initial state is
/// transient.
pub fn random_game(seed: u64) -> (MarkovGame, ReachAvoidSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n_agents = rng.gen_range(2..=3);
        let agents: Vec<LocalMdp> = (0..n_agents).map(|_| random_mdp(rng.gen(), 3)).collect();
        let game = MarkovGame::new(agents).unwrap();
        let n = game.joint_state_count();
        let target: BTreeSet<usize> = [rng.gen_range(0..n)].into();
        let mut avoid = BTreeSet::new();
        if rng.gen_bool(0.5) {
            let a = rng.gen_range(0..n);
            if !target.contains(&a) {
                avoid.insert(a);
            }
        }
        let spec = ReachAvoidSpec::new(&game, target, avoid).unwrap();
        if spec.is_transient(game.initial_state_id()) {
            return (game, spec);
        }
    }
}

/// Random full-support action probabilities, `A` entries per transient state.
pub fn random_action_probs(seed: u64, transient: usize, actions: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Vec::with_capacity(transient * actions);
    for _ in 0..transient {
        let row: Vec<f64> = (0..actions).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = row.iter().sum();
        probs.extend(row.iter().map(|p| p / total));
    }
    probs
}

/// Occupancy of a policy where agent i picks `a^i` with a probability that
/// depends on its own local state only.
pub fn decoupled_occupancy(model: &OccupancyModel, seed: u64) -> OccupancyVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let local: Vec<Vec<f64>> = (0..model.n_agents())
        .map(|i| {
            let (ns, na) = (model.local_state_count(i), model.local_action_count(i));
            let mut table = Vec::with_capacity(ns * na);
            for _ in 0..ns {
                let row: Vec<f64> = (0..na).map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = row.iter().sum();
                table.extend(row.iter().map(|p| p / total));
            }
            table
        })
        .collect();
    let a_n = model.joint_action_count();
    let mut probs = vec![0.0; model.pair_count()];
    for t in 0..model.transient_count() {
        for a in 0..a_n {
            probs[t * a_n + a] = (0..model.n_agents())
                .map(|i| local[i][model.local_state(t, i) * model.local_action_count(i) + model.local_action(a, i)])
                .product();
        }
    }
    model.occupancy_from_action_probs(&probs).unwrap()
}
