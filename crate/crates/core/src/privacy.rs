//! Online word-differentially-private mechanism over symbolic state
//! trajectories, and exhaustive certification on small instances.
//!
//! The mechanism emits a private state conditioned on the true current state
//! and on its own previous output. Outputs are always feasible successors of
//! the previous output, so private trajectories remain dynamically feasible.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::game_model::LocalMdp;

/// Size guard on `|S|^T` for trajectory enumeration.
pub const MAX_ENUMERATION: usize = 1_000_000;

/// Slack allowed on the certified log-ratio.
pub const DP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    /// Adjacency parameter (maximum Hamming distance between adjacent words).
    pub k: u32,
    /// When false, agents communicate their true states.
    pub enabled: bool,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, k: u32) -> Result<Self> {
        let params = Self {
            epsilon,
            k,
            enabled: true,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn truthful() -> Self {
        Self {
            epsilon: f64::INFINITY,
            k: 1,
            enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if !(self.epsilon > 0.0) {
            return validation(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.k == 0 {
            return validation("adjacency parameter k must be at least 1");
        }
        Ok(())
    }
}

/// Probability that the mechanism reports the true state when that state is
/// feasible: `1 / ((rho - 1) exp(-epsilon / k) + 1)`.
pub fn true_transition_prob(rho: usize, epsilon: f64, k: u32) -> Result<f64> {
    if rho == 0 {
        return validation("out-degree must be at least 1");
    }
    if !(epsilon > 0.0) {
        return validation(format!("epsilon must be positive, got {epsilon}"));
    }
    if k == 0 {
        return validation("adjacency parameter k must be at least 1");
    }
    let decay = (-epsilon / f64::from(k)).exp();
    Ok(1.0 / ((rho as f64 - 1.0) * decay + 1.0))
}

/// Conditional output distributions of one agent's mechanism, keyed by
/// `(true state, previous private state)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismTable {
    state_count: usize,
    tau: Vec<f64>,
    entries: Vec<Vec<(usize, f64)>>,
}

/// Builds the mechanism for `mdp` with the privacy-calibrated true-transition
/// probability at every state.
pub fn build_mechanism(mdp: &LocalMdp, params: &PrivacyParams) -> Result<MechanismTable> {
    if !params.enabled {
        return validation("cannot build a mechanism for truthful communication");
    }
    params.validate()?;
    let tau = (0..mdp.state_count())
        .map(|s| true_transition_prob(mdp.out_degree(s)?, params.epsilon, params.k))
        .collect::<Result<Vec<_>>>()?;
    MechanismTable::with_true_transition_probs(mdp, tau)
}

impl MechanismTable {
    /// Builds the table from an explicit true-transition probability per
    /// previous private state. [`build_mechanism`] is the calibrated case;
    /// anything else (for instance a deliberately perturbed `tau`) gives no
    /// privacy guarantee.
    pub fn with_true_transition_probs(mdp: &LocalMdp, tau: Vec<f64>) -> Result<Self> {
        let n = mdp.state_count();
        if tau.len() != n {
            return validation(format!("expected {n} true-transition probabilities"));
        }
        if let Some(t) = tau.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return validation(format!("true-transition probability {t} outside [0, 1]"));
        }
        let mut entries = Vec::with_capacity(n * n);
        for s_t in 0..n {
            for prev in 0..n {
                let feasible = mdp.successors_unchecked(prev);
                let rho = feasible.len();
                let true_feasible = feasible.binary_search(&s_t).is_ok();
                let beta_true = if true_feasible { 1.0 } else { 0.0 };
                let mut dist = Vec::with_capacity(rho);
                for &out in feasible {
                    let p = if out == s_t {
                        tau[prev]
                    } else {
                        let denom = rho as f64 - beta_true;
                        if denom <= 0.0 {
                            return Err(Error::Contract(format!(
                                "zero denominator at true {s_t}, previous {prev}"
                            )));
                        }
                        (1.0 - tau[prev] * beta_true) / denom
                    };
                    if p > 0.0 {
                        dist.push((out, p));
                    }
                }
                let total: f64 = dist.iter().map(|e| e.1).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Contract(format!(
                        "mechanism row ({s_t}, {prev}) sums to {total}"
                    )));
                }
                for e in dist.iter_mut() {
                    e.1 /= total;
                }
                entries.push(dist);
            }
        }
        Ok(Self {
            state_count: n,
            tau,
            entries,
        })
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    /// True-transition probability cached for previous private state `prev`.
    pub fn tau(&self, prev: usize) -> f64 {
        self.tau[prev]
    }

    /// `mu(· | s_t, prev)` as a sparse distribution sorted by output state.
    pub fn distribution(&self, s_t: usize, prev: usize) -> Result<&[(usize, f64)]> {
        if s_t >= self.state_count || prev >= self.state_count {
            return Err(Error::Lookup(format!("no mechanism entry for ({s_t}, {prev})")));
        }
        Ok(&self.entries[s_t * self.state_count + prev])
    }

    /// `mu(out | s_t, prev)`.
    pub fn prob(&self, out: usize, s_t: usize, prev: usize) -> Result<f64> {
        Ok(self
            .distribution(s_t, prev)?
            .iter()
            .find(|e| e.0 == out)
            .map_or(0.0, |e| e.1))
    }

    /// Draws a private state by inverse CDF over the sorted support.
    pub fn sample<R: Rng + ?Sized>(&self, s_t: usize, prev: usize, rng: &mut R) -> Result<usize> {
        Ok(sample_sparse(self.distribution(s_t, prev)?, rng))
    }

    pub fn to_export(&self, agent: usize) -> MechanismExport {
        let n = self.state_count;
        let entries = self
            .entries
            .iter()
            .enumerate()
            .flat_map(|(idx, dist)| dist.iter().map(move |&(out, p)| (idx / n, idx % n, out, p)))
            .collect();
        MechanismExport { agent, entries }
    }
}

/// JSON form of a mechanism table: `[s_t, prev, output, prob]` rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MechanismExport {
    pub agent: usize,
    pub entries: Vec<(usize, usize, usize, f64)>,
}

/// Draws `s~_t ~ mu(· | s_t, prev)` from an externally supplied generator.
pub fn sample_private_state<R: Rng + ?Sized>(
    table: &MechanismTable,
    s_t: usize,
    prev: usize,
    rng: &mut R,
) -> Result<usize> {
    table.sample(s_t, prev, rng)
}

pub(crate) fn sample_sparse<R: Rng + ?Sized>(dist: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(out, p) in dist {
        acc += p;
        if u < acc {
            return out;
        }
    }
    dist.last().expect("distributions are non-empty").0
}

/// Number of positions at which `v` and `w` differ.
pub fn hamming_distance(v: &[usize], w: &[usize]) -> Result<usize> {
    if v.len() != w.len() {
        return validation(format!("lengths {} and {} differ", v.len(), w.len()));
    }
    Ok(v.iter().zip(w).filter(|(a, b)| a != b).count())
}

fn check_enumeration(state_count: usize, len: usize) -> Result<()> {
    let mut total: usize = 1;
    for _ in 0..len {
        total = total.saturating_mul(state_count);
        if total > MAX_ENUMERATION {
            return Err(Error::Capacity(format!(
                "{state_count}^{len} trajectories exceed the enumeration guard of {MAX_ENUMERATION}"
            )));
        }
    }
    Ok(())
}

/// Exact output distribution of the chained mechanism on `trajectory`,
/// starting from the public `initial_private` state.
pub fn mechanism_trajectory_distribution(
    table: &MechanismTable,
    trajectory: &[usize],
    initial_private: usize,
) -> Result<BTreeMap<Vec<usize>, f64>> {
    check_enumeration(table.state_count(), trajectory.len())?;
    if initial_private >= table.state_count() {
        return Err(Error::Lookup(format!("initial private state {initial_private}")));
    }
    let mut layer: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    for &s_t in trajectory {
        let mut next = Vec::new();
        for (prefix, p) in &layer {
            let prev = prefix.last().copied().unwrap_or(initial_private);
            for &(out, q) in table.distribution(s_t, prev)? {
                let mut word = prefix.clone();
                word.push(out);
                next.push((word, p * q));
            }
        }
        layer = next;
    }
    Ok(layer.into_iter().collect())
}

/// Result of exhaustive word-DP certification.
#[derive(Debug, Clone, PartialEq)]
pub struct DpReport {
    pub epsilon: f64,
    pub k: u32,
    pub horizon: usize,
    pub max_log_ratio: f64,
    pub satisfied: bool,
    /// `(v, w, output)` attaining the maximum ratio.
    pub witness: Option<(Vec<usize>, Vec<usize>, Vec<usize>)>,
    pub pairs_checked: usize,
}

/// All dynamically feasible state words of length `len` whose first state is
/// a feasible successor of `start`.
pub fn feasible_words(mdp: &LocalMdp, start: usize, len: usize) -> Result<Vec<Vec<usize>>> {
    check_enumeration(mdp.state_count(), len)?;
    let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..len {
        layer = layer
            .iter()
            .flat_map(|w| {
                let prev = w.last().copied().unwrap_or(start);
                mdp.successors_unchecked(prev).iter().map(move |&y| {
                    let mut next = w.clone();
                    next.push(y);
                    next
                })
            })
            .collect();
    }
    Ok(layer)
}

/// Certifies word DP for `mdp` by exhaustive enumeration from its initial state.
pub fn verify_word_dp(mdp: &LocalMdp, params: &PrivacyParams, horizon: usize) -> Result<DpReport> {
    let table = build_mechanism(mdp, params)?;
    verify_table_word_dp(mdp, &table, params, horizon)
}

/// Same as [`verify_word_dp`] for an arbitrary table, which lets callers
/// check perturbed mechanisms.
pub fn verify_table_word_dp(
    mdp: &LocalMdp,
    table: &MechanismTable,
    params: &PrivacyParams,
    horizon: usize,
) -> Result<DpReport> {
    params.validate()?;
    if horizon == 0 {
        return validation("trajectory length must be at least 1");
    }
    let start = mdp.initial_state();
    let words = feasible_words(mdp, start, horizon)?;
    let n = mdp.state_count();
    let word_id = |w: &[usize]| w.iter().fold(0usize, |acc, &s| acc * n + s);
    let outputs: Vec<BTreeMap<usize, f64>> = words
        .iter()
        .map(|w| {
            mechanism_trajectory_distribution(table, w, start)
                .map(|d| d.into_iter().map(|(o, p)| (word_id(&o), p)).collect())
        })
        .collect::<Result<_>>()?;

    let mut max_log_ratio = 0.0f64;
    let mut witness = None;
    let mut pairs_checked = 0;
    for (i, v) in words.iter().enumerate() {
        for (j, w) in words.iter().enumerate() {
            if i == j || hamming_distance(v, w)? > params.k as usize {
                continue;
            }
            pairs_checked += 1;
            let (pv, pw) = (&outputs[i], &outputs[j]);
            if pv.len() != pw.len() || pv.keys().zip(pw.keys()).any(|(a, b)| a != b) {
                return Err(Error::Contract(format!(
                    "output supports differ for adjacent inputs {v:?} and {w:?}"
                )));
            }
            for ((&out, &p), &q) in pv.iter().zip(pw.values()) {
                let ratio = (p / q).ln();
                if ratio > max_log_ratio {
                    max_log_ratio = ratio;
                    witness = Some((v.clone(), w.clone(), decode_word(out, n, horizon)));
                }
            }
        }
    }
    Ok(DpReport {
        epsilon: params.epsilon,
        k: params.k,
        horizon,
        max_log_ratio,
        satisfied: max_log_ratio <= params.epsilon + DP_TOLERANCE,
        witness,
        pairs_checked,
    })
}

fn decode_word(mut id: usize, n: usize, len: usize) -> Vec<usize> {
    let mut w = vec![0; len];
    for slot in w.iter_mut().rev() {
        *slot = id % n;
        id /= n;
    }
    w
}

/// Per-agent channel state: the last private state each agent broadcast.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelState {
    pub last_private: Vec<usize>,
    pub t: usize,
}

impl ChannelState {
    /// All agents start from the public initial joint state.
    pub fn new(initial: &[usize]) -> Self {
        Self {
            last_private: initial.to_vec(),
            t: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// States A=0, B=1, C=2, D=3 where B reaches {A, B, C} and not D.
    fn abcd() -> LocalMdp {
        LocalMdp::new(
            4,
            1,
            2,
            [
                (0, 0, 0, 1.0),
                (0, 1, 1, 1.0),
                (1, 0, 0, 0.5),
                (1, 0, 1, 0.5),
                (1, 1, 2, 1.0),
                (2, 0, 2, 1.0),
                (2, 1, 3, 1.0),
                (3, 0, 3, 1.0),
                (3, 1, 3, 1.0),
            ],
        )
        .unwrap()
    }

    fn half_decay() -> PrivacyParams {
        // exp(-epsilon / k) = 0.5
        PrivacyParams::new(std::f64::consts::LN_2, 1).unwrap()
    }

    #[test]
    fn tau_examples() {
        assert_eq!(true_transition_prob(1, 0.3, 2).unwrap(), 1.0);
        let t = true_transition_prob(3, std::f64::consts::LN_2, 1).unwrap();
        assert!((t - 0.5).abs() < 1e-15);
        let t = true_transition_prob(5, 1.0, 3).unwrap();
        assert!((t - 0.258_660).abs() < 1e-5, "{t}");
        assert!(true_transition_prob(3, 0.0, 1).is_err());
        assert!(true_transition_prob(3, 1.0, 0).is_err());
    }

    #[test]
    fn tau_limits_and_monotonicity() {
        for rho in 2..6 {
            let mut last = 0.0;
            for eps in [1e-6, 0.01, 0.1, 1.0, 5.0, 20.0, 60.0] {
                let t = true_transition_prob(rho, eps, 1).unwrap();
                assert!(t > last);
                last = t;
            }
            assert!((true_transition_prob(rho, 1e-9, 1).unwrap() - 1.0 / rho as f64).abs() < 1e-8);
            assert!((true_transition_prob(rho, 60.0, 1).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn three_successor_branches() {
        let table = build_mechanism(&abcd(), &half_decay()).unwrap();
        assert_eq!(table.distribution(0, 1).unwrap(), &[(0, 0.5), (1, 0.25), (2, 0.25)]);
        let d = table.distribution(3, 1).unwrap();
        assert_eq!(d.len(), 3);
        for &(_, p) in d {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_successor_emits_it() {
        let table = build_mechanism(&abcd(), &PrivacyParams::new(0.1, 1).unwrap()).unwrap();
        assert_eq!(table.distribution(3, 3).unwrap(), &[(3, 1.0)]);
        assert_eq!(table.distribution(0, 3).unwrap(), &[(3, 1.0)]);
    }

    #[test]
    fn table_invariants_exhaustive() {
        let mdp = abcd();
        for eps in [0.05, 1.0, 7.0] {
            let table = build_mechanism(&mdp, &PrivacyParams::new(eps, 2).unwrap()).unwrap();
            for s in 0..4 {
                for prev in 0..4 {
                    let d = table.distribution(s, prev).unwrap();
                    let total: f64 = d.iter().map(|e| e.1).sum();
                    assert!((total - 1.0).abs() < 1e-12);
                    for &(out, _) in d {
                        assert_eq!(mdp.feasibility_indicator(out, prev).unwrap(), 1);
                    }
                    if mdp.feasibility_indicator(s, prev).unwrap() == 1 {
                        assert_eq!(table.prob(s, s, prev).unwrap(), table.tau(prev));
                    }
                }
            }
        }
    }

    #[test]
    fn missing_entry_is_lookup_error() {
        let table = build_mechanism(&abcd(), &half_decay()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(table.sample(9, 0, &mut rng), Err(Error::Lookup(_))));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let table = build_mechanism(&abcd(), &half_decay()).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| table.sample(0, 1, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn empirical_frequencies_match() {
        let table = build_mechanism(&abcd(), &half_decay()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_private_state(&table, 0, 1, &mut rng).unwrap()] += 1;
        }
        for (state, exact) in [(0, 0.5), (1, 0.25), (2, 0.25), (3, 0.0)] {
            assert!((counts[state] as f64 / n as f64 - exact).abs() < 0.01);
        }
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming_distance(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap(), 0);
        assert_eq!(hamming_distance(&[0, 1, 0, 1], &[0, 1, 1, 1]).unwrap(), 1);
        assert_eq!(hamming_distance(&[0, 1, 2], &[2, 1, 0]).unwrap(), 2);
        assert!(hamming_distance(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn trajectory_distribution_two_state_chain() {
        // both states reach both states
        let mdp = LocalMdp::new(2, 0, 1, [(0, 0, 0, 0.5), (0, 0, 1, 0.5), (1, 0, 0, 0.5), (1, 0, 1, 0.5)]).unwrap();
        let params = PrivacyParams::new(1.0, 1).unwrap();
        let table = build_mechanism(&mdp, &params).unwrap();
        let tau = true_transition_prob(2, 1.0, 1).unwrap();
        let dist = mechanism_trajectory_distribution(&table, &[1, 0], 0).unwrap();
        assert_eq!(dist.len(), 4);
        let expect = |w: [usize; 2]| {
            let p0 = if w[0] == 1 { tau } else { 1.0 - tau };
            let p1 = if w[1] == 0 { tau } else { 1.0 - tau };
            p0 * p1
        };
        for (w, p) in &dist {
            assert!((p - expect([w[0], w[1]])).abs() < 1e-15);
        }
        assert!((dist.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_output_when_initial_has_one_successor() {
        let mdp = LocalMdp::new(2, 0, 1, [(0, 0, 1, 1.0), (1, 0, 1, 1.0)]).unwrap();
        let table = build_mechanism(&mdp, &PrivacyParams::new(0.5, 1).unwrap()).unwrap();
        let dist = mechanism_trajectory_distribution(&table, &[1], 0).unwrap();
        assert_eq!(dist.into_iter().collect::<Vec<_>>(), vec![(vec![1], 1.0)]);
    }

    #[test]
    fn enumeration_guard() {
        let mdp = abcd();
        let table = build_mechanism(&mdp, &half_decay()).unwrap();
        let long = vec![1; 11];
        assert!(matches!(
            mechanism_trajectory_distribution(&table, &long, 1),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn certification_on_fully_connected_chain() {
        let entries = (0..3).flat_map(|s| (0..3).map(move |y| (s, 0, y, 1.0 / 3.0)));
        let mdp = LocalMdp::new(3, 0, 1, entries).unwrap();
        let params = PrivacyParams::new(1.0, 1).unwrap();
        let report = verify_word_dp(&mdp, &params, 3).unwrap();
        assert!(report.satisfied, "{report:?}");
        // a single substitution attains exactly exp(epsilon / k)
        assert!((report.max_log_ratio - 1.0).abs() < 1e-9);

        let params = PrivacyParams::new(0.1, 1).unwrap();
        let tau: Vec<f64> = (0..3)
            .map(|_| (2.0 * true_transition_prob(3, 0.1, 1).unwrap()).min(0.999))
            .collect();
        let corrupted = MechanismTable::with_true_transition_probs(&mdp, tau).unwrap();
        let report = verify_table_word_dp(&mdp, &corrupted, &params, 3).unwrap();
        assert!(!report.satisfied);
        assert!(report.witness.is_some());
    }
}
