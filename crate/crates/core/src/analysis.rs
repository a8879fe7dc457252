//! Closed-form lower bounds on the success probability under private
//! communication.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::execution::{evaluate, EvalStats, ExecutionConfig};
use crate::game_model::{MarkovGame, ReachAvoidSpec};
use crate::occupancy::{expected_length_of, OccupancyModel, OccupancyVector};
use crate::synthesis::JointPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub v_tr: f64,
    pub total_correlation: f64,
    pub rho_max: usize,
    pub epsilon: f64,
    pub k: u32,
    pub n_agents: usize,
    pub l_tr: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0 + 1e-6).contains(&self.v_tr) {
            return validation(format!("v_tr = {} is not a probability", self.v_tr));
        }
        if self.rho_max == 0 || self.n_agents == 0 || self.k == 0 {
            return validation("rho_max, n_agents and k must be at least 1");
        }
        if !(self.epsilon > 0.0) || !(self.l_tr >= 0.0) || !(self.total_correlation >= -1e-9) {
            return validation("epsilon must be positive; l_tr and C nonnegative");
        }
        Ok(())
    }

    /// `log((ρ_max − 1) e^{−ε/k} + 1)`, the per-step per-agent divergence.
    fn log_base(&self) -> f64 {
        ((self.rho_max as f64 - 1.0) * (-self.epsilon / f64::from(self.k)).exp()).ln_1p()
    }
}

/// Largest local out-degree over all agents and states.
pub fn max_out_degree(game: &MarkovGame) -> usize {
    game.agents()
        .iter()
        .flat_map(|m| (0..m.state_count()).map(move |s| m.successors_unchecked(s).len()))
        .max()
        .unwrap_or(1)
}

/// `C + N l log((ρ_max − 1) e^{−ε/k} + 1)`.
pub fn kl_upper_bound(inputs: &BoundInputs) -> f64 {
    (inputs.total_correlation.max(0.0) + inputs.n_agents as f64 * inputs.l_tr * inputs.log_base()).max(0.0)
}

/// `v_tr − sqrt(1 − exp(−KL))`.
pub fn theorem1_lower_bound(inputs: &BoundInputs) -> f64 {
    let radicand = (-(-kl_upper_bound(inputs)).exp_m1()).clamp(0.0, 1.0);
    inputs.v_tr - radicand.sqrt()
}

/// `v_tr − 1 + ((ρ_max − 1) e^{−ε/k} + 1)^{−N l}`.
pub fn theorem2_lower_bound(inputs: &BoundInputs) -> f64 {
    let exponent = -(inputs.n_agents as f64) * inputs.l_tr * inputs.log_base();
    inputs.v_tr + exponent.exp_m1()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub inputs: BoundInputs,
    pub kl_bound: f64,
    pub thm1: f64,
    pub thm2: f64,
    pub empirical: EvalStats,
    /// `v_pr + 3 SE` is at least both bounds.
    pub sound: bool,
}

/// Bound inputs from an occupancy vector: `v_tr = v(x)`, `C = C̄(x)`,
/// `l_tr = l(x)`. For the bounds to describe an executed policy, `x` must be
/// the occupancy that policy induces (see `synthesis::policy_occupancy`).
pub fn bound_inputs_from_occupancy(
    game: &MarkovGame,
    model: &OccupancyModel,
    x: &OccupancyVector,
    epsilon: f64,
    k: u32,
) -> Result<BoundInputs> {
    let inputs = BoundInputs {
        v_tr: model.success_prob_of(x)?.min(1.0),
        total_correlation: model.surrogate_total_correlation(x)?.max(0.0),
        rho_max: max_out_degree(game),
        epsilon,
        k,
        n_agents: game.n_agents(),
        l_tr: expected_length_of(x),
    };
    inputs.validate()?;
    Ok(inputs)
}

/// Checks `v_pr + 3 SE ≥ max(thm1, thm2)` for every configuration, with
/// the bound inputs taken from `x`.
pub fn check_bounds_against_empirical(
    game: &MarkovGame,
    spec: &ReachAvoidSpec,
    policy: &JointPolicy,
    x: &OccupancyVector,
    configs: &[ExecutionConfig],
) -> Result<Vec<BoundRow>> {
    let model = OccupancyModel::new(game, spec)?;
    configs
        .iter()
        .map(|config| {
            if !config.privacy.enabled {
                return validation("bounds are evaluated for private execution");
            }
            let inputs = bound_inputs_from_occupancy(game, &model, x, config.privacy.epsilon, config.privacy.k)?;
            Ok(bound_row(inputs, evaluate(game, spec, policy, config)?))
        })
        .collect()
}

pub fn bound_row(inputs: BoundInputs, empirical: EvalStats) -> BoundRow {
    let thm1 = theorem1_lower_bound(&inputs);
    let thm2 = theorem2_lower_bound(&inputs);
    let upper = empirical.success_rate + 3.0 * empirical.std_error;
    BoundRow {
        inputs,
        kl_bound: kl_upper_bound(&inputs),
        thm1,
        thm2,
        sound: upper + 1e-12 >= thm1.max(thm2),
        empirical,
    }
}

/// Ranks starting at 1, ties receiving their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` for fewer than two points or a
/// constant series.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean).powi(2);
        db += (y - mean).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        return None;
    }
    Some(num / (da * db).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn inputs(c: f64, rho: usize, eps: f64, l: f64) -> BoundInputs {
        BoundInputs {
            v_tr: 0.97,
            total_correlation: c,
            rho_max: rho,
            epsilon: eps,
            k: 1,
            n_agents: 2,
            l_tr: l,
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_upper_bound(&inputs(0.0, 1, 1.0, 10.0)), 0.0);
        let kl = kl_upper_bound(&inputs(2.0, 3, LN_2, 10.0));
        assert!((kl - (2.0 + 20.0 * LN_2)).abs() < 1e-12);
        assert!((kl - 15.863).abs() < 1e-3);
        assert!(kl_upper_bound(&inputs(2.0, 3, 2.0, 10.0)) < kl);
    }

    #[test]
    fn theorem1_examples() {
        let i = inputs(0.0, 5, 800.0, 10.0);
        assert_eq!(theorem1_lower_bound(&i), i.v_tr);
        let i = inputs(2.45, 5, 1.0, 10.0);
        assert!((theorem1_lower_bound(&i) - (i.v_tr - 1.0)).abs() < 1e-8);
        let mut i = inputs(0.0, 1, 1.0, 3.0);
        i.v_tr = 1.0;
        assert_eq!(theorem1_lower_bound(&i), 1.0);
    }

    #[test]
    fn theorem2_examples() {
        let i = inputs(3.0, 1, 1.0, 10.0);
        assert_eq!(theorem2_lower_bound(&i), i.v_tr);
        let i = inputs(0.0, 3, LN_2, 10.0);
        assert!((theorem2_lower_bound(&i) - (i.v_tr - 1.0 + 2f64.powi(-20))).abs() < 1e-15);
        let i = inputs(0.0, 3, 1e4, 10.0);
        assert!((theorem2_lower_bound(&i) - i.v_tr).abs() < 1e-12);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        // Ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4).
        let r = spearman(&[0.0, 5.0, 5.0, 9.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - 4.5 / 4.5f64.sqrt() / 5f64.sqrt()).abs() < 1e-12);
    }
}
