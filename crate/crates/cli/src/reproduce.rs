use std::path::Path;

use clap::ValueEnum;
use coop_privacy::environments::{build_navigation, build_sysadmin, GridMap, SysAdminParams};
use coop_privacy::execution::{evaluate, EvalStats, ExecutionConfig};
use coop_privacy::game_model::{MarkovGame, ReachAvoidSpec};
use coop_privacy::occupancy::{expected_length_of, OccupancyModel};
use coop_privacy::privacy::PrivacyParams;
use coop_privacy::synthesis::{
    ccp_with_model, extract_policy_with_model, policy_occupancy, solve_baseline, JointPolicy, SynthesisConfig,
    SynthesisResult,
};
use coop_privacy::Result;
use serde::{Deserialize, Serialize};

use crate::cells;
use crate::config::{hash_json, EvaluationSettings};
use crate::output::{epsilon_cell, Table};

pub const NAV_DELTA: f64 = 0.01;
pub const NAV_BETA: f64 = 0.4;
pub const NAV_K: u32 = 3;
/// Privacy level of the private curves in fig2 and fig3.
pub const NAV_EPSILON: f64 = 1.0;
pub const NAV_SLIP: f64 = 0.05;

pub const SYS_DELTA: f64 = 0.001;
pub const SYS_BETA: f64 = 0.1;
pub const SYS_K: u32 = 1;
pub const SYS_EPSILONS: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    /// Navigation success per CCP iteration.
    Fig2,
    /// Navigation private success against total correlation.
    Fig3,
    /// Navigation success across privacy levels.
    Fig4,
    /// SysAdmin success per initial configuration.
    Fig5,
    /// SysAdmin trajectory lengths.
    Lengths,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fig2 => "fig2",
            Self::Fig3 => "fig3",
            Self::Fig4 => "fig4",
            Self::Fig5 => "fig5",
            Self::Lengths => "lengths",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproduceSettings {
    pub evaluation: EvaluationSettings,
    pub max_ccp_iters: usize,
}

impl Default for ReproduceSettings {
    fn default() -> Self {
        Self {
            evaluation: EvaluationSettings::default(),
            max_ccp_iters: SynthesisConfig::default().max_ccp_iters,
        }
    }
}

impl ReproduceSettings {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn execution(&self, privacy: PrivacyParams) -> ExecutionConfig {
        let mut config = ExecutionConfig::new(privacy, self.evaluation.rollouts, self.evaluation.seed);
        config.horizon = self.evaluation.horizon;
        config
    }

    pub fn hash(&self, figure: Figure) -> String {
        hash_json(&(figure, self))
    }
}

/// A game with its MD and baseline solutions.
pub struct Run {
    pub name: String,
    pub game: MarkovGame,
    pub spec: ReachAvoidSpec,
    pub model: OccupancyModel,
    pub md: SynthesisResult,
    pub baseline: SynthesisResult,
}

impl Run {
    fn solve(
        name: String,
        (game, spec): (MarkovGame, ReachAvoidSpec),
        mut config: SynthesisConfig,
        settings: &ReproduceSettings,
    ) -> Result<Self> {
        config.max_ccp_iters = settings.max_ccp_iters;
        let model = OccupancyModel::new(&game, &spec)?;
        let md = ccp_with_model(&game, &model, &config)?;
        let baseline = solve_baseline(&game, &spec, &SynthesisConfig::default())?;
        Ok(Self {
            name,
            game,
            spec,
            model,
            md,
            baseline,
        })
    }

    pub fn evaluate(&self, policy: &JointPolicy, privacy: PrivacyParams, settings: &ReproduceSettings) -> Result<EvalStats> {
        evaluate(&self.game, &self.spec, policy, &settings.execution(privacy))
    }

    pub fn policies(&self) -> [(&'static str, &SynthesisResult); 2] {
        [("md", &self.md), ("baseline", &self.baseline)]
    }
}

/// Canonical navigation map, keeping every CCP iterate.
pub fn navigation_run(settings: &ReproduceSettings) -> Result<Run> {
    let game = build_navigation(&GridMap::canonical(NAV_SLIP)?)?;
    let mut config = SynthesisConfig::new(NAV_DELTA, NAV_BETA);
    config.snapshot_every = 1;
    Run::solve("navigation".into(), game, config, settings)
}

/// The three SysAdmin starting configurations.
pub fn sysadmin_runs(settings: &ReproduceSettings) -> Result<Vec<Run>> {
    SysAdminParams::benchmark_initial_configs()
        .into_iter()
        .map(|(name, init)| {
            let game = build_sysadmin(&SysAdminParams::benchmark(init))?;
            Run::solve(name.into(), game, SynthesisConfig::new(SYS_DELTA, SYS_BETA), settings)
        })
        .collect()
}

/// Statistics of the policy extracted from one CCP iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateEval {
    pub iter: usize,
    /// Surrogate total correlation of the iterate itself.
    pub correlation: f64,
    pub truthful: EvalStats,
    pub private: EvalStats,
}

pub fn iterate_sweep(run: &Run, settings: &ReproduceSettings) -> Result<Vec<IterateEval>> {
    let private = PrivacyParams::new(NAV_EPSILON, NAV_K)?;
    run.md
        .snapshots
        .iter()
        .map(|(iter, x)| {
            let policy = extract_policy_with_model(&run.game, &run.model, x, run.md.policy.meta.clone())?;
            Ok(IterateEval {
                iter: *iter,
                correlation: run.model.surrogate_total_correlation(x)?,
                truthful: run.evaluate(&policy, PrivacyParams::truthful(), settings)?,
                private: run.evaluate(&policy, private, settings)?,
            })
        })
        .collect()
}

/// Long format: `curve,iter,success_rate,se`. The baseline does not
/// iterate, so its curves repeat one value per iteration.
pub fn fig2_table(run: &Run, sweep: &[IterateEval], settings: &ReproduceSettings) -> Result<Table> {
    let mut table = Table::new(&["curve", "iter", "success_rate", "se"]);
    let private = PrivacyParams::new(NAV_EPSILON, NAV_K)?;
    let base_truthful = run.evaluate(&run.baseline.policy, PrivacyParams::truthful(), settings)?;
    let base_private = run.evaluate(&run.baseline.policy, private, settings)?;
    for e in sweep {
        table.push(cells!["md_truthful", e.iter, e.truthful.success_rate, e.truthful.std_error]);
    }
    for e in sweep {
        table.push(cells!["md_private", e.iter, e.private.success_rate, e.private.std_error]);
    }
    for (name, s) in [("base_truthful", &base_truthful), ("base_private", &base_private)] {
        for e in sweep {
            table.push(cells![name, e.iter, s.success_rate, s.std_error]);
        }
    }
    Ok(table)
}

pub fn fig3_table(sweep: &[IterateEval]) -> Table {
    let mut table = Table::new(&["iter", "C", "success_rate", "se"]);
    for e in sweep {
        table.push(cells![e.iter, e.correlation, e.private.success_rate, e.private.std_error]);
    }
    table
}

/// `linspace(0.01, 10, 11)`.
pub fn fig4_epsilons() -> Vec<f64> {
    (0..11).map(|i| 0.01 + (10.0 - 0.01) * i as f64 / 10.0).collect()
}

pub fn fig4_table(run: &Run, settings: &ReproduceSettings) -> Result<Table> {
    let mut table = Table::new(&["policy", "epsilon", "k", "success_rate", "se"]);
    for (name, result) in run.policies() {
        for eps in fig4_epsilons() {
            let s = run.evaluate(&result.policy, PrivacyParams::new(eps, NAV_K)?, settings)?;
            table.push(cells![name, eps, NAV_K, s.success_rate, s.std_error]);
        }
    }
    Ok(table)
}

pub fn fig5_table(runs: &[Run], settings: &ReproduceSettings) -> Result<Table> {
    let mut table = Table::new(&["init", "policy", "epsilon", "k", "success_rate", "se", "mean_length"]);
    let mut levels = vec![PrivacyParams::truthful()];
    for eps in SYS_EPSILONS {
        levels.push(PrivacyParams::new(eps, SYS_K)?);
    }
    for run in runs {
        for (name, result) in run.policies() {
            for privacy in &levels {
                let s = run.evaluate(&result.policy, *privacy, settings)?;
                let eps = privacy.enabled.then_some(privacy.epsilon);
                let mut row = cells![run.name, name];
                row.push(epsilon_cell(eps));
                row.extend(cells![SYS_K, s.success_rate, s.std_error, s.mean_length]);
                table.push(row);
            }
        }
    }
    Ok(table)
}

/// Truthful mean length from rollouts next to the expected length of the
/// occupancy the executed policy induces.
pub fn lengths_table(runs: &[Run], settings: &ReproduceSettings) -> Result<Table> {
    let mut table = Table::new(&["init", "policy", "mean_length", "timeouts", "expected_length"]);
    for run in runs {
        for (name, result) in run.policies() {
            let s = run.evaluate(&result.policy, PrivacyParams::truthful(), settings)?;
            let expected = expected_length_of(&policy_occupancy(&run.model, &result.policy)?);
            table.push(cells![run.name, name, s.mean_length, s.timeout_count, expected]);
        }
    }
    Ok(table)
}

pub fn reproduce(figure: Figure, settings: &ReproduceSettings) -> Result<Table> {
    match figure {
        Figure::Fig2 | Figure::Fig3 => {
            let run = navigation_run(settings)?;
            let sweep = iterate_sweep(&run, settings)?;
            if figure == Figure::Fig2 {
                fig2_table(&run, &sweep, settings)
            } else {
                Ok(fig3_table(&sweep))
            }
        }
        Figure::Fig4 => fig4_table(&navigation_run(settings)?, settings),
        Figure::Fig5 => fig5_table(&sysadmin_runs(settings)?, settings),
        Figure::Lengths => lengths_table(&sysadmin_runs(settings)?, settings),
    }
}

pub fn write_figure(figure: Figure, settings: &ReproduceSettings, out: &Path) -> Result<()> {
    reproduce(figure, settings)?.write(out, &format!("{}.csv", figure.name()), &settings.hash(figure))
}
