use std::fs;
use std::path::{Path, PathBuf};

use coop_privacy::analysis::{bound_inputs_from_occupancy, bound_row};
use coop_privacy::execution::{evaluate, EvalStats, ExecutionConfig};
use coop_privacy::game_model::{MarkovGame, ReachAvoidSpec};
use coop_privacy::occupancy::{OccupancyModel, OccupancyVector};
use coop_privacy::privacy::{verify_word_dp, PrivacyParams};
use coop_privacy::synthesis::{
    ccp_with_model, policy_occupancy, solve_baseline, IterateLog, JointPolicy, SubproblemStatus, SynthesisResult,
};
use coop_privacy::Result;

use crate::cells;
use crate::config::{read_file, ExperimentConfig};
use crate::output::{epsilon_cell, Table};

/// A validated config together with the game it describes.
pub struct Context {
    pub config: ExperimentConfig,
    pub game: MarkovGame,
    pub spec: ReachAvoidSpec,
    pub model: OccupancyModel,
    pub hash: String,
}

impl Context {
    pub fn new(config: ExperimentConfig, base: &Path) -> Result<Self> {
        config.validate()?;
        let (game, spec) = config.environment.build(base)?;
        let model = OccupancyModel::new(&game, &spec)?;
        let hash = config.hash();
        Ok(Self {
            config,
            game,
            spec,
            model,
            hash,
        })
    }

    /// Loads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let config = ExperimentConfig::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(config, &base)
    }

    /// `--out` first, then `COOP_PRIVACY_OUT`, then the config, then `out`.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        resolve_out_dir(flag, self.config.output_dir.as_deref())
    }

    pub fn read_policy(&self, path: &Path) -> Result<JointPolicy> {
        JointPolicy::from_json(&read_file(path)?, &self.game)
    }

    pub fn read_occupancy(&self, path: &Path) -> Result<OccupancyVector> {
        self.model.from_csv(&read_file(path)?)
    }

    /// Truthful first when enabled, then every configured ε.
    pub fn settings(&self) -> Result<Vec<PrivacyParams>> {
        let mut out = Vec::new();
        if self.config.privacy.truthful {
            out.push(PrivacyParams::truthful());
        }
        out.extend(self.config.privacy.params()?);
        Ok(out)
    }

    pub fn execution(&self, privacy: PrivacyParams) -> ExecutionConfig {
        let eval = self.config.evaluation;
        let mut config = ExecutionConfig::new(privacy, eval.rollouts, eval.seed);
        config.horizon = eval.horizon;
        config
    }
}

pub fn resolve_out_dir(flag: Option<&Path>, configured: Option<&Path>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Some(dir) = std::env::var_os("COOP_PRIVACY_OUT") {
        return dir.into();
    }
    configured.map_or_else(|| PathBuf::from("out"), Path::to_path_buf)
}

/// Runs the CCP, or the baseline LP when `δ = β = 0`.
pub fn synthesize(ctx: &Context) -> Result<SynthesisResult> {
    let config = &ctx.config.synthesis;
    if config.delta == 0.0 && config.beta == 0.0 {
        solve_baseline(&ctx.game, &ctx.spec, config)
    } else {
        ccp_with_model(&ctx.game, &ctx.model, config)
    }
}

pub fn write_synthesis(ctx: &Context, result: &SynthesisResult, out: &Path, timing: bool) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("policy.json"), result.policy.to_json(&ctx.game)?)?;
    let occupancy = format!("# config_hash={}\n{}", ctx.hash, ctx.model.to_csv(&result.occupancy)?);
    fs::write(out.join("occupancy.csv"), occupancy)?;
    iterations_table(&result.log, timing).write(out, "iterations.csv", &ctx.hash)
}

fn status_cell(status: &SubproblemStatus) -> &'static str {
    match status {
        SubproblemStatus::Converged => "converged",
        SubproblemStatus::MaxIterations => "max_iterations",
        SubproblemStatus::NoAscent => "no_ascent",
        SubproblemStatus::Failed(_) => "failed",
    }
}

/// Wall time is written as 0 unless `timing` is set, so reruns stay
/// byte-identical.
pub fn iterations_table(log: &IterateLog, timing: bool) -> Table {
    let mut table = Table::new(&["iter", "objective", "v", "l", "C", "status", "inner_iters", "wall_ms"]);
    for r in &log.records {
        let wall = if timing { r.wall_ms } else { 0.0 };
        table.push(cells![
            r.iter,
            r.objective,
            r.success,
            r.length,
            r.correlation,
            status_cell(&r.status),
            r.inner_iters,
            wall
        ]);
    }
    table
}

pub const EVALUATION_HEADER: [&str; 7] = ["epsilon", "k", "success_rate", "se", "mean_length", "timeouts", "rollouts"];

pub fn evaluation_row(privacy: &PrivacyParams, stats: &EvalStats) -> Vec<String> {
    let (eps, k) = if privacy.enabled {
        (Some(privacy.epsilon), privacy.k.to_string())
    } else {
        (None, String::new())
    };
    let mut row = vec![epsilon_cell(eps), k];
    row.extend(cells![
        stats.success_rate,
        stats.std_error,
        stats.mean_length,
        stats.timeout_count,
        stats.n_rollouts
    ]);
    row
}

pub fn evaluate_policy(ctx: &Context, policy: &JointPolicy) -> Result<Table> {
    let mut table = Table::new(&EVALUATION_HEADER);
    for privacy in ctx.settings()? {
        let stats = evaluate(&ctx.game, &ctx.spec, policy, &ctx.execution(privacy))?;
        table.push(evaluation_row(&privacy, &stats));
    }
    Ok(table)
}

pub const BOUNDS_HEADER: [&str; 13] = [
    "epsilon",
    "k",
    "v_tr",
    "C",
    "l_tr",
    "rho_max",
    "N",
    "kl_bound",
    "thm1",
    "thm2",
    "empirical_v_pr",
    "se",
    "sound",
];

/// One row per configured ε. The bound inputs come from `occupancy` when
/// given, otherwise from the occupancy the policy itself induces. Also
/// reports whether every row is sound.
pub fn bounds(ctx: &Context, policy: &JointPolicy, occupancy: Option<&OccupancyVector>) -> Result<(Table, bool)> {
    let induced;
    let x = match occupancy {
        Some(x) => x,
        None => {
            induced = policy_occupancy(&ctx.model, policy)?;
            &induced
        }
    };
    let mut table = Table::new(&BOUNDS_HEADER);
    let mut all_sound = true;
    for privacy in ctx.config.privacy.params()? {
        let inputs = bound_inputs_from_occupancy(&ctx.game, &ctx.model, x, privacy.epsilon, privacy.k)?;
        let row = bound_row(inputs, evaluate(&ctx.game, &ctx.spec, policy, &ctx.execution(privacy))?);
        all_sound &= row.sound;
        let i = &row.inputs;
        table.push(cells![
            i.epsilon,
            i.k,
            i.v_tr,
            i.total_correlation,
            i.l_tr,
            i.rho_max,
            i.n_agents,
            row.kl_bound,
            row.thm1,
            row.thm2,
            row.empirical.success_rate,
            row.empirical.std_error,
            row.sound
        ]);
    }
    Ok((table, all_sound))
}

/// Exhaustive word-DP check of every agent's mechanism for every configured
/// ε. Also reports whether all of them passed.
pub fn verify_dp(ctx: &Context) -> Result<(Table, bool)> {
    let mut table = Table::new(&["agent", "epsilon", "k", "horizon", "max_log_ratio", "satisfied", "pairs_checked"]);
    let mut all_ok = true;
    for (i, mdp) in ctx.game.agents().iter().enumerate() {
        for privacy in ctx.config.privacy.params()? {
            let report = verify_word_dp(mdp, &privacy, ctx.config.dp.horizon)?;
            all_ok &= report.satisfied;
            table.push(cells![
                i,
                report.epsilon,
                report.k,
                report.horizon,
                report.max_log_ratio,
                report.satisfied,
                report.pairs_checked
            ]);
        }
    }
    Ok((table, all_ok))
}
