//! One (config, seed) run of a verb and the artifacts it leaves behind.

use std::io::Write;

use rcmdp::actor_critic::{rcac_train, write_ac_history_csv};
use rcmdp::io::{fmt_f64, read_policy_csv, write_policy_csv, write_values_csv};
use rcmdp::lyapunov::{check_candidate, invariance_test, shape_model, InvarianceOptions};
use rcmdp::rcpg::{write_history_csv, RcpgTrainer};
use rcmdp::robust_dp::{evaluate_policy, greedy_actions, robust_return, robust_value_iteration, EvalOptions};
use rcmdp::{PolicyTable, Rcmdp, Signal};
use serde::{Deserialize, Serialize};

use crate::config::{Command, ExperimentConfig, Models};
use crate::output::RunDir;
use crate::CliError;

pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: Command,
    pub seed: u64,
    /// Robust returns of the final policy on the evaluation model.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    pub beta: f64,
    /// `rho_d >= beta`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feasible: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub episodes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub invariance: Option<InvarianceSummary>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceSummary {
    pub passed: bool,
    pub sets_coincide: bool,
    pub n_policies: u64,
    pub n_optimal: usize,
    pub max_q_offset_error: f64,
    pub max_value_offset_error: f64,
}

impl Summary {
    fn new(command: Command, seed: u64, beta: f64) -> Self {
        Summary {
            command,
            seed,
            rho_r: None,
            rho_d: None,
            lambda: None,
            beta,
            feasible: None,
            episodes: None,
            invariance: None,
            warnings: Vec::new(),
        }
    }

    fn set_returns(&mut self, rho_r: f64, rho_d: f64) {
        self.rho_r = Some(rho_r);
        self.rho_d = Some(rho_d);
        let feasible = rho_d >= self.beta;
        self.feasible = Some(feasible);
        if !feasible {
            let msg = format!("constraint return {rho_d} is below the budget {}", self.beta);
            log::warn!("seed {}: {msg}", self.seed);
            self.warnings.push(msg);
        }
    }
}

struct Evaluation {
    reward: Vec<f64>,
    rho_r: f64,
    rho_d: f64,
}

fn evaluate(model: &Rcmdp, policy: &PolicyTable, opts: &EvalOptions) -> rcmdp::Result<Evaluation> {
    let vr = evaluate_policy(model, policy, Signal::Reward, opts, None)?;
    let vd = evaluate_policy(model, policy, Signal::Constraint, opts, None)?;
    Ok(Evaluation {
        rho_r: robust_return(model, &vr)?,
        rho_d: robust_return(model, &vd)?,
        reward: vr.values,
    })
}

/// Runs `command` for one seed and writes every artifact into `dir`.
pub fn run_seed(config: &ExperimentConfig, command: Command, seed: u64, dir: &RunDir) -> Result<Summary, CliError> {
    let models = config.models()?;
    dir.write_bytes("config_resolved.toml", config.resolved(command, seed)?.as_bytes())?;
    let mut summary = Summary::new(command, seed, models.eval.beta);
    match command {
        Command::Solve => solve(config, &models, dir, &mut summary)?,
        Command::TrainRcpg => train_rcpg(config, &models, seed, dir, &mut summary)?,
        Command::TrainRcac => train_rcac(config, &models, seed, dir, &mut summary)?,
        Command::Eval => eval(config, &models, dir, &mut summary)?,
        Command::Shape => shape(&models, dir, &mut summary)?,
        Command::InvarianceTest => invariance(config, &models, dir, &mut summary)?,
    }
    dir.write_json(SUMMARY_FILE, &summary)?;
    Ok(summary)
}

fn solve(config: &ExperimentConfig, models: &Models, dir: &RunDir, summary: &mut Summary) -> Result<(), CliError> {
    let opts = &config.solve;
    let (v, residuals) = robust_value_iteration(&models.train, Some(opts.lambda), opts.tol, opts.max_iter)?;
    // first-step greedy policy for finite horizons
    let actions = greedy_actions(&models.train, Signal::Combined(opts.lambda), &v.values)?;
    let policy = PolicyTable::deterministic(&models.train, &actions)?;
    let eval_opts = EvalOptions { tol: opts.tol, max_iter: opts.max_iter };
    let ev = evaluate(&models.eval, &policy, &eval_opts)?;
    summary.lambda = Some(opts.lambda);
    summary.set_returns(ev.rho_r, ev.rho_d);
    dir.write_with(METRICS_FILE, |out| {
        writeln!(out, "iteration,residual")?;
        for (i, r) in residuals.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, fmt_f64(*r))?;
        }
        Ok(())
    })?;
    dir.write_with("values.csv", |out| write_values_csv(&v.values, out))?;
    dir.write_with("policy.csv", |out| write_policy_csv(&policy, out))
}

fn train_rcpg(
    config: &ExperimentConfig,
    models: &Models,
    seed: u64,
    dir: &RunDir,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let rc = rcmdp::rcpg::RcpgConfig { seed, ..config.rcpg.clone() };
    let mut trainer = RcpgTrainer::new(&models.train, rc.clone())?.with_eval_model(&models.eval)?;
    trainer.run_to_end()?;
    let (state, history) = trainer.into_parts();
    let policy = state.policy.table();
    let ev = evaluate(&models.eval, &policy, &rc.eval)?;
    summary.lambda = Some(state.lambda);
    summary.episodes = Some(state.k);
    summary.set_returns(ev.rho_r, ev.rho_d);
    dir.write_with(METRICS_FILE, |out| write_history_csv(&history, out))?;
    dir.write_with("policy.csv", |out| write_policy_csv(&policy, out))?;
    dir.write_with("values.csv", |out| write_values_csv(&ev.reward, out))?;
    dir.write_json("state.json", &state)
}

fn train_rcac(
    config: &ExperimentConfig,
    models: &Models,
    seed: u64,
    dir: &RunDir,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let ac = rcmdp::actor_critic::RcacConfig { seed, ..config.rcac.clone() };
    let (policy, critic, history) = rcac_train(&models.train, &ac)?;
    let table = policy.table();
    let ev = evaluate(&models.eval, &table, &EvalOptions::default())?;
    summary.lambda = Some(history.last().map_or(ac.lambda, |h| h.lambda));
    summary.episodes = Some(ac.episodes);
    summary.set_returns(ev.rho_r, ev.rho_d);
    dir.write_with(METRICS_FILE, |out| write_ac_history_csv(&history, out))?;
    dir.write_with("policy.csv", |out| write_policy_csv(&table, out))?;
    // the critic estimates the combined signal of the training model
    dir.write_with("values.csv", |out| write_values_csv(&critic.values, out))
}

fn eval(config: &ExperimentConfig, models: &Models, dir: &RunDir, summary: &mut Summary) -> Result<(), CliError> {
    let path = config.eval.policy.as_ref().ok_or_else(|| CliError::Config("`eval.policy` is required".into()))?;
    let file = std::fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let m = &models.eval;
    let policy = read_policy_csv(file, m.n_states, m.n_actions)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let ev = evaluate(m, &policy, &config.eval.options)?;
    summary.lambda = Some(config.eval.lambda);
    summary.set_returns(ev.rho_r, ev.rho_d);
    let lagrangian = ev.rho_r + config.eval.lambda * (ev.rho_d - m.beta);
    dir.write_with(METRICS_FILE, |out| {
        writeln!(out, "quantity,value")?;
        writeln!(out, "robust_return_r,{}", fmt_f64(ev.rho_r))?;
        writeln!(out, "robust_return_d,{}", fmt_f64(ev.rho_d))?;
        writeln!(out, "lagrangian,{}", fmt_f64(lagrangian))
    })?;
    dir.write_with("policy.csv", |out| write_policy_csv(&policy, out))?;
    dir.write_with("values.csv", |out| write_values_csv(&ev.reward, out))
}

fn candidate(models: &Models) -> Result<&rcmdp::lyapunov::LyapunovFn, CliError> {
    models
        .candidate
        .as_ref()
        .ok_or_else(|| CliError::Config("a Lyapunov candidate is required".into()))
}

fn shape(models: &Models, dir: &RunDir, summary: &mut Summary) -> Result<(), CliError> {
    let v = candidate(models)?;
    let report = check_candidate(v);
    if !report.passed() {
        summary.warnings.push(format!("candidate check failed: {:?}", report));
    }
    let shaped = shape_model(&models.base, v)?;
    let m = &models.base;
    dir.write_with(METRICS_FILE, |out| {
        writeln!(out, "s,a,s_next,reward,shaped_reward")?;
        for s in 0..m.n_states {
            for a in 0..m.n_actions {
                for t in 0..m.n_states {
                    writeln!(
                        out,
                        "{s},{a},{t},{},{}",
                        fmt_f64(m.rewards[s][a][t]),
                        fmt_f64(shaped.rewards[s][a][t])
                    )?;
                }
            }
        }
        Ok(())
    })?;
    dir.write_with("values.csv", |out| write_values_csv(&v.values, out))?;
    let mut json = shaped.to_json()?;
    json.push('\n');
    dir.write_bytes("model.json", json.as_bytes())
}

fn invariance(config: &ExperimentConfig, models: &Models, dir: &RunDir, summary: &mut Summary) -> Result<(), CliError> {
    let v = candidate(models)?;
    let c = &config.invariance;
    let opts = InvarianceOptions {
        horizon: c.horizon,
        lambda: c.lambda,
        tol: c.tol,
        policy_budget: c.policy_budget as u128,
    };
    let report = invariance_test(&models.base, v, &opts)?;
    if !report.passed {
        summary.warnings.push("optimal policies differ between the original and the shaped model".into());
    }
    dir.write_with(METRICS_FILE, |out| {
        writeln!(out, "model,policy_id")?;
        for id in &report.optimal_original {
            writeln!(out, "original,{id}")?;
        }
        for id in &report.optimal_shaped {
            writeln!(out, "shaped,{id}")?;
        }
        Ok(())
    })?;
    dir.write_with("values.csv", |out| write_values_csv(&v.values, out))?;
    summary.invariance = Some(InvarianceSummary {
        passed: report.passed,
        sets_coincide: report.sets_coincide,
        n_policies: report.n_policies,
        n_optimal: report.optimal_original.len(),
        max_q_offset_error: report.max_q_offset_error,
        max_value_offset_error: report.max_value_offset_error,
    });
    Ok(())
}
