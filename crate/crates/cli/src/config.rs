//! Experiment configuration: TOML in, fully defaulted echo out.

use std::path::{Path, PathBuf};

use rcmdp::actor_critic::RcacConfig;
use rcmdp::envs::{make_gridworld, make_inventory, GridSpec, InventorySpec};
use rcmdp::lyapunov::{check_candidate, LyapunovFn};
use rcmdp::model::build_from_dataset;
use rcmdp::rcpg::RcpgConfig;
use rcmdp::robust_dp::EvalOptions;
use rcmdp::{Horizon, Rcmdp, TransitionDataset};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    TrainRcpg,
    TrainRcac,
    Eval,
    Shape,
    InvarianceTest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::TrainRcpg => "train-rcpg",
            Command::TrainRcac => "train-rcac",
            Command::Eval => "eval",
            Command::Shape => "shape",
            Command::InvarianceTest => "invariance-test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Environment {
    Gridworld {
        spec: GridSpec,
        psi: f64,
    },
    Inventory {
        spec: InventorySpec,
        psi: f64,
    },
    /// A model saved as JSON.
    Model {
        path: PathBuf,
    },
    /// A `s,a,s_next,r,d_cost` transition log turned into a model with
    /// Hoeffding budgets.
    Dataset {
        path: PathBuf,
        n_states: usize,
        n_actions: usize,
        delta: f64,
        gamma: f64,
        #[serde(default)]
        beta: f64,
        #[serde(default = "infinite")]
        horizon: Horizon,
        /// Replaces the uniform initial distribution.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p0: Option<Vec<f64>>,
    },
}

fn infinite() -> Horizon {
    Horizon::Infinite
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LyapunovMode {
    #[default]
    None,
    /// Train on `r + V(s) − V(s')`, report returns on the original model.
    Shaping,
    /// Replace the constraint channel with the descent signal `V(s) − V(s')`.
    StabilityConstraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovOptions {
    pub mode: LyapunovMode,
    /// `s,value` file; defaults to the candidate bundled with the environment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<PathBuf>,
    /// Equilibrium state for a candidate read from file.
    pub equilibrium: usize,
    /// Budget of the stability channel.
    pub stability_beta: f64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        LyapunovOptions {
            mode: LyapunovMode::None,
            values: None,
            equilibrium: 0,
            stability_beta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Multiplier of the solved signal `r + λd`.
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        let e = EvalOptions::default();
        SolveOptions {
            lambda: 0.0,
            tol: e.tol,
            max_iter: e.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `s,a,probability` file to evaluate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PathBuf>,
    /// Multiplier reported in the summary.
    pub lambda: f64,
    pub options: EvalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvarianceConfig {
    pub horizon: usize,
    pub lambda: f64,
    pub tol: f64,
    pub policy_budget: u64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        InvarianceConfig {
            horizon: 3,
            lambda: 0.0,
            tol: 1e-9,
            policy_budget: 1 << 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the verb on the command line when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    pub environment: Environment,
    /// Overrides the environment's constraint budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub lyapunov: LyapunovOptions,
    #[serde(default)]
    pub solve: SolveOptions,
    #[serde(default)]
    pub rcpg: RcpgConfig,
    #[serde(default)]
    pub rcac: RcacConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub invariance: InvarianceConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// The models one run works with.
pub struct Models {
    /// What the learner trains on.
    pub train: Rcmdp,
    /// What returns and feasibility are reported on.
    pub eval: Rcmdp,
    /// The environment before any Lyapunov transformation.
    pub base: Rcmdp,
    pub candidate: Option<LyapunovFn>,
}

impl ExperimentConfig {
    /// Reads a TOML file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.environment {
            Environment::Model { path } | Environment::Dataset { path, .. } => fix(path),
            _ => {}
        }
        if let Some(p) = &mut self.lyapunov.values {
            fix(p);
        }
        if let Some(p) = &mut self.eval.policy {
            fix(p);
        }
        if let Some(p) = &mut self.out {
            fix(p);
        }
    }

    /// Checks everything that does not need the model itself.
    pub fn validate(&self, command: Command) -> Result<(), CliError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(CliError::Config(format!(
                    "config is for `{}` but the command line asks for `{}`",
                    c.name(),
                    command.name()
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        let mut files: Vec<&Path> = Vec::new();
        match &self.environment {
            Environment::Model { path } | Environment::Dataset { path, .. } => files.push(path),
            _ => {}
        }
        if let Some(p) = &self.lyapunov.values {
            files.push(p);
        }
        if command == Command::Eval {
            match &self.eval.policy {
                Some(p) => files.push(p),
                None => return Err(CliError::Config("`eval.policy` is required for eval".into())),
            }
        }
        for f in files {
            if !f.is_file() {
                return Err(CliError::Config(format!("referenced file {} does not exist", f.display())));
            }
        }
        let config_err = |e: rcmdp::Error| CliError::Config(e.to_string());
        match command {
            Command::TrainRcpg => self.rcpg.validate().map_err(config_err)?,
            Command::TrainRcac => self.rcac.validate().map_err(config_err)?,
            _ => {}
        }
        if self.lyapunov.mode != LyapunovMode::None || command == Command::Shape || command == Command::InvarianceTest {
            let bundled = matches!(self.environment, Environment::Gridworld { .. } | Environment::Inventory { .. });
            if !bundled && self.lyapunov.values.is_none() {
                return Err(CliError::Config(
                    "this environment has no bundled Lyapunov candidate; set `lyapunov.values`".into(),
                ));
            }
        }
        Ok(())
    }

    /// Builds the base model and the candidate, then applies the Lyapunov option.
    pub fn models(&self) -> Result<Models, CliError> {
        let config_err = |e: rcmdp::Error| CliError::Config(e.to_string());
        let (mut model, bundled) = match &self.environment {
            Environment::Gridworld { spec, psi } => {
                let (m, v) = make_gridworld(spec, *psi).map_err(config_err)?;
                (m, Some(v))
            }
            Environment::Inventory { spec, psi } => {
                let (m, v) = make_inventory(spec, *psi).map_err(config_err)?;
                (m, Some(v))
            }
            Environment::Model { path } => (Rcmdp::load(path).map_err(config_err)?, None),
            Environment::Dataset {
                path,
                n_states,
                n_actions,
                delta,
                gamma,
                beta,
                horizon,
                p0,
            } => {
                let data = TransitionDataset::load_csv(path, *n_states, *n_actions).map_err(config_err)?;
                let mut m = build_from_dataset(&data, *delta, *gamma, *horizon, *beta).map_err(config_err)?;
                if let Some(p0) = p0 {
                    m.p0 = p0.clone();
                    m.ensure_valid().map_err(config_err)?;
                }
                (m, None)
            }
        };
        if let Some(beta) = self.beta {
            model.beta = beta;
        }
        let candidate = match &self.lyapunov.values {
            Some(path) => {
                let file = std::fs::File::open(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                Some(LyapunovFn::read_csv(file, self.lyapunov.equilibrium).map_err(config_err)?)
            }
            None => bundled,
        };
        if let Some(v) = &candidate {
            if v.values.len() != model.n_states {
                return Err(CliError::Config(format!(
                    "Lyapunov candidate has {} states, the model {}",
                    v.values.len(),
                    model.n_states
                )));
            }
            let report = check_candidate(v);
            if !report.passed() {
                log::warn!("Lyapunov candidate fails its checks: {:?}", report);
            }
        }
        let train = match (self.lyapunov.mode, &candidate) {
            (LyapunovMode::None, _) => model.clone(),
            (LyapunovMode::Shaping, Some(v)) => rcmdp::lyapunov::shape_model(&model, v).map_err(config_err)?,
            (LyapunovMode::StabilityConstraint, Some(v)) => {
                rcmdp::lyapunov::stability_constrained_model(&model, v, self.lyapunov.stability_beta)
                    .map_err(config_err)?
            }
            (_, None) => return Err(CliError::Config("Lyapunov mode needs a candidate".into())),
        };
        let eval = match self.lyapunov.mode {
            // the stability channel is what the run is judged on
            LyapunovMode::StabilityConstraint => train.clone(),
            _ => model.clone(),
        };
        Ok(Models {
            train,
            eval,
            base: model,
            candidate,
        })
    }

    /// The fully defaulted configuration as TOML.
    pub fn resolved(&self, command: Command, seed: u64) -> Result<String, CliError> {
        let mut echo = self.clone();
        echo.command = Some(command);
        echo.seeds = vec![seed];
        echo.rcpg.seed = seed;
        echo.rcac.seed = seed;
        toml::to_string(&echo).map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))
    }
}

/// Parses `3`, `1,2,5` or `0..20` (half open).
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|e| format!("bad seed range start: {e}"))?;
        let hi: u64 = hi.trim().parse().map_err(|e| format!("bad seed range end: {e}"))?;
        if lo >= hi {
            return Err(format!("empty seed range {lo}..{hi}"));
        }
        return Ok((lo..hi).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|e| format!("bad seed `{s}`: {e}")))
        .collect()
}
