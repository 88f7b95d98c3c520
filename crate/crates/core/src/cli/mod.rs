//! The `cvf` command-line tool.
//!
//! ```text
//! cvf train        --data DEMOS [--config CFG] [--seed N] [--set k=v]... --out MODEL
//! cvf eval         --model MODEL --data TRAIN [--test TEST] [--out REPORT]
//! cvf rollout      --model MODEL --x0 X1,X2 [--horizon S] [--out CSV]
//! cvf export-field --model MODEL --bounds A,B,C,D [--resolution K] [--out CSV]
//! cvf grid-eval    --model MODEL --data DEMOS [--grid-k K] [--out REPORT]
//! ```

mod config;
mod model;
mod pipeline;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::json;

use crate::dataset::load_demonstrations_auto;
use crate::dynamics::{export_field_grid, rollout, IntegratorSettings};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, grid_evaluate};

pub use config::TrainConfig;
pub use model::{ModelFile, SolveSummary, SCHEMA_VERSION};
pub use pipeline::{train_field, TrainOutput};

#[derive(Debug, Parser)]
#[command(name = "cvf", version, about = "Learn contracting vector fields from demonstrations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to demonstrations.
    Train(TrainArgs),
    /// Reproduction, goal and grid metrics as JSON.
    Eval(EvalArgs),
    /// Integrate the model from one initial state.
    Rollout(RolloutArgs),
    /// Sample the field, contraction eigenvalue and potential on a 2-D grid.
    ExportField(ExportArgs),
    /// Grid-stability metrics only.
    GridEval(GridArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A demonstration CSV, or a directory of them.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config override, e.g. `--set sigma=10 --set admm.rho=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct IntegrationArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub abs_tol: f64,
    /// Goal ball radius, mm.
    #[arg(long, default_value_t = 1.0)]
    pub goal_radius: f64,
}

impl IntegrationArgs {
    fn settings(&self) -> IntegratorSettings {
        IntegratorSettings {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            goal_radius: self.goal_radius,
            ..IntegratorSettings::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training demonstrations.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out demonstrations; the training data is reused when absent.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of grid starts (a perfect square for 2-D data).
    #[arg(long, default_value_t = 16)]
    pub grid_k: usize,
    /// Jitter grid starts within their cells using this seed.
    #[arg(long)]
    pub jitter_seed: Option<u64>,
    #[command(flatten)]
    pub integration: IntegrationArgs,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated initial state.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    /// Integration horizon, seconds.
    #[arg(long, default_value_t = 60.0)]
    pub horizon: f64,
    /// Keep integrating inside the goal ball.
    #[arg(long)]
    pub no_goal_event: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub integration: IntegrationArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `x1_min,x1_max,x2_min,x2_max`.
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: String,
    #[arg(long, default_value_t = 50)]
    pub resolution: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub grid_k: usize,
    #[arg(long)]
    pub jitter_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub integration: IntegrationArgs,
}

/// Runs a parsed command line and maps failures to exit codes: `1` for
/// errors, `2` for a model written without solver convergence.
pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ExitCode::SUCCESS),
        Command::Rollout(a) => cmd_rollout(&a).map(|_| ExitCode::SUCCESS),
        Command::ExportField(a) => cmd_export_field(&a).map(|_| ExitCode::SUCCESS),
        Command::GridEval(a) => cmd_grid_eval(&a).map(|_| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad {what} value `{v}`")))
        })
        .collect()
}

pub fn cmd_train(a: &TrainArgs) -> Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg = cfg.with_overrides(&a.overrides)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let set = load_demonstrations_auto(&a.data)?;
    let out = train_field(&cfg, &set)?;
    let model = ModelFile::new(&cfg, &out.field, &out.report);
    model.save(&a.out)?;

    let summary = json!({
        "model": a.out.display().to_string(),
        "solve": &model.solve,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if out.report.converged {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!(
        "warning: ADMM stopped after {} iterations without converging \
         (primal residual {:.3e}, dual residual {:.3e}); the model was written anyway",
        out.report.iters, out.report.primal_residual, out.report.dual_residual
    );
    if out.report.primal_residual > out.report.dual_residual {
        eprintln!(
            "hint: a stalled primal residual suggests the hard constraints are infeasible; \
             try slack mode, e.g. --set admm.slack_weight=1000, or a smaller tau"
        );
    } else {
        eprintln!("hint: raise admm.max_iters or enable admm.adaptive_rho");
    }
    Ok(ExitCode::from(2))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let field = ModelFile::load(&a.model)?.to_field()?;
    let train = load_demonstrations_auto(&a.data)?;
    let test = match &a.test {
        Some(p) => load_demonstrations_auto(p)?,
        None => train.clone(),
    };
    let s = a.integration.settings();
    let eval = evaluate(&field, &train, &test, &s)?;
    let grid = grid_evaluate(&field, &train, &s, a.grid_k, a.jitter_seed)?;
    let text = serde_json::to_string_pretty(&json!({ "eval": eval, "grid": grid }))? + "\n";
    emit(a.out.as_deref(), &text)
}

pub fn cmd_grid_eval(a: &GridArgs) -> Result<()> {
    let field = ModelFile::load(&a.model)?.to_field()?;
    let demos = load_demonstrations_auto(&a.data)?;
    let grid = grid_evaluate(&field, &demos, &a.integration.settings(), a.grid_k, a.jitter_seed)?;
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&grid)? + "\n"))
}

pub fn cmd_rollout(a: &RolloutArgs) -> Result<()> {
    let field = ModelFile::load(&a.model)?.to_field()?;
    let x0 = DVector::from_vec(parse_list(&a.x0, "x0")?);
    let s = IntegratorSettings {
        horizon: a.horizon,
        detect_goal: !a.no_goal_event,
        ..a.integration.settings()
    };
    let r = rollout(&field, &x0, &s)?;
    let n = x0.len();
    let mut text = String::from("t");
    for k in 1..=n {
        text.push_str(&format!(",x{k}"));
    }
    for k in 1..=n {
        text.push_str(&format!(",f{k}"));
    }
    text.push('\n');
    for i in 0..r.len() {
        let mut row = vec![r.times[i].to_string()];
        row.extend(r.states.row(i).iter().map(f64::to_string));
        row.extend(r.velocities.row(i).iter().map(f64::to_string));
        text.push_str(&row.join(","));
        text.push('\n');
    }
    emit(a.out.as_deref(), &text)?;
    match r.time_to_goal {
        Some(t) => eprintln!("reached the goal ball at t = {t:.6} s"),
        None => eprintln!(
            "goal not reached within {} s; final distance {:.6}",
            a.horizon,
            r.last_state().norm()
        ),
    }
    Ok(())
}

pub fn cmd_export_field(a: &ExportArgs) -> Result<()> {
    let field = ModelFile::load(&a.model)?.to_field()?;
    let b = parse_list(&a.bounds, "bounds")?;
    let bounds: [f64; 4] = b.try_into().map_err(|_| {
        Error::InvalidArgument("bounds need four values: x1_min,x1_max,x2_min,x2_max".into())
    })?;
    let grid = export_field_grid(&field, bounds, a.resolution)?;
    let mut buf = Vec::new();
    grid.write_csv(&mut buf)?;
    emit(a.out.as_deref(), &String::from_utf8(buf).expect("ascii csv"))
}
