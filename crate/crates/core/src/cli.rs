//! Batch commands. Every command is a function of the run configuration and
//! writes its files under one output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Serialize;

use crate::behavior::{dataset_to_csv, generate_dataset};
use crate::channel::path_report_csv;
use crate::classifier::{train_user_model, TrainingSummary, UserModel};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{experiment_report, report_csv, ExperimentConfig};
use crate::rng::{substream, Domain};
use crate::selection::{compare_discovery, round_log, summarize, summary_csv, train_population, SelectionResult};
use crate::spatial::{build_scenario, Scenario};
use crate::text::sig6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    GenData,
    Train,
    Evaluate,
    Simulate,
    CompareTiming,
}

#[derive(Debug, Parser)]
#[command(name = "vmimo", version, about = "Cooperative relay selection simulator")]
pub struct Args {
    /// Run configuration (key=value lines). Defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the `out` key, defaults to `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub command: Command,
}

impl Args {
    /// Loads the config and applies the command-line overrides.
    pub fn resolve(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok((cfg, out))
    }
}

fn write_file(out: &Path, rel: &str, contents: &str) -> Result<PathBuf> {
    let path = out.join(rel);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn user_file(id: usize) -> String {
    format!("user_{id:04}")
}

fn scenario(cfg: &RunConfig) -> Result<Scenario<f64>> {
    build_scenario(&cfg.scenario, cfg.seed)
}

pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    match command {
        Command::GenData => cmd_gen_data(cfg, out),
        Command::Train => cmd_train(cfg, out),
        Command::Evaluate => cmd_evaluate(cfg, out),
        Command::Simulate => cmd_simulate(cfg, out),
        Command::CompareTiming => cmd_compare_timing(cfg, out),
    }
}

/// One CSV per inactive user, drawn from the user's own profile.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let sc = scenario(cfg)?;
    let mut written = vec![write_file(out, "scenario.json", &sc.to_json()?)?];
    for user in &sc.inactive_users {
        let profile = &cfg.profiles[user.profile_id];
        let data = generate_dataset::<f64, _>(profile, cfg.n_samples, &mut substream(cfg.seed, Domain::Dataset, user.id as u64))?;
        let rel = format!("data/{}.csv", user_file(user.id));
        written.push(write_file(out, &rel, &dataset_to_csv(&data))?);
    }
    log::info!("wrote {} datasets", sc.inactive_users.len());
    Ok(written)
}

#[derive(Serialize)]
struct TraceFile<'a> {
    user: usize,
    profile: &'a str,
    n_samples: usize,
    final_mse: Option<f64>,
    epochs: Option<usize>,
    converged: Option<bool>,
    summary: &'a TrainingSummary<f64>,
}

/// Trains every inactive user with every classifier in `train_kinds`, on the
/// same data `gen-data` writes.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let sc = scenario(cfg)?;
    let mut written = Vec::new();
    for &kind in &cfg.train_kinds {
        let settings = cfg.classifier.with_kind(kind);
        for user in &sc.inactive_users {
            let profile = &cfg.profiles[user.profile_id];
            let data = generate_dataset(profile, cfg.n_samples, &mut substream(cfg.seed, Domain::Dataset, user.id as u64))?;
            let (model, summary) = train_user_model(&data, &settings, &mut substream(cfg.seed, Domain::Init, user.id as u64))?;
            let (final_mse, epochs, converged) = match &summary {
                TrainingSummary::Mlp(t) => (t.final_mse(), Some(t.epochs()), Some(t.converged)),
                TrainingSummary::Svm(_) => (None, None, None),
            };
            let trace = TraceFile {
                user: user.id,
                profile: &profile.name,
                n_samples: cfg.n_samples,
                final_mse,
                epochs,
                converged,
                summary: &summary,
            };
            let name = user_file(user.id);
            written.push(write_file(out, &format!("models/{}/{name}.json", kind.name()), &serde_json::to_string_pretty(&model)?)?);
            written.push(write_file(out, &format!("traces/{}/{name}.json", kind.name()), &serde_json::to_string_pretty(&trace)?)?);
            log::debug!("trained {} for user {}", kind.name(), user.id);
        }
        log::info!("trained {} {} models", sc.inactive_users.len(), kind.name());
    }
    Ok(written)
}

pub fn load_model(path: &Path) -> Result<UserModel<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Held-out metrics for every classifier in `evaluate_kinds`. Users cycle
/// through the profiles that carry a non-zero weight.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut rows = Vec::new();
    let mut users = BTreeMap::new();
    for &kind in &cfg.evaluate_kinds {
        let exp = ExperimentConfig {
            user_counts: cfg.evaluate_user_counts.clone(),
            profiles: cfg.weighted_profiles(),
            n_samples: cfg.n_samples,
            test_fraction: cfg.test_fraction,
            classifier: cfg.classifier.with_kind(kind),
        };
        let report = experiment_report(&exp, cfg.seed)?;
        rows.extend(report.rows);
        users.insert(kind.name(), report.users);
    }
    Ok(vec![
        write_file(out, "report.csv", &report_csv(&rows))?,
        write_file(out, "evaluations.json", &serde_json::to_string_pretty(&users)?)?,
    ])
}

/// Rounds for every SU of the scenario, with models trained for the
/// configured classifier.
fn simulate_rounds(cfg: &RunConfig) -> Result<(Scenario<f64>, Vec<SelectionResult<f64>>)> {
    let sc = scenario(cfg)?;
    let models = train_population(&sc, &cfg.profiles, &cfg.classifier, cfg.n_samples, cfg.seed)?;
    let mut results = Vec::new();
    for su in &sc.sus {
        let (_, rounds) = compare_discovery(&sc, su.id, &cfg.profiles, &models, &cfg.selection, cfg.rounds, cfg.seed)?;
        for r in &rounds {
            r.check_invariants(cfg.selection.max_relays(), cfg.selection.ber_threshold)?;
        }
        results.extend(rounds);
    }
    if results.is_empty() {
        return Err(Error::Empty("source users"));
    }
    Ok((sc, results))
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (sc, results) = simulate_rounds(cfg)?;
    let summary = summarize(&results, sc.inactive_users.len())?;
    let mut written = vec![
        write_file(out, "scenario.json", &sc.to_json()?)?,
        write_file(out, "rounds.jsonl", &round_log(&results)?)?,
        write_file(out, "summary.csv", &summary_csv(&summary))?,
    ];
    for r in &results {
        let rel = format!("paths/su_{:03}_round_{:04}.csv", r.su_id, r.round);
        written.push(write_file(out, &rel, &path_report_csv(&r.paths, &r.selected_ids()))?);
    }
    log::info!("{} rounds, reduction {}", results.len(), sig6(summary.reduction));
    Ok(written)
}

pub const TIMING_HEADER: &str = "su_id,round,n_vaa,n_predicted,t_without,t_with";

pub fn cmd_compare_timing(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (sc, results) = simulate_rounds(cfg)?;
    let summary = summarize(&results, sc.inactive_users.len())?;
    let mut timing = String::from(TIMING_HEADER);
    timing.push('\n');
    for r in &results {
        let _ = writeln!(
            timing,
            "{},{},{},{},{},{}",
            r.su_id,
            r.round,
            r.vaa_members.len(),
            r.predicted_willing.len(),
            sig6(r.time_without_prediction),
            sig6(r.time_with_prediction),
        );
    }
    Ok(vec![
        write_file(out, "timing.csv", &timing)?,
        write_file(out, "summary.csv", &summary_csv(&summary))?,
    ])
}
