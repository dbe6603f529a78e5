//! Command-line front end: `simulate`, `fit`, `select`, `predict`,
//! `evaluate` and `replicate`, each reading and writing plain CSV/JSON files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dynpred::{predict_landmark, read_risk_csv, write_risk_csv, Predictor};
use crate::error::{Error, Result};
use crate::experiment::{run_grid, write_tables};
use crate::longitudinal::LongitudinalDataset;
use crate::metrics::{accuracy, Outcome};
use crate::selection::{Rule, SelectionReport};
use crate::simgen::{simulate_dataset, split_train_validation};
use crate::stage1::{fit_all_markers, OneMarkerFit, PluginTrajectories};
use crate::stage2::{fit_selection_model, refit_selected, Stage2Fit, Stage2Model};

pub const STAGE1_DIR: &str = "stage1";
pub const DRAWS_FILE: &str = "stage2_draws.csv";
pub const SUMMARY_FILE: &str = "stage2_summary.json";
pub const REFIT_DRAWS_FILE: &str = "refit_draws.csv";
pub const REFIT_SUMMARY_FILE: &str = "refit_summary.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

#[derive(Debug, Parser)]
#[command(name = "twostage", version, about = "Two-stage Bayesian marker selection for joint longitudinal and competing-risks models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset and its train/validation split.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the one-marker joint models and the Stage-2 selection model.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Selection report from the Stage-2 draws; with `--data`, also refit the
    /// selected model.
    Select {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `lbfdr`, `bf`, `lbfdr<0.1`, `bf>3`; defaults to the configured rule.
        #[arg(long)]
        rule: Option<Rule>,
        /// Training data used by `fit`; enables the refit.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Landmark risk predictions for subjects event-free at `s`.
    Predict {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Landmarks; defaults to the configured ones.
        #[arg(long, value_delimiter = ',')]
        s: Option<Vec<f64>>,
        /// Window; defaults to the configured one.
        #[arg(long)]
        t: Option<f64>,
        /// Use the spike-and-slab draws even when a refit exists.
        #[arg(long)]
        raw: bool,
    },
    /// IPCW AUC and Brier score of predictions against observed outcomes.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulation study over the configured scenario grid.
    Replicate {
        #[arg(long)]
        out: PathBuf,
        /// 100 replicates of 1000 subjects.
        #[arg(long)]
        full: bool,
        /// Scenario names to run (default: all configured).
        #[arg(long, value_delimiter = ',')]
        scenarios: Option<Vec<String>>,
        /// Replicates per scenario.
        #[arg(long)]
        replicates: Option<usize>,
    },
}

/// Effective configuration from the global flags.
pub fn load_config(g: &GlobalArgs) -> Result<Config> {
    let cfg = match &g.config {
        Some(p) => Config::from_path(p)?,
        None => Config::default(),
    };
    Ok(match g.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    if cli.global.print_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let command = cli.command.ok_or_else(|| Error::Config("no subcommand given (see --help)".into()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Simulate { out } => cmd_simulate(&cfg, &out),
        Command::Fit { data, out } => cmd_fit(&cfg, &data, &out),
        Command::Select { fit, out, rule, data } => cmd_select(&cfg, &fit, &out, rule, data.as_deref()),
        Command::Predict { fit, data, out, s, t, raw } => cmd_predict(&cfg, &fit, &data, &out, s, t, raw),
        Command::Evaluate { predictions, data, out } => cmd_evaluate(&predictions, &data, &out),
        Command::Replicate { out, full, scenarios, replicates } => cmd_replicate(cfg, &out, full, scenarios, replicates),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `all/`, `train/`, `validation/` and `truth.json` under `out`.
pub fn cmd_simulate(cfg: &Config, out: &Path) -> Result<()> {
    let sim = simulate_dataset(&cfg.scenario, cfg.seed)?;
    let (train, valid) = split_train_validation(&sim.data, cfg.scenario.train_fraction, cfg.seed)?;
    create_dir(out)?;
    sim.data.write_dir(&out.join("all"))?;
    train.write_dir(&out.join("train"))?;
    valid.write_dir(&out.join("validation"))?;
    write_json(&out.join("truth.json"), &sim.truth)?;
    let sh = &sim.truth.event_shares;
    println!(
        "simulated {} subjects ({} train, {} validation): censored {:.3}, cause 1 {:.3}, cause 2 {:.3}",
        sim.data.n_subjects(),
        train.n_subjects(),
        valid.n_subjects(),
        sh[0],
        sh[1],
        sh[2]
    );
    Ok(())
}

/// Fit-level diagnostics: warnings from every chain.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitReport {
    pub warnings: Vec<String>,
    pub max_rhat: BTreeMap<String, f64>,
}

pub fn cmd_fit(cfg: &Config, data_dir: &Path, out: &Path) -> Result<()> {
    let data = LongitudinalDataset::read_dir(data_dir, None, None)?;
    info!("{} subjects, {} markers, {} covariates", data.n_subjects(), data.markers().len(), data.covariate_names().len());
    let fits = fit_all_markers(&data, &cfg.stage1)?;
    create_dir(&out.join(STAGE1_DIR))?;
    let mut report = FitReport::default();
    for f in &fits {
        let path = out.join(STAGE1_DIR).join(format!("{}.json", f.marker.name));
        std::fs::write(&path, f.to_json()?).map_err(|e| Error::io(&path, e))?;
        report.warnings.extend(f.diagnostics.warnings.iter().cloned());
        report.max_rhat.insert(format!("stage1:{}", f.marker.name), f.diagnostics.max_rhat);
    }
    let traj = PluginTrajectories::from_fits(&fits, &data)?;
    let names: Vec<String> = fits.iter().map(|f| f.marker.name.clone()).collect();
    let model = Stage2Model::new(&traj, &names, &data, &cfg.stage2.baseline)?;
    let mut s2 = cfg.stage2.clone();
    s2.spike_slab.family = cfg.selection.family;
    let fit = fit_selection_model(&model, &s2)?;
    fit.write_draws_csv(&out.join(DRAWS_FILE))?;
    write_json(&out.join(SUMMARY_FILE), &fit.summary())?;
    report.warnings.extend(fit.diagnostics.warnings.iter().cloned());
    report.max_rhat.insert("stage2".into(), fit.diagnostics.max_rhat);
    write_json(&out.join(DIAGNOSTICS_FILE), &report)?;
    for w in &report.warnings {
        println!("warning: {w}");
    }
    println!("fitted {} markers and the stage-2 {} model into {}", fits.len(), cfg.selection.family, out.display());
    Ok(())
}

/// Stage-1 fits saved by `fit`, in marker order.
pub fn read_stage1(fit_dir: &Path) -> Result<Vec<OneMarkerFit>> {
    let dir = fit_dir.join(STAGE1_DIR);
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut fits = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(&dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            fits.push(OneMarkerFit::from_json(&text)?);
        }
    }
    if fits.is_empty() {
        return Err(Error::Data(format!("no Stage-1 fits in {}", dir.display())));
    }
    fits.sort_by_key(|f| f.marker_index);
    Ok(fits)
}

/// Reads data with the marker set of the Stage-1 fits.
fn read_matching(data_dir: &Path, fits: &[OneMarkerFit], n_causes: usize) -> Result<LongitudinalDataset> {
    let specs: Vec<_> = fits.iter().map(|f| f.marker.clone()).collect();
    let data = LongitudinalDataset::read_dir(data_dir, Some(&specs), Some(n_causes))?;
    if data.covariate_names() != fits[0].covariate_names.as_slice() {
        return Err(Error::Data("covariates differ from those of the fitted model".into()));
    }
    Ok(data)
}

pub fn cmd_select(cfg: &Config, fit_dir: &Path, out: &Path, rule: Option<Rule>, data: Option<&Path>) -> Result<()> {
    let fit = Stage2Fit::read(&fit_dir.join(DRAWS_FILE), &fit_dir.join(SUMMARY_FILE))?;
    let rule = rule.unwrap_or(cfg.selection.rule);
    let report = SelectionReport::from_fit(&fit, rule)?;
    report.write_csv(out)?;
    let n_sel = report.entries.iter().filter(|e| e.selected).count();
    println!("{n_sel} of {} coefficients selected under {rule}", report.entries.len());
    if let Some(data_dir) = data {
        let fits = read_stage1(fit_dir)?;
        let data = read_matching(data_dir, &fits, fit.n_causes)?;
        let traj = PluginTrajectories::from_fits(&fits, &data)?;
        let names: Vec<String> = fits.iter().map(|f| f.marker.name.clone()).collect();
        let model = Stage2Model::with_knots(&traj, &names, &data, fit.knots.clone(), cfg.stage2.baseline.quadrature_nodes)?;
        let refit = refit_selected(&model, &report.mask(), &cfg.stage2)?;
        refit.write_draws_csv(&fit_dir.join(REFIT_DRAWS_FILE))?;
        write_json(&fit_dir.join(REFIT_SUMMARY_FILE), &refit.summary())?;
        for w in &refit.diagnostics.warnings {
            println!("warning: {w}");
        }
        println!("refit of the selected model written to {}", fit_dir.display());
    }
    Ok(())
}

pub fn cmd_predict(cfg: &Config, fit_dir: &Path, data_dir: &Path, out: &Path, s: Option<Vec<f64>>, t: Option<f64>, raw: bool) -> Result<()> {
    let fits = read_stage1(fit_dir)?;
    let refit_path = fit_dir.join(REFIT_DRAWS_FILE);
    let use_refit = cfg.prediction.use_refit && !raw;
    let hazard = if use_refit && refit_path.exists() {
        Stage2Fit::read(&refit_path, &fit_dir.join(REFIT_SUMMARY_FILE))?
    } else {
        if use_refit {
            warn!("no refit in {}; predicting from the spike-and-slab draws (run `select --data` first)", fit_dir.display());
        }
        Stage2Fit::read(&fit_dir.join(DRAWS_FILE), &fit_dir.join(SUMMARY_FILE))?
    };
    let data = read_matching(data_dir, &fits, hazard.n_causes)?;
    let predictor = Predictor::from_fits(&fits, &hazard, &cfg.prediction)?;
    let landmarks = s.unwrap_or_else(|| cfg.prediction.landmarks.clone());
    let t = t.unwrap_or(cfg.prediction.window);
    let mut rows = Vec::new();
    for s in landmarks {
        let mut r = predict_landmark(&[&predictor], &fits, data.subjects(), s, t, &cfg.prediction, cfg.seed)?;
        info!("s={s}: {} subjects at risk", r[0].len());
        rows.append(&mut r[0]);
    }
    write_risk_csv(&rows, out)?;
    println!("{} predictions written to {}", rows.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalRow {
    s: f64,
    t: f64,
    auc: Option<f64>,
    bs: Option<f64>,
    n_cases: usize,
    n_controls: usize,
}

pub fn cmd_evaluate(predictions: &Path, data_dir: &Path, out: &Path) -> Result<()> {
    let rows = read_risk_csv(predictions)?;
    let data = LongitudinalDataset::read_dir(data_dir, None, None)?;
    let outcome: BTreeMap<&str, Outcome> =
        data.subjects().iter().map(|r| (r.id.as_str(), Outcome { time: r.event_time, cause: r.cause })).collect();
    let mut groups: Vec<((f64, f64), Vec<(f64, Outcome)>)> = Vec::new();
    for r in &rows {
        let o = *outcome.get(r.id.as_str()).ok_or_else(|| Error::Data(format!("prediction for unknown subject `{}`", r.id)))?;
        match groups.iter_mut().find(|(k, _)| *k == (r.s, r.t)) {
            Some((_, v)) => v.push((r.risk, o)),
            None => groups.push(((r.s, r.t), vec![(r.risk, o)])),
        }
    }
    let mut w = csv::Writer::from_path(out)?;
    for ((s, t), v) in groups {
        let (risks, outs): (Vec<f64>, Vec<Outcome>) = v.into_iter().unzip();
        let a = accuracy(&risks, &outs, s, t)?;
        if a.auc.is_none() {
            warn!("s={s}, t={t}: AUC undefined ({} cases, {} controls)", a.n_cases, a.n_controls);
        }
        w.serialize(EvalRow { s, t, auc: a.auc, bs: a.bs, n_cases: a.n_cases, n_controls: a.n_controls })?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    println!("evaluation written to {}", out.display());
    Ok(())
}

pub fn cmd_replicate(mut cfg: Config, out: &Path, full: bool, scenarios: Option<Vec<String>>, replicates: Option<usize>) -> Result<()> {
    if full {
        cfg = cfg.full_scale();
    }
    if let Some(r) = replicates {
        cfg.replicate.replicates = r;
    }
    if let Some(names) = scenarios {
        for n in &names {
            if !cfg.replicate.scenarios.iter().any(|s| &s.name == n) {
                return Err(Error::Config(format!("unknown scenario `{n}`")));
            }
        }
        cfg.replicate.scenarios.retain(|s| names.contains(&s.name));
    }
    let outcomes = run_grid(&cfg)?;
    write_tables(out, &cfg, &outcomes)?;
    let n_warn: usize = outcomes.iter().map(|o| o.warnings.len()).sum();
    if n_warn > 0 {
        println!("{n_warn} convergence warning(s); see replicates.jsonl");
    }
    println!("{} replicate(s) written to {} (config {})", outcomes.len(), out.display(), &cfg.hash()[..12]);
    Ok(())
}
