//! Simulation study harness: simulate, fit both stages, select, refit,
//! predict on the validation half and score against the truth.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dynpred::{predict_landmark, Predictor};
use crate::error::{Error, Result};
use crate::hazard::{CauseEffects, HazardParams, PiecewiseBaseline};
use crate::longitudinal::MarkerModelSpec;
use crate::metrics::{accuracy, confusion_metrics, Confusion, Outcome};
use crate::samplers::Family;
use crate::selection::{Rule, SelectionReport};
use crate::simgen::{simulate_dataset, split_train_validation, ScenarioConfig, Truth};
use crate::stage1::{fit_all_markers, subject_rng, OneMarkerFit, PluginTrajectories};
use crate::stage2::{fit_selection_model, refit_selected, CoefKind, Stage2Fit, Stage2Model};

/// Seed of a labelled sub-task, derived from the run seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    subject_rng(seed, label).next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub family: Family,
    pub rule: Rule,
    pub total: Confusion,
    pub markers: Confusion,
    pub covariates: Confusion,
    /// Markers selected for cause 2.
    pub cause2_markers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyScore {
    /// `CS/lBFDR`-style label, or `Real`.
    pub method: String,
    pub s: f64,
    pub t: f64,
    pub auc: Option<f64>,
    pub bs: Option<f64>,
    pub n_cases: usize,
    pub n_controls: usize,
}

/// Posterior means of a truly non-zero association under the spike-and-slab
/// fit and under the refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecovery {
    pub family: Family,
    pub rule: Rule,
    pub coefficient: String,
    pub truth: f64,
    pub slab_mean: f64,
    pub refit_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub scenario: String,
    pub replicate: usize,
    pub seed: u64,
    pub event_shares: Vec<f64>,
    pub selection: Vec<SelectionScore>,
    pub accuracy: Vec<AccuracyScore>,
    pub alpha_recovery: Vec<AlphaRecovery>,
    pub warnings: Vec<String>,
    pub seconds: f64,
}

pub fn method_label(family: Family, rule: Rule) -> String {
    format!("{family}/{}", rule.name())
}

/// True coefficient mask in the Stage-2 layout.
fn truth_layout(truth: &Truth) -> (Vec<bool>, Vec<bool>) {
    let mut mask = Vec::new();
    let mut is_marker = Vec::new();
    for l in 0..truth.gamma.len() {
        for g in &truth.gamma[l] {
            mask.push(*g != 0.0);
            is_marker.push(false);
        }
        for a in &truth.alpha[l] {
            mask.push(*a != 0.0);
            is_marker.push(true);
        }
    }
    (mask, is_marker)
}

fn pick(v: &[bool], keep: &[bool], want: bool) -> Vec<bool> {
    v.iter().zip(keep).filter(|(_, k)| **k == want).map(|(x, _)| *x).collect()
}

/// The comparator that knows the true parameters and random effects.
fn real_predictor(truth: &Truth, horizon: f64, quadrature_nodes: usize) -> Result<Predictor> {
    let cfg = &truth.config;
    let params = HazardParams::new(
        truth.gamma.iter().zip(&truth.alpha).map(|(g, a)| CauseEffects { gamma: g.clone(), alpha: a.clone() }).collect(),
        PiecewiseBaseline::constant(horizon, &cfg.baseline)?,
    )?;
    Predictor::new(
        cfg.marker_names().into_iter().map(MarkerModelSpec::linear).collect(),
        vec![cfg.beta.to_vec(); cfg.n_markers],
        params.clone(),
        vec![params],
        quadrature_nodes,
    )
}

/// One replicate of one scenario.
pub fn run_replicate(cfg: &Config, scenario: &str, scen: &ScenarioConfig, replicate: usize) -> Result<ReplicateOutcome> {
    let start = Instant::now();
    let seed = derive_seed(cfg.seed, &format!("{scenario}/{replicate}"));
    let sim = simulate_dataset(scen, seed)?;
    let (train, valid) = split_train_validation(&sim.data, scen.train_fraction, seed)?;
    let mut warnings = Vec::new();

    let mut s1 = cfg.stage1.clone();
    s1.mcmc.seed = seed;
    let fits: Vec<OneMarkerFit> = fit_all_markers(&train, &s1)?;
    for f in &fits {
        warnings.extend(f.diagnostics.warnings.iter().cloned());
    }
    let traj = PluginTrajectories::from_fits(&fits, &train)?;
    let names: Vec<String> = fits.iter().map(|f| f.marker.name.clone()).collect();
    let model = Stage2Model::new(&traj, &names, &train, &cfg.stage2.baseline)?;
    let (truth_mask, is_marker) = truth_layout(&sim.truth);
    let coefs = model.coefficients();
    if coefs.len() != truth_mask.len() {
        return Err(Error::Config("Stage-2 layout does not match the simulated truth".into()));
    }

    let mut selection = Vec::new();
    let mut alpha_recovery = Vec::new();
    // refits depend only on the mask; identical masks share one refit
    let mut refits: Vec<(Vec<bool>, Stage2Fit)> = Vec::new();
    let mut methods: Vec<(String, usize, Option<Stage2Fit>)> = Vec::new();
    for &family in &cfg.replicate.families {
        let mut s2 = cfg.stage2.clone();
        s2.spike_slab.family = family;
        s2.mcmc.seed = seed;
        let fit = fit_selection_model(&model, &s2)?;
        warnings.extend(fit.diagnostics.warnings.iter().cloned());
        let base = SelectionReport::from_fit(&fit, Rule::LBFDR)?;
        for &rule in &cfg.replicate.rules {
            let report = base.with_rule(rule);
            let mask = report.mask();
            selection.push(SelectionScore {
                family,
                rule,
                total: confusion_metrics(&mask, &truth_mask)?,
                markers: confusion_metrics(&pick(&mask, &is_marker, true), &pick(&truth_mask, &is_marker, true))?,
                covariates: confusion_metrics(&pick(&mask, &is_marker, false), &pick(&truth_mask, &is_marker, false))?,
                cause2_markers: report.selected_of(2, CoefKind::Alpha).len(),
            });
            let idx = match refits.iter().position(|(m, _)| *m == mask) {
                Some(i) => i,
                None => {
                    let r = refit_selected(&model, &mask, &s2)?;
                    refits.push((mask.clone(), r));
                    refits.len() - 1
                }
            };
            let refit = &refits[idx].1;
            for (c, coef) in coefs.iter().enumerate() {
                if coef.kind == CoefKind::Alpha && truth_mask[c] && mask[c] {
                    let mean = |f: &Stage2Fit| f.value_draws(c).iter().sum::<f64>() / f.n_draws() as f64;
                    let k = names.iter().position(|n| *n == coef.name).expect("layout names");
                    alpha_recovery.push(AlphaRecovery {
                        family,
                        rule,
                        coefficient: coef.label(),
                        truth: sim.truth.alpha[coef.cause - 1][k],
                        slab_mean: mean(&fit),
                        refit_mean: mean(refit),
                    });
                }
            }
            let raw = (!cfg.prediction.use_refit).then(|| fit.clone());
            methods.push((method_label(family, rule), idx, raw));
        }
    }

    // predictors: one per distinct refit (or per raw fit)
    let mut predictors: Vec<Predictor> = Vec::new();
    let mut method_predictor = Vec::new();
    let mut by_refit: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, idx, raw) in &methods {
        let p = match raw {
            Some(f) => {
                predictors.push(Predictor::from_fits(&fits, f, &cfg.prediction)?);
                predictors.len() - 1
            }
            None => *by_refit.entry(*idx).or_insert_with(|| {
                predictors.push(Predictor::from_fits(&fits, &refits[*idx].1, &cfg.prediction).expect("fit-derived predictor"));
                predictors.len() - 1
            }),
        };
        method_predictor.push(p);
    }
    let t = cfg.prediction.window;
    let max_s = cfg.prediction.landmarks.iter().copied().fold(0.0, f64::max);
    let real = real_predictor(&sim.truth, (max_s + t).max(scen.admin_censoring) * 1.01, cfg.prediction.quadrature_nodes)?;
    let refs: Vec<&Predictor> = predictors.iter().collect();
    let mut acc = Vec::new();
    for &s in &cfg.prediction.landmarks {
        let at_risk: Vec<_> = valid.subjects().iter().filter(|r| r.event_time > s).collect();
        let outcomes: Vec<Outcome> = at_risk.iter().map(|r| Outcome { time: r.event_time, cause: r.cause }).collect();
        let rows = predict_landmark(&refs, &fits, valid.subjects(), s, t, &cfg.prediction, seed)?;
        for ((label, _, _), &p) in methods.iter().zip(&method_predictor) {
            let risks: Vec<f64> = rows[p].iter().map(|r| r.risk).collect();
            let a = accuracy(&risks, &outcomes, s, t)?;
            acc.push(AccuracyScore { method: label.clone(), s, t, auc: a.auc, bs: a.bs, n_cases: a.n_cases, n_controls: a.n_controls });
        }
        let risks = at_risk
            .iter()
            .map(|r| {
                let b: Vec<Vec<f64>> = sim.truth.random_effects_of(&r.id).expect("simulated subject").iter().map(|b| b.to_vec()).collect();
                real.risk_point(&r.covariates, &b, s, t)
            })
            .collect::<Result<Vec<f64>>>()?;
        let a = accuracy(&risks, &outcomes, s, t)?;
        acc.push(AccuracyScore { method: "Real".into(), s, t, auc: a.auc, bs: a.bs, n_cases: a.n_cases, n_controls: a.n_controls });
    }
    let seconds = start.elapsed().as_secs_f64();
    info!("{scenario} replicate {replicate} done in {seconds:.1}s");
    Ok(ReplicateOutcome {
        scenario: scenario.into(),
        replicate,
        seed,
        event_shares: sim.truth.event_shares.clone(),
        selection,
        accuracy: acc,
        alpha_recovery,
        warnings,
        seconds,
    })
}

/// Every replicate of every scenario, in parallel on the current rayon pool.
/// Results are ordered by scenario then replicate.
pub fn run_grid(cfg: &Config) -> Result<Vec<ReplicateOutcome>> {
    let mut jobs = Vec::new();
    for sc in &cfg.replicate.scenarios {
        let scen = sc.resolve(&cfg.scenario)?;
        for r in 0..cfg.replicate.replicates {
            jobs.push((sc.name.clone(), scen.clone(), r));
        }
    }
    jobs.par_iter().map(|(name, scen, r)| run_replicate(cfg, name, scen, *r)).collect()
}

/// Mean and sample standard deviation; SD is NaN below two values.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() < 2 { f64::NAN } else { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    (m, sd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub scenario: String,
    pub family: Family,
    pub rule: Rule,
    pub group: String,
    pub tpr: (f64, f64),
    pub fpr: (f64, f64),
    pub mcc: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub scenario: String,
    pub method: String,
    pub s: f64,
    pub t: f64,
    pub auc: (f64, f64),
    pub bs: (f64, f64),
    /// Replicates in which the AUC was defined.
    pub n_auc: usize,
}

/// Replicate means and SDs of the selection scores, per scenario, family,
/// rule and coefficient group.
pub fn selection_table(outcomes: &[ReplicateOutcome]) -> Vec<SelectionRow> {
    let mut keys: Vec<(String, Family, Rule)> = Vec::new();
    for o in outcomes {
        for s in &o.selection {
            let k = (o.scenario.clone(), s.family, s.rule);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    let mut rows = Vec::new();
    for (scenario, family, rule) in keys {
        let scores: Vec<&SelectionScore> = outcomes
            .iter()
            .filter(|o| o.scenario == scenario)
            .flat_map(|o| o.selection.iter())
            .filter(|s| s.family == family && s.rule == rule)
            .collect();
        let groups: [(&str, fn(&SelectionScore) -> &Confusion); 3] =
            [("total", |s| &s.total), ("markers", |s| &s.markers), ("covariates", |s| &s.covariates)];
        for (group, get) in groups {
            let col = |f: fn(&Confusion) -> f64| mean_sd(&scores.iter().map(|s| f(get(s))).collect::<Vec<_>>());
            rows.push(SelectionRow {
                scenario: scenario.clone(),
                family,
                rule,
                group: group.into(),
                tpr: col(|c| c.tpr),
                fpr: col(|c| c.fpr),
                mcc: col(|c| c.mcc),
            });
        }
    }
    rows
}

/// Replicate means and SDs of AUC and Brier score per scenario, method and
/// landmark; undefined AUCs are left out.
pub fn accuracy_table(outcomes: &[ReplicateOutcome]) -> Vec<AccuracyRow> {
    let mut keys: Vec<(String, String, u64, u64)> = Vec::new();
    for o in outcomes {
        for a in &o.accuracy {
            let k = (o.scenario.clone(), a.method.clone(), a.s.to_bits(), a.t.to_bits());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    keys.into_iter()
        .map(|(scenario, method, s, t)| {
            let (s, t) = (f64::from_bits(s), f64::from_bits(t));
            let cells: Vec<&AccuracyScore> = outcomes
                .iter()
                .filter(|o| o.scenario == scenario)
                .flat_map(|o| o.accuracy.iter())
                .filter(|a| a.method == method && a.s == s && a.t == t)
                .collect();
            let aucs: Vec<f64> = cells.iter().filter_map(|a| a.auc).collect();
            let bss: Vec<f64> = cells.iter().filter_map(|a| a.bs).collect();
            AccuracyRow { scenario, method, s, t, auc: mean_sd(&aucs), bs: mean_sd(&bss), n_auc: aucs.len() }
        })
        .collect()
}

fn header(path: &Path, hash: &str) -> Result<std::fs::File> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "# config-sha256: {hash}").map_err(|e| Error::io(path, e))?;
    Ok(f)
}

fn num(x: f64) -> String {
    if x.is_nan() { "NA".into() } else { format!("{x:.3}") }
}

/// Writes `selection.csv`, `accuracy.csv` and `replicates.jsonl` to `dir`,
/// each starting with the configuration hash.
pub fn write_tables(dir: &Path, cfg: &Config, outcomes: &[ReplicateOutcome]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = cfg.hash();

    let path = dir.join("selection.csv");
    let mut w = csv::Writer::from_writer(header(&path, &hash)?);
    w.write_record(["scenario", "family", "rule", "group", "TPR Est.", "TPR SD.", "FPR Est.", "FPR SD.", "MCC Est.", "MCC SD."])?;
    for r in selection_table(outcomes) {
        w.write_record([
            r.scenario,
            r.family.to_string(),
            r.rule.name().to_string(),
            r.group,
            num(r.tpr.0),
            num(r.tpr.1),
            num(r.fpr.0),
            num(r.fpr.1),
            num(r.mcc.0),
            num(r.mcc.1),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("accuracy.csv");
    let mut w = csv::Writer::from_writer(header(&path, &hash)?);
    w.write_record(["scenario", "method", "s", "t", "AUC Est.", "AUC SD.", "BS Est.", "BS SD."])?;
    for r in accuracy_table(outcomes) {
        w.write_record([r.scenario, r.method, r.s.to_string(), r.t.to_string(), num(r.auc.0), num(r.auc.1), num(r.bs.0), num(r.bs.1)])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("replicates.jsonl");
    let mut f = header(&path, &hash)?;
    for o in outcomes {
        writeln!(f, "{}", serde_json::to_string(o)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
