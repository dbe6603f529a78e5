//! The two-stage pipeline on one simulated dataset: one-marker joint models,
//! the Stage-2 spike-and-slab hazard model, the selection report under both
//! rules, and the refit of the selected model.
//!
//! ```text
//! cargo run --release --example two_stage_selection -- [N] [ds|cs]
//! ```

use std::time::Instant;

use twostage::config::Config;
use twostage::metrics::confusion_metrics;
use twostage::samplers::{Family, McmcConfig};
use twostage::selection::{format_bf, Rule, SelectionReport};
use twostage::simgen::{simulate_dataset, split_train_validation, ScenarioConfig};
use twostage::stage1::{fit_all_markers, PluginTrajectories};
use twostage::stage2::{fit_selection_model, refit_selected, CoefKind, Stage2Model};

fn main() -> twostage::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let family = match args.get(2).map(String::as_str) {
        Some("cs") => Family::Cs,
        _ => Family::Ds,
    };

    let mut cfg = Config::default().with_seed(5);
    cfg.stage1.mcmc = McmcConfig { chains: 1, iters: 1000, burnin: 500, thin: 1, seed: 5 };
    cfg.stage2.mcmc = McmcConfig { chains: 1, iters: 2000, burnin: 700, thin: 1, seed: 5 };
    cfg.stage2.spike_slab.family = family;
    let scen = ScenarioConfig { n_subjects: n, ..Default::default() };
    let sim = simulate_dataset(&scen, cfg.seed)?;
    let (train, _) = split_train_validation(&sim.data, scen.train_fraction, cfg.seed)?;
    println!("{} training subjects; event shares {:.3?}", train.n_subjects(), sim.truth.event_shares);

    let t0 = Instant::now();
    let fits = fit_all_markers(&train, &cfg.stage1)?;
    println!("stage 1: {} one-marker joint models in {:.1?}", fits.len(), t0.elapsed());
    let traj = PluginTrajectories::from_fits(&fits, &train)?;
    let names: Vec<String> = fits.iter().map(|f| f.marker.name.clone()).collect();
    let model = Stage2Model::new(&traj, &names, &train, &cfg.stage2.baseline)?;

    let t0 = Instant::now();
    let fit = fit_selection_model(&model, &cfg.stage2)?;
    println!("stage 2 ({family}): {} draws in {:.1?}\n", fit.n_draws(), t0.elapsed());

    let report = SelectionReport::from_fit(&fit, Rule::LBFDR)?;
    let truth: Vec<bool> = report
        .entries
        .iter()
        .map(|e| {
            let c = &e.coefficient;
            let j: usize = c.name[1..].parse().expect("generated names");
            match c.kind {
                CoefKind::Gamma => sim.truth.covariate_mask[c.cause - 1][j - 1],
                CoefKind::Alpha => sim.truth.marker_mask[c.cause - 1][j - 1],
            }
        })
        .collect();
    println!("{:<14} {:>5} {:>7} {:>6} {:>7} {:>8}", "coefficient", "true", "mean", "sd", "lBFDR", "BF");
    for (e, t) in report.entries.iter().zip(&truth) {
        if *t || e.lbfdr < 0.5 {
            println!(
                "{:<14} {:>5} {:>7.3} {:>6.3} {:>7.3} {:>8}",
                e.coefficient.label(),
                if *t { "yes" } else { "" },
                e.summary.mean,
                e.summary.sd,
                e.lbfdr,
                format_bf(e.bf)
            );
        }
    }
    for rule in [Rule::LBFDR, Rule::BF] {
        let mask = report.with_rule(rule).mask();
        let c = confusion_metrics(&mask, &truth)?;
        println!("\n{rule}: TPR {:.3}  FPR {:.3}  MCC {:.3}", c.tpr, c.fpr, c.mcc);
    }

    let mask = report.mask();
    let refit = refit_selected(&model, &mask, &cfg.stage2)?;
    println!("\nrefit of the {} selected coefficients:", mask.iter().filter(|m| **m).count());
    for (c, e) in report.entries.iter().enumerate().filter(|(c, _)| mask[*c]) {
        let d = refit.value_draws(c);
        println!("  {:<14} {:>7.3} (spike-and-slab {:.3})", e.coefficient.label(), d.iter().sum::<f64>() / d.len() as f64, e.summary.mean);
    }
    Ok(())
}
