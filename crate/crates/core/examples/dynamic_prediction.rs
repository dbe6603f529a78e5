//! Landmark predictions of the cause-1 risk in `(s, s + t]` for validation
//! subjects event-free at `s`, from the refit of the selected Stage-2 model,
//! scored with IPCW AUC and Brier score.
//!
//! ```text
//! cargo run --release --example dynamic_prediction -- [N]
//! ```

use twostage::config::Config;
use twostage::dynpred::{predict_landmark, Predictor};
use twostage::metrics::{accuracy, Outcome};
use twostage::samplers::McmcConfig;
use twostage::selection::{Rule, SelectionReport};
use twostage::simgen::{simulate_dataset, split_train_validation, ScenarioConfig};
use twostage::stage1::{fit_all_markers, PluginTrajectories};
use twostage::stage2::{fit_selection_model, refit_selected, Stage2Model};

fn main() -> twostage::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let mut cfg = Config::default().with_seed(8);
    cfg.stage1.mcmc = McmcConfig { chains: 1, iters: 1000, burnin: 500, thin: 1, seed: 8 };
    cfg.stage2.mcmc = McmcConfig { chains: 1, iters: 1500, burnin: 500, thin: 1, seed: 8 };
    let scen = ScenarioConfig { n_subjects: n, ..Default::default() };
    let sim = simulate_dataset(&scen, cfg.seed)?;
    let (train, valid) = split_train_validation(&sim.data, scen.train_fraction, cfg.seed)?;

    let fits = fit_all_markers(&train, &cfg.stage1)?;
    let traj = PluginTrajectories::from_fits(&fits, &train)?;
    let names: Vec<String> = fits.iter().map(|f| f.marker.name.clone()).collect();
    let model = Stage2Model::new(&traj, &names, &train, &cfg.stage2.baseline)?;
    let fit = fit_selection_model(&model, &cfg.stage2)?;
    let mask = SelectionReport::from_fit(&fit, Rule::LBFDR)?.mask();
    let refit = refit_selected(&model, &mask, &cfg.stage2)?;
    let predictor = Predictor::from_fits(&fits, &refit, &cfg.prediction)?;

    let t = cfg.prediction.window;
    println!("{:>5} {:>5} {:>8} {:>7} {:>7} {:>6} {:>9}", "s", "t", "at risk", "AUC", "BS", "cases", "controls");
    for &s in &cfg.prediction.landmarks {
        let rows = predict_landmark(&[&predictor], &fits, valid.subjects(), s, t, &cfg.prediction, cfg.seed)?.remove(0);
        let outcomes: Vec<Outcome> =
            valid.subjects().iter().filter(|r| r.event_time > s).map(|r| Outcome { time: r.event_time, cause: r.cause }).collect();
        let risks: Vec<f64> = rows.iter().map(|r| r.risk).collect();
        let a = accuracy(&risks, &outcomes, s, t)?;
        let auc = a.auc.map_or("NA".to_string(), |v| format!("{v:.3}"));
        let bs = a.bs.map_or("NA".to_string(), |v| format!("{v:.3}"));
        println!("{s:>5} {t:>5} {:>8} {auc:>7} {bs:>7} {:>6} {:>9}", rows.len(), a.n_cases, a.n_controls);
        if s == 0.0 {
            for r in rows.iter().take(3) {
                println!("      {}: risk {:.3} [{:.3}, {:.3}]", r.id, r.risk, r.lo95, r.hi95);
            }
        }
    }
    Ok(())
}
