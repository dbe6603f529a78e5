//! Fit one marker's joint model on simulated data and compare the posterior
//! with the simulation truth.
//!
//! ```text
//! cargo run --release --example stage1_single_marker -- [iters] [marker]
//! ```

use std::time::Instant;

use twostage::samplers::McmcConfig;
use twostage::simgen::{simulate_dataset, split_train_validation, ScenarioConfig};
use twostage::stage1::{fit_one_marker, Stage1Settings};

fn main() -> twostage::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let marker: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let cfg = ScenarioConfig::default();
    let sim = simulate_dataset(&cfg, 7)?;
    let (train, _) = split_train_validation(&sim.data, cfg.train_fraction, 7)?;
    let settings = Stage1Settings {
        mcmc: McmcConfig { chains: 2, iters, burnin: iters / 2, thin: 2, seed: 7 },
        ..Default::default()
    };
    let start = Instant::now();
    let fit = fit_one_marker(&train, marker, &settings)?;
    println!("marker {} fitted on {} subjects in {:.1?}", fit.marker.name, fit.subject_ids.len(), start.elapsed());

    let show = |name: &str, truth: f64| {
        let s = &fit.summaries[name];
        println!("{name:<16} truth {truth:>7.3}  mean {:>7.3}  sd {:.3}  95% [{:.3}, {:.3}]  R̂ {:.3}", s.mean, s.sd, s.lo, s.hi, fit.diagnostics.rhat[name]);
    };
    show("beta[0]", cfg.beta[0]);
    show("beta[1]", cfg.beta[1]);
    show("sigma2", cfg.sigma2);
    show("Sigma[0,0]", 1.0);
    show("Sigma[0,1]", 0.5);
    show("Sigma[1,1]", 1.0);
    for l in 0..2 {
        show(&format!("alpha[{}]", l + 1), sim.truth.alpha[l][marker]);
    }
    for (name, rate) in &fit.diagnostics.acceptance {
        println!("acceptance {name:<28} {rate:.3}");
    }
    for w in &fit.diagnostics.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
