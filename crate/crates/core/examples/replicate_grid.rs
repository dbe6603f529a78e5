//! Run a small simulation study end to end and print the selection and
//! prediction tables.
//!
//! ```text
//! cargo run --release --example replicate_grid -- [replicates] [stage1 iters] [stage2 iters] [scenario...]
//! ```
//!
//! Scenarios are names from the default grid (`easy`, `hard`, `weak`,
//! `single-cause-1`); without names only `easy` runs.

use std::time::Instant;

use twostage::config::{default_scenarios, Config};
use twostage::experiment::{accuracy_table, run_grid, selection_table};
use twostage::samplers::McmcConfig;

fn main() -> twostage::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let replicates: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let it1: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let it2: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let names: Vec<&str> = if args.len() > 4 { args[4..].iter().map(String::as_str).collect() } else { vec!["easy"] };

    let mut cfg = Config::default().with_seed(11);
    cfg.stage1.mcmc = McmcConfig { chains: 1, iters: it1, burnin: it1 / 2, thin: 1, seed: 11 };
    cfg.stage2.mcmc = McmcConfig { chains: 1, iters: it2, burnin: it2 / 3, thin: 1, seed: 11 };
    cfg.replicate.replicates = replicates;
    cfg.replicate.scenarios = default_scenarios().into_iter().filter(|s| names.contains(&s.name.as_str())).collect();
    cfg.prediction.landmarks = vec![0.0, 0.5];

    let start = Instant::now();
    let outcomes = run_grid(&cfg)?;
    println!("{} replicate(s) in {:.1?}", outcomes.len(), start.elapsed());

    println!("\n{:<16} {:<4} {:<6} {:<11} {:>13} {:>13} {:>13}", "scenario", "fam", "rule", "group", "TPR", "FPR", "MCC");
    for r in selection_table(&outcomes) {
        println!(
            "{:<16} {:<4} {:<6} {:<11} {:>6.3} ({:.3}) {:>6.3} ({:.3}) {:>6.3} ({:.3})",
            r.scenario,
            r.family.to_string(),
            r.rule.name(),
            r.group,
            r.tpr.0,
            r.tpr.1,
            r.fpr.0,
            r.fpr.1,
            r.mcc.0,
            r.mcc.1
        );
    }
    println!("\n{:<16} {:<10} {:>5} {:>5} {:>15} {:>15}", "scenario", "method", "s", "t", "AUC", "BS");
    for r in accuracy_table(&outcomes) {
        println!(
            "{:<16} {:<10} {:>5} {:>5} {:>6.3} ({:.3}) {:>6.3} ({:.3})",
            r.scenario, r.method, r.s, r.t, r.auc.0, r.auc.1, r.bs.0, r.bs.1
        );
    }
    for o in &outcomes {
        for w in &o.warnings {
            println!("{} #{}: {w}", o.scenario, o.replicate);
        }
    }
    Ok(())
}
