//! Event-rate calibration for the simulation scenarios.
//!
//! Draws a large dataset per scenario and prints the realized shares of
//! censored subjects and of each cause, so the baseline hazard default can be
//! checked against the intended event mix.
//!
//! ```text
//! cargo run --release --example simulate_scenario -- [N] [baseline]
//! ```

use twostage::simgen::{simulate_dataset, EffectPattern, ScenarioConfig};

fn main() -> twostage::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let h: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.22);

    println!("{:<14} {:>4} {:>4} {:>5} {:>9} {:>8} {:>8}", "pattern", "rho", "s2", "a*=g*", "censored", "cause1", "cause2");
    let grid = [
        (EffectPattern::Common, 0.1, 0.5, 1.0),
        (EffectPattern::Common, 0.1, 0.5, 0.5),
        (EffectPattern::Common, 0.7, 0.5, 0.5),
        (EffectPattern::Common, 0.1, 1.0, 1.0),
        (EffectPattern::SingleCause1, 0.1, 0.5, 0.5),
        (EffectPattern::SingleBoth, 0.1, 0.5, 0.5),
        (EffectPattern::Opposite, 0.1, 0.5, 0.5),
    ];
    for (pattern, rho, sigma2, eff) in grid {
        let cfg = ScenarioConfig {
            n_subjects: n,
            pattern,
            rho,
            sigma2,
            alpha_star: eff,
            gamma_star: eff,
            baseline: vec![h, h],
            ..Default::default()
        };
        let sim = simulate_dataset(&cfg, 2024)?;
        let s = &sim.truth.event_shares;
        println!("{:<14} {rho:>4} {sigma2:>4} {eff:>5} {:>9.3} {:>8.3} {:>8.3}", pattern.to_string(), s[0], s[1], s[2]);
    }
    Ok(())
}
