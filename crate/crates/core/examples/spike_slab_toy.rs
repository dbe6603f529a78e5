//! Continuous- and Dirac-spike kernels on single coefficients with Gaussian
//! likelihoods of increasing signal strength (likelihood peak / standard
//! error). Prints inclusion frequencies with the lBFDR and Bayes-factor rules.
//!
//! ```text
//! cargo run --release --example spike_slab_toy
//! ```

use twostage::samplers::spike_slab::{update_cs, update_ds, CoordinateLikelihood, SpikeSlabScales, SpikeSlabState};
use twostage::samplers::{stream_rng, Family, SpikeSlabConfig};
use twostage::selection::{bayes_factor, format_bf, lbfdr, Rule};

/// `N(peak, se²)` likelihood of one coefficient.
struct Gaussian {
    peak: f64,
    se: f64,
}

impl CoordinateLikelihood for Gaussian {
    fn log_lik(&mut self, v: f64) -> f64 {
        -0.5 * ((v - self.peak) / self.se).powi(2)
    }
    fn derivatives(&mut self, v: f64) -> (f64, f64) {
        let p = 1.0 / (self.se * self.se);
        (-(v - self.peak) * p, -p)
    }
    fn accept(&mut self, _: f64) {}
}

fn main() -> twostage::Result<()> {
    let (burnin, iters) = (5_000, 40_000);
    println!("{:<3} {:>6} {:>8} {:>8} {:>9} {:>6} {:>6}", "fam", "z", "P(in)", "lBFDR", "BF", "lBFDR", "BF");
    for family in [Family::Cs, Family::Ds] {
        let cfg = SpikeSlabConfig { family, ..Default::default() };
        for z in [0.0, 2.0, 3.0, 4.0, 6.0] {
            let mut lik = Gaussian { peak: 0.25 * z, se: 0.25 };
            let mut state = SpikeSlabState::initial(&cfg);
            let mut scales = SpikeSlabScales::new(&cfg);
            let mut rng = stream_rng(3, (z * 10.0) as u64);
            let mut inc = Vec::with_capacity(iters);
            for it in 0..burnin + iters {
                if it == burnin {
                    scales.freeze();
                }
                match family {
                    Family::Cs => {
                        update_cs(&mut state, &mut lik, &cfg, &mut scales, &mut rng)?;
                    }
                    Family::Ds => update_ds(&mut state, &mut lik, &cfg, &mut scales, &mut rng)?,
                }
                if it >= burnin {
                    inc.push(state.included);
                }
            }
            let l = lbfdr(&inc)?;
            let bf = bayes_factor(l, cfg.inclusion);
            let mark = |r: Rule| if r.selects(l, bf) { "yes" } else { "no" };
            println!(
                "{:<3} {z:>6.1} {:>8.3} {l:>8.3} {:>9} {:>6} {:>6}",
                family.to_string(),
                1.0 - l,
                format_bf(bf),
                mark(Rule::LBFDR),
                mark(Rule::BF)
            );
        }
    }
    Ok(())
}
