//! Cumulative hazard of a marker-driven cause-specific hazard by per-segment
//! Gauss–Legendre quadrature, against the closed form for a linear trajectory.
//!
//! ```text
//! cargo run --release --example hazard_quadrature
//! ```

use twostage::hazard::{cause_hazard, cumulative_hazard, CauseEffects, FnTrajectories, HazardParams, PiecewiseBaseline};
use twostage::quadrature::Quadrature;

fn main() -> twostage::Result<()> {
    let baseline = PiecewiseBaseline::new(vec![0.0, 0.5, 1.2, 2.5], vec![vec![0.2, 0.6, 0.35]])?;
    let params = HazardParams::new(vec![CauseEffects { gamma: vec![0.5, -0.3], alpha: vec![0.9] }], baseline.clone())?;
    // η(t) = -0.4 + 0.7 t
    let traj = FnTrajectories::new(1, |_, _, t| -0.4 + 0.7 * t);
    let w = [1.2, 1.0];
    let a: f64 = 0.5 * w[0] - 0.3 * w[1] + 0.9 * -0.4;
    let b: f64 = 0.9 * 0.7;

    let exact = |t: f64| -> f64 {
        let k = baseline.knots();
        (0..baseline.n_intervals())
            .filter(|&j| t > k[j])
            .map(|j| {
                let hi = t.min(k[j + 1]);
                baseline.heights(0)[j] * a.exp() * ((b * hi).exp() - (b * k[j]).exp()) / b
            })
            .sum()
    };

    println!("{:>5} {:>10} {:>14} {:>14} {:>10}", "nodes", "t", "quadrature", "closed form", "rel err");
    for nodes in [3, 7, 15] {
        let quad = Quadrature::new(nodes)?;
        for t in [0.3, 1.0, 2.4] {
            let q = cumulative_hazard(&params, &traj, &quad, 0, &w, 0, t)?;
            let e = exact(t);
            println!("{nodes:>5} {t:>10.2} {q:>14.10} {e:>14.10} {:>10.1e}", (q / e - 1.0).abs());
        }
    }
    println!("\nhazard at t = 1: {:.6}", cause_hazard(&params, &traj, 0, &w, 0, 1.0)?);
    Ok(())
}
