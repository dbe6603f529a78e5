//! Adaptive random-walk Metropolis on a standard normal target: the proposal
//! scale adapts during burn-in towards the scalar acceptance target, then
//! stays frozen while draws are kept.
//!
//! ```text
//! cargo run --release --example mh_standard_normal -- [iters]
//! ```

use twostage::samplers::diagnostics::Summary;
use twostage::samplers::mh::{mh_scalar, AdaptiveScale};
use twostage::samplers::stream_rng;

fn main() -> twostage::Result<()> {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50_000);
    let log_target = |x: f64| -0.5 * x * x;
    let mut rng = stream_rng(7, 0);
    // deliberately poor starting scale
    let mut scale = AdaptiveScale::scalar(25.0);
    let (mut x, mut lt) = (3.0, log_target(3.0));
    let mut kept = Vec::with_capacity(iters);
    for it in 0..2 * iters {
        if it == iters {
            println!("burn-in done: scale {:.3}, acceptance {:.3}", scale.scale(), scale.acceptance_rate());
            scale.freeze();
        }
        (x, lt, _) = mh_scalar(x, lt, log_target, &mut scale, &mut rng)?;
        if it >= iters {
            kept.push(x);
        }
    }
    let s = Summary::of(&kept);
    println!("kept {} draws: mean {:.4}, sd {:.4}, 95% interval [{:.3}, {:.3}]", kept.len(), s.mean, s.sd, s.lo, s.hi);
    println!("post-burn-in acceptance {:.3}", scale.acceptance_rate());
    Ok(())
}
