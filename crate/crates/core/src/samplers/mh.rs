//! Gaussian random-walk Metropolis–Hastings with burn-in scale adaptation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TARGET_SCALAR: f64 = 0.44;
pub const TARGET_BLOCK: f64 = 0.23;

/// Proposal scale tuned by Robbins–Monro on the log scale while adapting,
/// then frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveScale {
    log_scale: f64,
    target: f64,
    adapting: bool,
    n_adapt: u64,
    proposed: u64,
    accepted: u64,
}

impl AdaptiveScale {
    pub fn new(initial: f64, target: f64) -> Self {
        Self {
            log_scale: initial.ln(),
            target,
            adapting: true,
            n_adapt: 0,
            proposed: 0,
            accepted: 0,
        }
    }

    pub fn scalar(initial: f64) -> Self {
        Self::new(initial, TARGET_SCALAR)
    }

    pub fn block(initial: f64) -> Self {
        Self::new(initial, TARGET_BLOCK)
    }

    /// A scale that never adapts.
    pub fn fixed(scale: f64) -> Self {
        let mut s = Self::new(scale, TARGET_SCALAR);
        s.adapting = false;
        s
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn is_adapting(&self) -> bool {
        self.adapting
    }

    /// Stop adapting and reset the acceptance counters.
    pub fn freeze(&mut self) {
        self.adapting = false;
        self.proposed = 0;
        self.accepted = 0;
    }

    /// Acceptance rate since the last freeze (or since creation).
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn record(&mut self, accept_prob: f64, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
        if self.adapting {
            self.n_adapt += 1;
            let gain = (self.n_adapt as f64).powf(-0.6);
            self.log_scale = (self.log_scale + gain * (accept_prob - self.target)).clamp(-20.0, 10.0);
        }
    }
}

/// Metropolis accept step shared by all kernels. NaN proposals are rejected;
/// a NaN at the current point is an error.
pub(crate) fn accept<R: Rng + ?Sized>(current_lt: f64, proposed_lt: f64, rng: &mut R) -> Result<(bool, f64)> {
    if current_lt.is_nan() {
        return Err(Error::Numerical("log target is NaN at the current state".into()));
    }
    if proposed_lt.is_nan() {
        return Ok((false, 0.0));
    }
    let delta = proposed_lt - current_lt;
    let prob = if delta >= 0.0 { 1.0 } else { delta.exp() };
    let u: f64 = rng.random();
    Ok((u < prob, prob))
}

/// One random-walk update of a scalar. Returns the new value, its log target
/// and whether the proposal was accepted.
pub fn mh_scalar<R: Rng + ?Sized>(
    current: f64,
    current_lt: f64,
    mut log_target: impl FnMut(f64) -> f64,
    scale: &mut AdaptiveScale,
    rng: &mut R,
) -> Result<(f64, f64, bool)> {
    let z: f64 = rng.sample(StandardNormal);
    let prop = current + scale.scale() * z;
    let prop_lt = log_target(prop);
    let (ok, prob) = accept(current_lt, prop_lt, rng)?;
    scale.record(prob, ok);
    Ok(if ok { (prop, prop_lt, true) } else { (current, current_lt, false) })
}

/// One random-walk update of a vector block with isotropic proposal.
/// `current_lt` is updated in place on acceptance.
pub fn mh_block<R: Rng + ?Sized>(
    state: &mut [f64],
    current_lt: &mut f64,
    mut log_target: impl FnMut(&[f64]) -> f64,
    scale: &mut AdaptiveScale,
    rng: &mut R,
) -> Result<bool> {
    let s = scale.scale();
    let prop: Vec<f64> = state
        .iter()
        .map(|x| {
            let z: f64 = rng.sample(StandardNormal);
            x + s * z
        })
        .collect();
    let prop_lt = log_target(&prop);
    let (ok, prob) = accept(*current_lt, prop_lt, rng)?;
    scale.record(prob, ok);
    if ok {
        state.copy_from_slice(&prop);
        *current_lt = prop_lt;
    }
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::stream_rng;

    #[test]
    fn zero_step_always_accepts() {
        let mut rng = stream_rng(1, 0);
        let mut scale = AdaptiveScale::fixed(0.0);
        for _ in 0..100 {
            let (_, _, ok) = mh_scalar(0.7, -0.245, |x| -0.5 * x * x, &mut scale, &mut rng).unwrap();
            assert!(ok);
        }
    }

    #[test]
    fn nan_at_current_is_fatal() {
        let mut rng = stream_rng(1, 1);
        let mut scale = AdaptiveScale::scalar(1.0);
        let err = mh_scalar(0.0, f64::NAN, |x| -x * x, &mut scale, &mut rng).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn standard_normal_target() {
        let mut rng = stream_rng(2, 0);
        let mut scale = AdaptiveScale::scalar(5.0);
        let lt = |x: f64| -0.5 * x * x;
        let (mut x, mut cur) = (3.0, lt(3.0));
        for _ in 0..5000 {
            (x, cur, _) = mh_scalar(x, cur, lt, &mut scale, &mut rng).unwrap();
        }
        scale.freeze();
        let n = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            (x, cur, _) = mh_scalar(x, cur, lt, &mut scale, &mut rng).unwrap();
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        let rate = scale.acceptance_rate();
        assert!((0.15..=0.5).contains(&rate), "rate {rate}");
    }

    #[test]
    fn block_adapts_toward_target() {
        let mut rng = stream_rng(3, 0);
        let mut scale = AdaptiveScale::block(0.01);
        let lt = |v: &[f64]| -0.5 * v.iter().map(|x| x * x).sum::<f64>();
        let mut v = vec![0.0; 4];
        let mut cur = lt(&v);
        for _ in 0..5000 {
            mh_block(&mut v, &mut cur, lt, &mut scale, &mut rng).unwrap();
        }
        scale.freeze();
        for _ in 0..20_000 {
            mh_block(&mut v, &mut cur, lt, &mut scale, &mut rng).unwrap();
        }
        let rate = scale.acceptance_rate();
        assert!((0.15..=0.5).contains(&rate), "rate {rate}");
    }
}
