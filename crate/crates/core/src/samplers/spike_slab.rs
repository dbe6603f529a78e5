//! Spike-and-slab coordinate kernels.
//!
//! Each penalized coefficient carries an inclusion indicator, a Beta-distributed
//! inclusion probability `π` and an inverse-gamma slab variance. The indicator
//! is stored as `included` (1 = coefficient drawn from the slab) for both
//! families, so selection code reads the same way for CS and DS.
//!
//! With `collapse_slab_variance` the indicator (CS) or the indicator/value pair
//! (DS) is drawn with the slab variance integrated out, which turns the slab
//! into a Student-t with `2a` degrees of freedom and scale `sqrt(b/a)`; the
//! variance is then redrawn from its full conditional. Both orderings leave the
//! joint posterior invariant.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::conjugate::inverse_gamma;
use super::mh::{accept, AdaptiveScale};
use super::{Family, SpikeSlabConfig};
use crate::error::Result;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log-likelihood of the model viewed as a function of one coefficient, all
/// other parameters held fixed.
pub trait CoordinateLikelihood {
    /// Log-likelihood at `value`, up to an additive constant that stays fixed
    /// until the next [`accept`](Self::accept).
    fn log_lik(&mut self, value: f64) -> f64;
    /// First and second derivative of [`log_lik`](Self::log_lik) at `value`.
    fn derivatives(&mut self, value: f64) -> (f64, f64);
    /// The chain has moved the coefficient to `value`.
    fn accept(&mut self, value: f64);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeSlabState {
    pub value: f64,
    pub included: bool,
    pub pi: f64,
    pub slab_var: f64,
}

impl SpikeSlabState {
    /// Starting point: excluded, `π = a/(a+b)`, slab variance 1 (kept above the
    /// CS spike variance).
    pub fn initial(cfg: &SpikeSlabConfig) -> Self {
        let (a, b) = cfg.inclusion;
        Self {
            value: 0.0,
            included: false,
            pi: a / (a + b),
            slab_var: 1.0f64.max(10.0 * cfg.tau2),
        }
    }
}

/// Random-walk scales for the two mixture components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeSlabScales {
    pub spike: AdaptiveScale,
    pub slab: AdaptiveScale,
}

impl SpikeSlabScales {
    pub fn new(cfg: &SpikeSlabConfig) -> Self {
        Self {
            spike: AdaptiveScale::scalar(cfg.tau2.sqrt()),
            slab: AdaptiveScale::scalar(0.1),
        }
    }

    pub fn freeze(&mut self) {
        self.spike.freeze();
        self.slab.freeze();
    }
}

fn ln_normal(x: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + x * x / var)
}

/// Log slab density of `value`: Student-t marginal when collapsed, otherwise
/// `N(0, slab_var)`.
pub fn ln_slab(value: f64, state: &SpikeSlabState, cfg: &SpikeSlabConfig) -> f64 {
    if cfg.collapse_slab_variance {
        let (a, b) = cfg.slab;
        ln_gamma(a + 0.5) - ln_gamma(a) - 0.5 * (LN_2PI + b.ln()) - (a + 0.5) * (value * value / (2.0 * b)).ln_1p()
    } else {
        ln_normal(value, state.slab_var)
    }
}

/// CS: probability that the coefficient belongs to the slab given its value.
pub fn cs_inclusion_probability(value: f64, state: &SpikeSlabState, cfg: &SpikeSlabConfig) -> f64 {
    let w1 = state.pi.ln() + ln_slab(value, state, cfg);
    let w0 = (1.0 - state.pi).ln() + ln_normal(value, cfg.tau2);
    1.0 / (1.0 + (w0 - w1).exp())
}

pub(crate) fn draw_pi<R: Rng + ?Sized>(included: bool, cfg: &SpikeSlabConfig, rng: &mut R) -> f64 {
    let (a, b) = cfg.inclusion;
    let inc = included as u8 as f64;
    let p: f64 = Beta::new(a + inc, b + 1.0 - inc).expect("positive beta parameters").sample(rng);
    // keep π strictly inside (0, 1)
    p.clamp(1e-300, 1.0 - f64::EPSILON)
}

fn draw_slab_var<R: Rng + ?Sized>(state: &SpikeSlabState, cfg: &SpikeSlabConfig, rng: &mut R) -> f64 {
    let (a, b) = cfg.slab;
    if state.included {
        inverse_gamma(a + 0.5, b + 0.5 * state.value * state.value, rng)
    } else {
        inverse_gamma(a, b, rng)
    }
}

/// Random-walk step on the coefficient with log prior `ln_prior`.
fn rw_step<R: Rng + ?Sized>(
    value: f64,
    lik: &mut dyn CoordinateLikelihood,
    ln_prior: impl Fn(f64) -> f64,
    scale: &mut AdaptiveScale,
    rng: &mut R,
) -> Result<f64> {
    let cur = lik.log_lik(value) + ln_prior(value);
    let z: f64 = rng.sample(StandardNormal);
    let prop = value + scale.scale() * z;
    let prop_lt = lik.log_lik(prop) + ln_prior(prop);
    let (ok, prob) = accept(cur, prop_lt, rng)?;
    scale.record(prob, ok);
    if ok {
        lik.accept(prop);
        Ok(prop)
    } else {
        Ok(value)
    }
}

/// One sweep of the continuous-spike kernel: indicator, slab variance,
/// coefficient, inclusion probability. Returns `true` when the slab variance
/// had to be clamped above the spike variance.
pub fn update_cs<R: Rng + ?Sized>(
    state: &mut SpikeSlabState,
    lik: &mut dyn CoordinateLikelihood,
    cfg: &SpikeSlabConfig,
    scales: &mut SpikeSlabScales,
    rng: &mut R,
) -> Result<bool> {
    debug_assert_eq!(cfg.family, Family::Cs);
    let p = cs_inclusion_probability(state.value, state, cfg);
    state.included = rng.random::<f64>() < p;

    let mut clamped = false;
    state.slab_var = draw_slab_var(state, cfg, rng);
    if state.slab_var <= cfg.tau2 {
        state.slab_var = cfg.tau2 * (1.0 + 1e-6);
        clamped = true;
    }

    let var = if state.included { state.slab_var } else { cfg.tau2 };
    let scale = if state.included { &mut scales.slab } else { &mut scales.spike };
    state.value = rw_step(state.value, lik, |v| ln_normal(v, var), scale, rng)?;

    state.pi = draw_pi(state.included, cfg, rng);
    Ok(clamped)
}

/// Gaussian pseudo-prior for the DS jump: two Newton steps from 0 on the
/// log-likelihood plus a unit ridge, curvature at the result. It never looks at
/// the current coefficient, which keeps the jump reversible.
fn pseudo_prior(lik: &mut dyn CoordinateLikelihood) -> (f64, f64) {
    const RIDGE: f64 = 1.0;
    let mut v = 0.0;
    for _ in 0..2 {
        let (g, h) = lik.derivatives(v);
        let (g, h) = (g - v / RIDGE, h - 1.0 / RIDGE);
        if !(h < 0.0 && g.is_finite() && h.is_finite()) {
            break;
        }
        v += (-g / h).clamp(-5.0, 5.0);
    }
    let (_, h) = lik.derivatives(v);
    let h = h - 1.0 / RIDGE;
    let sd = if h < 0.0 && h.is_finite() { (-1.0 / h).sqrt() } else { RIDGE.sqrt() };
    (v, sd)
}

/// One sweep of the Dirac-spike kernel: trans-dimensional toggle of the
/// indicator, random walk on the coefficient when included, slab variance,
/// inclusion probability. Excluded coefficients are exactly 0.
pub fn update_ds<R: Rng + ?Sized>(
    state: &mut SpikeSlabState,
    lik: &mut dyn CoordinateLikelihood,
    cfg: &SpikeSlabConfig,
    scales: &mut SpikeSlabScales,
    rng: &mut R,
) -> Result<()> {
    debug_assert_eq!(cfg.family, Family::Ds);
    let (m, sd) = pseudo_prior(lik);
    let ln_q = |v: f64| ln_normal(v - m, sd * sd);
    let l0 = lik.log_lik(0.0);
    if state.included {
        let v = state.value;
        let stay = state.pi.ln() + ln_slab(v, state, cfg) + lik.log_lik(v);
        let leave = (1.0 - state.pi).ln() + l0 + ln_q(v);
        if accept(stay, leave, rng)?.0 {
            state.included = false;
            state.value = 0.0;
            lik.accept(0.0);
        }
    } else {
        let z: f64 = rng.sample(StandardNormal);
        let v = m + sd * z;
        let stay = (1.0 - state.pi).ln() + l0 + ln_q(v);
        let enter = state.pi.ln() + ln_slab(v, state, cfg) + lik.log_lik(v);
        if accept(stay, enter, rng)?.0 {
            state.included = true;
            state.value = v;
            lik.accept(v);
        }
    }

    if state.included {
        let snapshot = state.clone();
        state.value = rw_step(state.value, lik, |v| ln_slab(v, &snapshot, cfg), &mut scales.slab, rng)?;
    }
    state.slab_var = draw_slab_var(state, cfg, rng);
    state.pi = draw_pi(state.included, cfg, rng);
    Ok(())
}

/// Random-walk update of an unpenalized coefficient with a `N(0, variance)` prior.
pub fn update_normal<R: Rng + ?Sized>(
    value: f64,
    lik: &mut dyn CoordinateLikelihood,
    variance: f64,
    scale: &mut AdaptiveScale,
    rng: &mut R,
) -> Result<f64> {
    rw_step(value, lik, |v| ln_normal(v, variance), scale, rng)
}
