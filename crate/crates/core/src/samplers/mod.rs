//! MCMC building blocks: conjugate draws, adaptive random-walk Metropolis,
//! spike-and-slab coordinate kernels and convergence summaries.

pub mod conjugate;
pub mod diagnostics;
pub mod mh;
pub mod spike_slab;

pub use conjugate::{gibbs_gamma, gibbs_invwishart, gibbs_sigma2, gibbs_sigma2_ssr, inverse_gamma};
pub use diagnostics::{split_rhat, Summary};
pub use mh::{mh_block, mh_scalar, AdaptiveScale};
pub use spike_slab::{update_cs, update_ds, update_normal, CoordinateLikelihood, SpikeSlabScales, SpikeSlabState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chain control: `{chains, iters, burnin, thin, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub chains: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 2,
            iters: 6000,
            burnin: 3000,
            thin: 2,
            seed: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.thin == 0 {
            return Err(Error::Config("chains and thin must be positive".into()));
        }
        if self.burnin >= self.iters {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the iteration count ({})",
                self.burnin, self.iters
            )));
        }
        Ok(())
    }

    /// Draws kept per chain.
    pub fn kept_per_chain(&self) -> usize {
        (self.iters - self.burnin).div_ceil(self.thin)
    }

    /// Whether iteration `it` (0-based) is stored.
    pub fn keeps(&self, it: usize) -> bool {
        it >= self.burnin && (it - self.burnin) % self.thin == 0
    }
}

/// Hyperparameters for the unpenalized parts of the models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Variance `c` of the `N(0, c)` prior on regression coefficients.
    pub normal_variance: f64,
    /// Inverse-gamma `(a, b)` for residual variances.
    pub sigma2: (f64, f64),
    /// Inverse-Wishart degrees of freedom; `None` uses the dimension of `b_i`.
    pub iw_df: Option<f64>,
    /// Inverse-Wishart scale as a multiple of the identity.
    pub iw_scale: f64,
    /// Gamma `(shape, rate)` for baseline heights.
    pub baseline: (f64, f64),
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            normal_variance: 100.0,
            sigma2: (0.01, 0.01),
            iw_df: None,
            iw_scale: 1.0,
            baseline: (0.01, 0.01),
        }
    }
}

impl PriorConfig {
    pub fn validate(&self, q: usize) -> Result<()> {
        let pos = [self.normal_variance, self.sigma2.0, self.sigma2.1, self.iw_scale, self.baseline.0, self.baseline.1];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("prior hyperparameters must be positive and finite".into()));
        }
        if self.df(q) < q as f64 {
            return Err(Error::Config(format!("inverse-Wishart degrees of freedom must be at least {q}")));
        }
        Ok(())
    }

    pub fn df(&self, q: usize) -> f64 {
        self.iw_df.unwrap_or(q as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Continuous spike `N(0, τ²)`.
    #[serde(rename = "CS")]
    Cs,
    /// Point mass at zero.
    #[serde(rename = "DS")]
    Ds,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Cs => "CS",
            Family::Ds => "DS",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CS" => Ok(Family::Cs),
            "DS" => Ok(Family::Ds),
            _ => Err(Error::Config(format!("unknown prior family `{s}` (expected CS or DS)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeSlabConfig {
    pub family: Family,
    /// Spike variance (CS only).
    pub tau2: f64,
    /// Inverse-gamma `(a, b)` hyperprior on the slab variance.
    pub slab: (f64, f64),
    /// Beta `(a, b)` prior on the inclusion probability.
    pub inclusion: (f64, f64),
    /// Integrate the slab variance out when drawing the indicator.
    pub collapse_slab_variance: bool,
}

impl Default for SpikeSlabConfig {
    fn default() -> Self {
        Self {
            family: Family::Ds,
            tau2: 1e-3,
            slab: (0.01, 0.01),
            inclusion: (1.0, 1.0),
            collapse_slab_variance: true,
        }
    }
}

impl SpikeSlabConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.tau2, self.slab.0, self.slab.1, self.inclusion.0, self.inclusion.1];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("spike-and-slab hyperparameters must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Deterministic generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
