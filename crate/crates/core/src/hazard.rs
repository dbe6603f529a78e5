//! Cause-specific proportional hazards with a piecewise-constant baseline.
//!
//! `λ_il(t) = λ_0l(t) · exp(γ_lᵀω_i + Σ_k α_lk η_ik(t))`, where the baseline is
//! constant on right-closed intervals `(ξ_{κ-1}, ξ_κ]` (time 0 belongs to the
//! first interval). Cumulative hazards are integrated segment by segment with a
//! fixed Gauss–Legendre rule, so baseline jumps never fall inside a panel.
//!
//! Cause arguments in this module are 0-based indices; subject records use
//! `1..=L` with 0 meaning censored.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::longitudinal::SubjectRecord;
use crate::quadrature::Quadrature;

/// Piecewise-constant baseline hazards for all causes on a shared partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseBaseline {
    knots: Vec<f64>,
    heights: Vec<Vec<f64>>,
}

impl PiecewiseBaseline {
    /// `knots` are `ξ_0 = 0 < ξ_1 < … < ξ_𝒦`; `heights[l][κ]` is the height of
    /// cause `l` on interval `κ`.
    pub fn new(knots: Vec<f64>, heights: Vec<Vec<f64>>) -> Result<Self> {
        if knots.len() < 2 || knots[0] != 0.0 {
            return Err(Error::Config("baseline knots must start at 0 and define at least one interval".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || !knots.iter().all(|k| k.is_finite()) {
            return Err(Error::Config("baseline knots must be finite and strictly increasing".into()));
        }
        if heights.is_empty() {
            return Err(Error::Config("baseline needs at least one cause".into()));
        }
        let n_int = knots.len() - 1;
        for (l, h) in heights.iter().enumerate() {
            if h.len() != n_int {
                return Err(Error::Config(format!(
                    "cause {}: {} baseline heights for {n_int} intervals",
                    l + 1,
                    h.len()
                )));
            }
            if h.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("cause {}: baseline heights must be positive", l + 1)));
            }
        }
        Ok(Self { knots, heights })
    }

    /// One interval `(0, horizon]` with a constant height per cause.
    pub fn constant(horizon: f64, heights: &[f64]) -> Result<Self> {
        Self::new(vec![0.0, horizon], heights.iter().map(|&h| vec![h]).collect())
    }

    /// Knots at quantiles of the observed event times, with the last knot at
    /// `horizon_factor × max_time`.
    pub fn quantile_knots(event_times: &[f64], max_time: f64, n_intervals: usize, horizon_factor: f64) -> Result<Vec<f64>> {
        if n_intervals == 0 {
            return Err(Error::Config("need at least one baseline interval".into()));
        }
        if !(horizon_factor >= 1.0) || !(max_time > 0.0) {
            return Err(Error::Config("baseline horizon must exceed the maximum observed time".into()));
        }
        let horizon = horizon_factor * max_time;
        let mut sorted: Vec<f64> = event_times.iter().copied().filter(|t| *t > 0.0).collect();
        sorted.sort_by(f64::total_cmp);
        let mut knots = vec![0.0];
        if !sorted.is_empty() {
            for j in 1..n_intervals {
                let q = quantile_sorted(&sorted, j as f64 / n_intervals as f64);
                if q > *knots.last().unwrap() && q < horizon {
                    knots.push(q);
                }
            }
        } else {
            for j in 1..n_intervals {
                knots.push(horizon * j as f64 / n_intervals as f64);
            }
        }
        knots.push(horizon);
        Ok(knots)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn n_intervals(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn n_causes(&self) -> usize {
        self.heights.len()
    }

    pub fn heights(&self, cause: usize) -> &[f64] {
        &self.heights[cause]
    }

    pub fn heights_mut(&mut self, cause: usize) -> &mut [f64] {
        &mut self.heights[cause]
    }

    /// Index of the interval containing `t`.
    pub fn interval_of(&self, t: f64) -> Result<usize> {
        let horizon = self.horizon();
        if !(t >= 0.0 && t <= horizon) {
            return Err(Error::OutOfRange { time: t, horizon });
        }
        // first knot index κ ≥ 1 with t ≤ ξ_κ
        let pos = self.knots[1..].partition_point(|&k| k < t);
        Ok(pos.min(self.n_intervals() - 1))
    }

    /// Pieces of `[a, b]` split at the knots: `(lo, hi, interval)`.
    pub fn segments(&self, a: f64, b: f64) -> Result<Vec<(f64, f64, usize)>> {
        let horizon = self.horizon();
        if !(b <= horizon) {
            return Err(Error::OutOfRange { time: b, horizon });
        }
        if !(a >= 0.0) {
            return Err(Error::OutOfRange { time: a, horizon });
        }
        let mut out = Vec::new();
        if !(b > a) {
            return Ok(out);
        }
        for k in 0..self.n_intervals() {
            let lo = self.knots[k].max(a);
            let hi = self.knots[k + 1].min(b);
            if hi > lo {
                out.push((lo, hi, k));
            }
        }
        Ok(out)
    }
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `λ_0l(t)`.
pub fn baseline_at(baseline: &PiecewiseBaseline, cause: usize, t: f64) -> Result<f64> {
    Ok(baseline.heights[cause][baseline.interval_of(t)?])
}

/// Supplies `η_ik(t)` for every subject and marker.
pub trait TrajectoryProvider: Sync {
    fn n_markers(&self) -> usize;
    fn eta(&self, subject: usize, marker: usize, t: f64) -> f64;
}

/// No markers: hazards depend on covariates only.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTrajectories;

impl TrajectoryProvider for NoTrajectories {
    fn n_markers(&self) -> usize {
        0
    }
    fn eta(&self, _: usize, _: usize, _: f64) -> f64 {
        0.0
    }
}

/// Adapts a closure `(subject, marker, t) -> η`.
pub struct FnTrajectories<F> {
    n_markers: usize,
    f: F,
}

impl<F: Fn(usize, usize, f64) -> f64 + Sync> FnTrajectories<F> {
    pub fn new(n_markers: usize, f: F) -> Self {
        Self { n_markers, f }
    }
}

impl<F: Fn(usize, usize, f64) -> f64 + Sync> TrajectoryProvider for FnTrajectories<F> {
    fn n_markers(&self) -> usize {
        self.n_markers
    }
    fn eta(&self, subject: usize, marker: usize, t: f64) -> f64 {
        (self.f)(subject, marker, t)
    }
}

/// Covariate and marker-association coefficients of one cause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseEffects {
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl CauseEffects {
    pub fn zeros(n_covariates: usize, n_markers: usize) -> Self {
        Self {
            gamma: vec![0.0; n_covariates],
            alpha: vec![0.0; n_markers],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardParams {
    pub causes: Vec<CauseEffects>,
    pub baseline: PiecewiseBaseline,
}

impl HazardParams {
    pub fn new(causes: Vec<CauseEffects>, baseline: PiecewiseBaseline) -> Result<Self> {
        if causes.is_empty() || causes.len() != baseline.n_causes() {
            return Err(Error::Config(format!(
                "{} cause coefficient blocks for a baseline with {} causes",
                causes.len(),
                baseline.n_causes()
            )));
        }
        let (p, k) = (causes[0].gamma.len(), causes[0].alpha.len());
        if causes.iter().any(|c| c.gamma.len() != p || c.alpha.len() != k) {
            return Err(Error::Config("cause coefficient blocks have inconsistent lengths".into()));
        }
        Ok(Self { causes, baseline })
    }

    pub fn n_causes(&self) -> usize {
        self.causes.len()
    }

    fn check(&self, traj: &dyn TrajectoryProvider, covariates: &[f64]) -> Result<()> {
        let c = &self.causes[0];
        if c.gamma.len() != covariates.len() {
            return Err(Error::Data(format!(
                "{} covariates supplied for {} coefficients",
                covariates.len(),
                c.gamma.len()
            )));
        }
        if c.alpha.len() != traj.n_markers() {
            return Err(Error::Data(format!(
                "{} trajectories supplied for {} association parameters",
                traj.n_markers(),
                c.alpha.len()
            )));
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn association_term(alpha: &[f64], traj: &dyn TrajectoryProvider, subject: usize, t: f64) -> f64 {
    let mut acc = 0.0;
    for (k, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            acc += a * traj.eta(subject, k, t);
        }
    }
    acc
}

/// `log λ_il(t)`.
pub fn log_cause_hazard(
    params: &HazardParams,
    traj: &dyn TrajectoryProvider,
    subject: usize,
    covariates: &[f64],
    cause: usize,
    t: f64,
) -> Result<f64> {
    params.check(traj, covariates)?;
    let c = &params.causes[cause];
    let base = baseline_at(&params.baseline, cause, t)?;
    Ok(base.ln() + dot(&c.gamma, covariates) + association_term(&c.alpha, traj, subject, t))
}

/// `λ_il(t)`.
pub fn cause_hazard(
    params: &HazardParams,
    traj: &dyn TrajectoryProvider,
    subject: usize,
    covariates: &[f64],
    cause: usize,
    t: f64,
) -> Result<f64> {
    params.check(traj, covariates)?;
    let c = &params.causes[cause];
    let base = baseline_at(&params.baseline, cause, t)?;
    Ok(base * (dot(&c.gamma, covariates) + association_term(&c.alpha, traj, subject, t)).exp())
}

/// `∫_a^b λ_il(u) du` by Gauss–Legendre on each baseline segment.
pub fn integrated_hazard(
    params: &HazardParams,
    traj: &dyn TrajectoryProvider,
    quad: &Quadrature,
    subject: usize,
    covariates: &[f64],
    cause: usize,
    a: f64,
    b: f64,
) -> Result<f64> {
    params.check(traj, covariates)?;
    let c = &params.causes[cause];
    let lin = dot(&c.gamma, covariates);
    let heights = params.baseline.heights(cause);
    let mut total = 0.0;
    for (lo, hi, k) in params.baseline.segments(a, b)? {
        let mut seg = 0.0;
        for (u, w) in quad.mapped(lo, hi) {
            seg += w * (lin + association_term(&c.alpha, traj, subject, u)).exp();
        }
        total += heights[k] * seg;
    }
    Ok(total)
}

/// `Λ_il(t) = ∫_0^t λ_il(u) du`.
pub fn cumulative_hazard(
    params: &HazardParams,
    traj: &dyn TrajectoryProvider,
    quad: &Quadrature,
    subject: usize,
    covariates: &[f64],
    cause: usize,
    t: f64,
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::OutOfRange {
            time: t,
            horizon: params.baseline.horizon(),
        });
    }
    integrated_hazard(params, traj, quad, subject, covariates, cause, 0.0, t)
}

/// Competing-risks log-likelihood contribution of one subject:
/// `Σ_l I(δ_i = l) log λ_il(t_i) − Σ_l Λ_il(t_i)`.
pub fn survival_loglik(
    params: &HazardParams,
    traj: &dyn TrajectoryProvider,
    quad: &Quadrature,
    subject: usize,
    record: &SubjectRecord,
) -> Result<f64> {
    if record.cause > params.n_causes() {
        return Err(Error::Data(format!(
            "subject `{}` has cause {} but the model has {} causes",
            record.id,
            record.cause,
            params.n_causes()
        )));
    }
    let mut ll = 0.0;
    if record.cause > 0 {
        ll += log_cause_hazard(params, traj, subject, &record.covariates, record.cause - 1, record.event_time)?;
    }
    for l in 0..params.n_causes() {
        ll -= cumulative_hazard(params, traj, quad, subject, &record.covariates, l, record.event_time)?;
    }
    Ok(ll)
}

/// Flattened quadrature nodes over `[0, end_i]` for a set of subjects, split at
/// the baseline knots. Samplers cache per-node quantities against this grid.
#[derive(Debug, Clone)]
pub struct NodeGrid {
    offsets: Vec<usize>,
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
    pub intervals: Vec<usize>,
}

impl NodeGrid {
    pub fn build(baseline: &PiecewiseBaseline, quad: &Quadrature, ends: &[f64]) -> Result<Self> {
        let mut grid = NodeGrid {
            offsets: Vec::with_capacity(ends.len() + 1),
            times: Vec::new(),
            weights: Vec::new(),
            intervals: Vec::new(),
        };
        grid.offsets.push(0);
        for &end in ends {
            for (lo, hi, k) in baseline.segments(0.0, end)? {
                for (u, w) in quad.mapped(lo, hi) {
                    grid.times.push(u);
                    grid.weights.push(w);
                    grid.intervals.push(k);
                }
            }
            grid.offsets.push(grid.times.len());
        }
        Ok(grid)
    }

    pub fn n_subjects(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn subject(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}
