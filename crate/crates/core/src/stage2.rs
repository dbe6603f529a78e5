//! Stage 2: cause-specific hazards with every covariate and every Stage-1
//! trajectory as candidate predictors, under spike-and-slab priors; and the
//! refit of a selected subset under plain normal priors.
//!
//! The likelihood is the competing-risks likelihood of [`crate::hazard`] with
//! the plug-in trajectories held fixed, evaluated on the same Gauss–Legendre
//! nodes. Per cause the sampler keeps, for every node `n` of subject `i`,
//! `q_n = w_n exp(Σ_k α_k η_ik(u_n))` and per subject `e^{γᵀω_i}`; each
//! coordinate update then costs one pass over subjects (γ) or nodes (α).
//! Baseline heights are drawn from their gamma full conditional, which is exact
//! because the quadrature cumulative hazard is linear in each height.
//!
//! Internally covariates and trajectories are centred (covariates at their
//! sample means, each trajectory at its exposure-weighted mean over the grid),
//! so that switching a coefficient on or off does not also have to move the
//! baseline; stored heights are mapped back to the uncentred scale.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{CauseEffects, HazardParams, NodeGrid, PiecewiseBaseline, TrajectoryProvider};
use crate::longitudinal::LongitudinalDataset;
use crate::quadrature::Quadrature;
use crate::samplers::conjugate::gibbs_gamma;
use crate::samplers::diagnostics::{split_rhat, Summary};
use crate::samplers::mh::AdaptiveScale;
use crate::samplers::spike_slab::{update_cs, update_ds, update_normal, CoordinateLikelihood, SpikeSlabScales, SpikeSlabState};
use crate::samplers::{stream_rng, Family, McmcConfig, PriorConfig, SpikeSlabConfig};
use crate::stage1::{BaselineSettings, FitDiagnostics};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Settings {
    pub mcmc: McmcConfig,
    pub priors: PriorConfig,
    pub spike_slab: SpikeSlabConfig,
    pub baseline: BaselineSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefKind {
    Gamma,
    Alpha,
}

/// A hazard coefficient: covariate (`gamma`) or marker association (`alpha`)
/// for cause `cause` (1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coefficient {
    pub cause: usize,
    pub kind: CoefKind,
    pub name: String,
}

impl Coefficient {
    pub fn label(&self) -> String {
        let k = match self.kind {
            CoefKind::Gamma => "gamma",
            CoefKind::Alpha => "alpha",
        };
        format!("{k}[{},{}]", self.cause, self.name)
    }

    /// Inverse of [`label`](Self::label).
    pub fn parse(label: &str) -> Option<Self> {
        let (kind, rest) = if let Some(r) = label.strip_prefix("gamma[") {
            (CoefKind::Gamma, r)
        } else if let Some(r) = label.strip_prefix("alpha[") {
            (CoefKind::Alpha, r)
        } else {
            return None;
        };
        let rest = rest.strip_suffix(']')?;
        let (cause, name) = rest.split_once(',')?;
        Some(Self { cause: cause.parse().ok()?, kind, name: name.to_string() })
    }
}

/// Coefficient layout: per cause, all covariates then all markers.
pub fn coefficient_layout(covariates: &[String], markers: &[String], n_causes: usize) -> Vec<Coefficient> {
    let mut out = Vec::with_capacity(n_causes * (covariates.len() + markers.len()));
    for l in 1..=n_causes {
        for c in covariates {
            out.push(Coefficient { cause: l, kind: CoefKind::Gamma, name: c.clone() });
        }
        for m in markers {
            out.push(Coefficient { cause: l, kind: CoefKind::Alpha, name: m.clone() });
        }
    }
    out
}

/// Posterior draws of a Stage-2 model (spike-and-slab fit or refit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Fit {
    /// `None` for a refit under normal priors.
    pub family: Option<Family>,
    pub coefficients: Vec<Coefficient>,
    pub knots: Vec<f64>,
    pub n_causes: usize,
    pub inclusion_prior: (f64, f64),
    pub chains: usize,
    /// `values[m][c]`.
    pub values: Vec<Vec<f64>>,
    /// `included[m][c]`; for a refit, the mask.
    pub included: Vec<Vec<bool>>,
    /// `heights[m][l][κ]`.
    pub heights: Vec<Vec<Vec<f64>>>,
    pub diagnostics: FitDiagnostics,
}

impl Stage2Fit {
    pub fn n_draws(&self) -> usize {
        self.values.len()
    }

    /// Indicator draws of coefficient `c`.
    pub fn indicator_draws(&self, c: usize) -> Vec<bool> {
        self.included.iter().map(|d| d[c]).collect()
    }

    pub fn value_draws(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|d| d[c]).collect()
    }

    fn params_from(&self, values: &[f64], heights: &[Vec<f64>]) -> Result<HazardParams> {
        let n_cov = self.coefficients.iter().filter(|c| c.cause == 1 && c.kind == CoefKind::Gamma).count();
        let n_mk = self.coefficients.iter().filter(|c| c.cause == 1 && c.kind == CoefKind::Alpha).count();
        let per = n_cov + n_mk;
        let causes = (0..self.n_causes)
            .map(|l| CauseEffects {
                gamma: values[l * per..l * per + n_cov].to_vec(),
                alpha: values[l * per + n_cov..(l + 1) * per].to_vec(),
            })
            .collect();
        HazardParams::new(causes, PiecewiseBaseline::new(self.knots.clone(), heights.to_vec())?)
    }

    /// Hazard parameters of draw `m`.
    pub fn hazard_params(&self, m: usize) -> Result<HazardParams> {
        self.params_from(&self.values[m], &self.heights[m])
    }

    /// Posterior-mean hazard parameters.
    pub fn mean_params(&self) -> Result<HazardParams> {
        let n = self.n_draws() as f64;
        let nc = self.coefficients.len();
        let mut v = vec![0.0; nc];
        for d in &self.values {
            v.iter_mut().zip(d).for_each(|(a, b)| *a += b / n);
        }
        let mut h = self.heights[0].clone();
        h.iter_mut().flatten().for_each(|x| *x = 0.0);
        for d in &self.heights {
            for (hl, dl) in h.iter_mut().zip(d) {
                hl.iter_mut().zip(dl).for_each(|(a, b)| *a += b / n);
            }
        }
        self.params_from(&v, &h)
    }

    /// Evenly spaced subset of draw indices, at most `max`.
    pub fn thinned_indices(&self, max: usize) -> Vec<usize> {
        let n = self.n_draws();
        if max == 0 || n == 0 {
            return Vec::new();
        }
        if n <= max {
            return (0..n).collect();
        }
        (0..max).map(|j| j * n / max).collect()
    }

    /// Per-parameter summaries: coefficients, indicators and baseline heights.
    pub fn summaries(&self) -> BTreeMap<String, Summary> {
        let mut out = BTreeMap::new();
        for (c, coef) in self.coefficients.iter().enumerate() {
            out.insert(coef.label(), Summary::of(&self.value_draws(c)));
        }
        for l in 0..self.n_causes {
            for k in 0..self.knots.len() - 1 {
                let d: Vec<f64> = self.heights.iter().map(|h| h[l][k]).collect();
                out.insert(format!("lambda[{},{}]", l + 1, k + 1), Summary::of(&d));
            }
        }
        out
    }

    /// Long-format draws: `iteration, parameter, value`. Iterations are
    /// numbered consecutively across chains.
    pub fn write_draws_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let labels: Vec<String> = self.coefficients.iter().map(Coefficient::label).collect();
        w.write_record(["iteration", "parameter", "value"])?;
        for m in 0..self.n_draws() {
            let it = m.to_string();
            for (c, label) in labels.iter().enumerate() {
                w.write_record([it.as_str(), label, &self.values[m][c].to_string()])?;
                w.write_record([it.as_str(), &format!("included:{label}"), if self.included[m][c] { "1" } else { "0" }])?;
            }
            for l in 0..self.n_causes {
                for (k, h) in self.heights[m][l].iter().enumerate() {
                    w.write_record([it.as_str(), &format!("lambda[{},{}]", l + 1, k + 1), &h.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Rebuilds a fit from its draws CSV and summary JSON.
    pub fn read(draws_csv: &Path, summary_json: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(summary_json).map_err(|e| Error::io(summary_json, e))?;
        let meta: Stage2Summary = serde_json::from_str(&text)?;
        let index: BTreeMap<String, usize> = meta.coefficients.iter().enumerate().map(|(i, c)| (c.label(), i)).collect();
        let nc = meta.coefficients.len();
        let n_int = meta.knots.len() - 1;
        let mut values: Vec<Vec<f64>> = Vec::new();
        let mut included: Vec<Vec<bool>> = Vec::new();
        let mut heights: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(draws_csv)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["iteration", "parameter", "value"] {
            return Err(Error::Data(format!("{}: expected columns iteration,parameter,value", draws_csv.display())));
        }
        for rec in rdr.records() {
            let rec = rec?;
            let m: usize = rec[0].parse().map_err(|_| Error::Data(format!("bad iteration `{}`", &rec[0])))?;
            let v: f64 = rec[2].parse().map_err(|_| Error::Data(format!("bad value `{}`", &rec[2])))?;
            while values.len() <= m {
                values.push(vec![0.0; nc]);
                included.push(vec![false; nc]);
                heights.push(vec![vec![0.0; n_int]; meta.n_causes]);
            }
            let p = &rec[1];
            if let Some(label) = p.strip_prefix("included:") {
                let c = *index.get(label).ok_or_else(|| Error::Data(format!("unknown parameter `{p}`")))?;
                included[m][c] = v != 0.0;
            } else if let Some(rest) = p.strip_prefix("lambda[").and_then(|r| r.strip_suffix(']')) {
                let (l, k) = rest.split_once(',').ok_or_else(|| Error::Data(format!("bad parameter `{p}`")))?;
                let (l, k): (usize, usize) = (
                    l.parse().map_err(|_| Error::Data(format!("bad parameter `{p}`")))?,
                    k.parse().map_err(|_| Error::Data(format!("bad parameter `{p}`")))?,
                );
                if l == 0 || l > meta.n_causes || k == 0 || k > n_int {
                    return Err(Error::Data(format!("parameter `{p}` out of range")));
                }
                heights[m][l - 1][k - 1] = v;
            } else {
                let c = *index.get(p).ok_or_else(|| Error::Data(format!("unknown parameter `{p}`")))?;
                values[m][c] = v;
            }
        }
        if values.is_empty() {
            return Err(Error::Data(format!("{}: no draws", draws_csv.display())));
        }
        Ok(Self {
            family: meta.family,
            coefficients: meta.coefficients,
            knots: meta.knots,
            n_causes: meta.n_causes,
            inclusion_prior: meta.inclusion_prior,
            chains: meta.chains,
            values,
            included,
            heights,
            diagnostics: meta.diagnostics,
        })
    }

    pub fn summary(&self) -> Stage2Summary {
        Stage2Summary {
            family: self.family,
            coefficients: self.coefficients.clone(),
            knots: self.knots.clone(),
            n_causes: self.n_causes,
            inclusion_prior: self.inclusion_prior,
            chains: self.chains,
            n_draws: self.n_draws(),
            parameters: self.summaries(),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// JSON companion of the draws CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Summary {
    pub family: Option<Family>,
    pub coefficients: Vec<Coefficient>,
    pub knots: Vec<f64>,
    pub n_causes: usize,
    pub inclusion_prior: (f64, f64),
    pub chains: usize,
    pub n_draws: usize,
    pub parameters: BTreeMap<String, Summary>,
    pub diagnostics: FitDiagnostics,
}

// ---------------------------------------------------------------------------

/// Survival data and trajectories on the quadrature grid.
pub struct Stage2Model {
    knots: Vec<f64>,
    n_int: usize,
    n_causes: usize,
    n_markers: usize,
    covariate_names: Vec<String>,
    marker_names: Vec<String>,
    grid: NodeGrid,
    /// `eta[k][n]`.
    eta: Vec<Vec<f64>>,
    /// `eta_event[k][i]`.
    eta_event: Vec<Vec<f64>>,
    /// Centred covariates.
    omega: Vec<Vec<f64>>,
    omega_center: Vec<f64>,
    eta_center: Vec<f64>,
    cause: Vec<usize>,
    event_interval: Vec<usize>,
    /// `events[l][κ]`.
    events: Vec<Vec<f64>>,
}

impl Stage2Model {
    pub fn new(traj: &dyn TrajectoryProvider, marker_names: &[String], data: &LongitudinalDataset, baseline: &BaselineSettings) -> Result<Self> {
        let knots = baseline.knots(data)?;
        Self::with_knots(traj, marker_names, data, knots, baseline.quadrature_nodes)
    }

    pub fn with_knots(
        traj: &dyn TrajectoryProvider,
        marker_names: &[String],
        data: &LongitudinalDataset,
        knots: Vec<f64>,
        quadrature_nodes: usize,
    ) -> Result<Self> {
        if traj.n_markers() != marker_names.len() {
            return Err(Error::Config(format!("{} trajectories for {} marker names", traj.n_markers(), marker_names.len())));
        }
        if data.n_subjects() == 0 {
            return Err(Error::Data("stage 2 needs at least one subject".into()));
        }
        let n_causes = data.n_causes();
        let n_int = knots.len() - 1;
        let pb = PiecewiseBaseline::new(knots.clone(), vec![vec![1.0; n_int]; n_causes])?;
        let quad = Quadrature::new(quadrature_nodes)?;
        let ends: Vec<f64> = data.subjects().iter().map(|s| s.event_time).collect();
        let grid = NodeGrid::build(&pb, &quad, &ends)?;
        let k = traj.n_markers();
        let mut eta = vec![vec![0.0; grid.len()]; k];
        let mut eta_event = vec![vec![0.0; data.n_subjects()]; k];
        for i in 0..data.n_subjects() {
            for m in 0..k {
                for n in grid.subject(i) {
                    eta[m][n] = traj.eta(i, m, grid.times[n]);
                }
                eta_event[m][i] = traj.eta(i, m, ends[i]);
            }
        }
        if eta.iter().flatten().chain(eta_event.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite trajectory value on the quadrature grid".into()));
        }
        let total_w: f64 = grid.weights.iter().sum();
        let eta_center: Vec<f64> = eta
            .iter()
            .map(|e| if total_w > 0.0 { e.iter().zip(&grid.weights).map(|(v, w)| v * w).sum::<f64>() / total_w } else { 0.0 })
            .collect();
        for (m, c) in eta_center.iter().enumerate() {
            eta[m].iter_mut().chain(eta_event[m].iter_mut()).for_each(|v| *v -= c);
        }
        let mut omega: Vec<Vec<f64>> = data.subjects().iter().map(|s| s.covariates.clone()).collect();
        let nf = omega.len() as f64;
        let omega_center: Vec<f64> = (0..data.covariate_names().len()).map(|j| omega.iter().map(|w| w[j]).sum::<f64>() / nf).collect();
        for w in &mut omega {
            w.iter_mut().zip(&omega_center).for_each(|(v, c)| *v -= c);
        }
        let mut events = vec![vec![0.0; n_int]; n_causes];
        let mut event_interval = Vec::with_capacity(ends.len());
        for s in data.subjects() {
            let kk = pb.interval_of(s.event_time)?;
            event_interval.push(kk);
            if s.cause > 0 {
                events[s.cause - 1][kk] += 1.0;
            }
        }
        Ok(Self {
            knots,
            n_int,
            n_causes,
            n_markers: k,
            covariate_names: data.covariate_names().to_vec(),
            marker_names: marker_names.to_vec(),
            grid,
            eta,
            eta_event,
            omega,
            omega_center,
            eta_center,
            cause: data.subjects().iter().map(|s| s.cause).collect(),
            event_interval,
            events,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_subjects(&self) -> usize {
        self.omega.len()
    }

    pub fn coefficients(&self) -> Vec<Coefficient> {
        coefficient_layout(&self.covariate_names, &self.marker_names, self.n_causes)
    }

    fn n_cov(&self) -> usize {
        self.covariate_names.len()
    }

    /// `Σ γ ω̄ + Σ α η̄`: log factor between centred and uncentred heights.
    fn center_offset(&self, gamma: &[f64], alpha: &[f64]) -> f64 {
        let g: f64 = gamma.iter().zip(&self.omega_center).map(|(g, c)| g * c).sum();
        let a: f64 = alpha.iter().zip(&self.eta_center).map(|(a, c)| a * c).sum();
        g + a
    }

    /// Competing-risks log-likelihood at `params`, on the cached grid.
    pub fn log_likelihood(&self, params: &HazardParams) -> Result<f64> {
        if params.n_causes() != self.n_causes || params.baseline.knots() != self.knots.as_slice() {
            return Err(Error::Config("hazard parameters do not match the stage-2 model".into()));
        }
        let mut ll = 0.0;
        for (l, c) in params.causes.iter().enumerate() {
            let f = self.center_offset(&c.gamma, &c.alpha).exp();
            let h: Vec<f64> = params.baseline.heights(l).iter().map(|h| h * f).collect();
            for i in 0..self.n_subjects() {
                let lin: f64 = c.gamma.iter().zip(&self.omega[i]).map(|(g, w)| g * w).sum();
                if self.cause[i] == l + 1 {
                    let assoc: f64 = (0..self.n_markers).map(|k| c.alpha[k] * self.eta_event[k][i]).sum();
                    ll += h[self.event_interval[i]].ln() + lin + assoc;
                }
                let mut cum = 0.0;
                let mut seg = 0.0;
                let mut cur = usize::MAX;
                for n in self.grid.subject(i) {
                    let kk = self.grid.intervals[n];
                    if kk != cur {
                        if cur != usize::MAX {
                            cum += h[cur] * seg;
                        }
                        cur = kk;
                        seg = 0.0;
                    }
                    let assoc: f64 = (0..self.n_markers).map(|k| c.alpha[k] * self.eta[k][n]).sum();
                    seg += self.grid.weights[n] * (lin + assoc).exp();
                }
                if cur != usize::MAX {
                    cum += h[cur] * seg;
                }
                ll -= cum;
            }
        }
        Ok(ll)
    }
}

/// How coefficients are updated.
#[derive(Debug, Clone)]
enum Mode {
    SpikeSlab(SpikeSlabConfig),
    /// Normal prior on the coefficients in the mask, others pinned at 0.
    Refit(Vec<bool>, f64),
}

/// `γ_lj` as a function of its value: `d·S − Σ_i H_i (e^{d ω_ij} − 1)`.
struct GammaCoord<'a> {
    omega: &'a [Vec<f64>],
    j: usize,
    s: f64,
    h: &'a mut [f64],
    lin_exp: &'a mut [f64],
    current: f64,
    flat: bool,
}

impl GammaCoord<'_> {
    fn pass(&self, v: f64) -> (f64, f64, f64) {
        let d = v - self.current;
        let (mut l, mut g, mut hh) = (d * self.s, self.s, 0.0);
        for (i, h) in self.h.iter().enumerate() {
            let w = self.omega[i][self.j];
            if w == 0.0 {
                continue;
            }
            let e = h * (d * w).exp();
            l -= e - h;
            g -= w * e;
            hh -= w * w * e;
        }
        (l, g, hh)
    }
}

impl CoordinateLikelihood for GammaCoord<'_> {
    fn log_lik(&mut self, v: f64) -> f64 {
        if self.flat {
            return 0.0;
        }
        self.pass(v).0
    }
    fn derivatives(&mut self, v: f64) -> (f64, f64) {
        if self.flat {
            return (0.0, 0.0);
        }
        let (_, g, h) = self.pass(v);
        (g, h)
    }
    fn accept(&mut self, v: f64) {
        let d = v - self.current;
        if d != 0.0 {
            for (i, h) in self.h.iter_mut().enumerate() {
                let w = self.omega[i][self.j];
                if w != 0.0 {
                    let f = (d * w).exp();
                    *h *= f;
                    self.lin_exp[i] *= f;
                }
            }
        }
        self.current = v;
    }
}

/// `α_lk` as a function of its value: `d·E − Σ_n r_n (e^{d η_kn} − 1)` with
/// `r_n = e^{γᵀω} λ_κ q_n`.
struct AlphaCoord<'a> {
    eta: &'a [f64],
    e: f64,
    r: &'a mut [f64],
    q: &'a mut [f64],
    current: f64,
    flat: bool,
}

impl AlphaCoord<'_> {
    fn pass(&self, v: f64) -> (f64, f64, f64) {
        let d = v - self.current;
        let (mut l, mut g, mut hh) = (d * self.e, self.e, 0.0);
        for (r, eta) in self.r.iter().zip(self.eta) {
            let x = r * (d * eta).exp();
            l -= x - r;
            g -= eta * x;
            hh -= eta * eta * x;
        }
        (l, g, hh)
    }
}

impl CoordinateLikelihood for AlphaCoord<'_> {
    fn log_lik(&mut self, v: f64) -> f64 {
        if self.flat {
            return 0.0;
        }
        self.pass(v).0
    }
    fn derivatives(&mut self, v: f64) -> (f64, f64) {
        if self.flat {
            return (0.0, 0.0);
        }
        let (_, g, h) = self.pass(v);
        (g, h)
    }
    fn accept(&mut self, v: f64) {
        let d = v - self.current;
        if d != 0.0 {
            for ((r, q), eta) in self.r.iter_mut().zip(self.q.iter_mut()).zip(self.eta) {
                let f = (d * eta).exp();
                *r *= f;
                *q *= f;
            }
        }
        self.current = v;
    }
}

struct CauseState {
    gamma: Vec<f64>,
    alpha: Vec<f64>,
    ss_gamma: Vec<SpikeSlabState>,
    ss_alpha: Vec<SpikeSlabState>,
    sc_gamma: Vec<SpikeSlabScales>,
    sc_alpha: Vec<SpikeSlabScales>,
    rw_gamma: Vec<AdaptiveScale>,
    rw_alpha: Vec<AdaptiveScale>,
    heights: Vec<f64>,
    lin_exp: Vec<f64>,
    /// `q_n = w_n e^{Σ α η}`.
    q: Vec<f64>,
    /// No events of this cause: coefficients follow their prior.
    flat: bool,
}

struct Chain<'a> {
    model: &'a Stage2Model,
    mode: &'a Mode,
    priors: &'a PriorConfig,
    causes: Vec<CauseState>,
    /// Event sums: `s_gamma[l][j] = Σ_{δ=l} ω_ij`, `s_alpha[l][k] = Σ_{δ=l} η_k(t_i)`.
    s_gamma: Vec<Vec<f64>>,
    s_alpha: Vec<Vec<f64>>,
    clamped: u64,
    rng: ChaCha8Rng,
    h_buf: Vec<f64>,
    r_buf: Vec<f64>,
}

impl<'a> Chain<'a> {
    fn new(model: &'a Stage2Model, mode: &'a Mode, priors: &'a PriorConfig, seed: u64, stream: u64) -> Self {
        let (p, k) = (model.n_cov(), model.n_markers);
        let total_w: f64 = model.grid.weights.iter().sum();
        let ss_cfg = match mode {
            Mode::SpikeSlab(c) => c.clone(),
            Mode::Refit(..) => SpikeSlabConfig::default(),
        };
        let mut s_gamma = vec![vec![0.0; p]; model.n_causes];
        let mut s_alpha = vec![vec![0.0; k]; model.n_causes];
        for i in 0..model.n_subjects() {
            if model.cause[i] > 0 {
                let l = model.cause[i] - 1;
                s_gamma[l].iter_mut().zip(&model.omega[i]).for_each(|(a, b)| *a += b);
                for m in 0..k {
                    s_alpha[l][m] += model.eta_event[m][i];
                }
            }
        }
        let causes = (0..model.n_causes)
            .map(|l| {
                let d: f64 = model.events[l].iter().sum();
                CauseState {
                    gamma: vec![0.0; p],
                    alpha: vec![0.0; k],
                    ss_gamma: vec![SpikeSlabState::initial(&ss_cfg); p],
                    ss_alpha: vec![SpikeSlabState::initial(&ss_cfg); k],
                    sc_gamma: vec![SpikeSlabScales::new(&ss_cfg); p],
                    sc_alpha: vec![SpikeSlabScales::new(&ss_cfg); k],
                    rw_gamma: vec![AdaptiveScale::scalar(0.1); p],
                    rw_alpha: vec![AdaptiveScale::scalar(0.1); k],
                    heights: vec![(d + 0.5) / total_w.max(1e-12); model.n_int],
                    lin_exp: vec![1.0; model.n_subjects()],
                    q: model.grid.weights.clone(),
                    flat: d == 0.0,
                }
            })
            .collect();
        Self {
            model,
            mode,
            priors,
            causes,
            s_gamma,
            s_alpha,
            clamped: 0,
            rng: stream_rng(seed, stream),
            h_buf: vec![0.0; model.n_subjects()],
            r_buf: vec![0.0; model.grid.len()],
        }
    }

    fn included(&self, l: usize, kind: CoefKind, j: usize) -> bool {
        let c = &self.causes[l];
        match self.mode {
            Mode::SpikeSlab(_) => match kind {
                CoefKind::Gamma => c.ss_gamma[j].included,
                CoefKind::Alpha => c.ss_alpha[j].included,
            },
            Mode::Refit(mask, _) => {
                let per = self.model.n_cov() + self.model.n_markers;
                let off = match kind {
                    CoefKind::Gamma => j,
                    CoefKind::Alpha => self.model.n_cov() + j,
                };
                mask[l * per + off]
            }
        }
    }

    fn coordinate(
        &mut self,
        lik: &mut dyn CoordinateLikelihood,
        l: usize,
        kind: CoefKind,
        j: usize,
    ) -> Result<f64> {
        let include = self.included(l, kind, j);
        let c = &mut self.causes[l];
        let (value, ss, sc, rw) = match kind {
            CoefKind::Gamma => (c.gamma[j], &mut c.ss_gamma[j], &mut c.sc_gamma[j], &mut c.rw_gamma[j]),
            CoefKind::Alpha => (c.alpha[j], &mut c.ss_alpha[j], &mut c.sc_alpha[j], &mut c.rw_alpha[j]),
        };
        match self.mode {
            Mode::SpikeSlab(cfg) => {
                ss.value = value;
                match cfg.family {
                    Family::Cs => self.clamped += update_cs(ss, lik, cfg, sc, &mut self.rng)? as u64,
                    Family::Ds => update_ds(ss, lik, cfg, sc, &mut self.rng)?,
                }
                Ok(ss.value)
            }
            Mode::Refit(_, var) => {
                if include {
                    update_normal(value, lik, *var, rw, &mut self.rng)
                } else {
                    Ok(0.0)
                }
            }
        }
    }

    fn sweep(&mut self) -> Result<()> {
        let model = self.model;
        let n_int = model.n_int;
        for l in 0..model.n_causes {
            // subject cumulative hazards H_i = e^{γᵀω} Σ_n λ q_n
            let mut h = std::mem::take(&mut self.h_buf);
            {
                let c = &self.causes[l];
                for i in 0..model.n_subjects() {
                    let mut s = 0.0;
                    for n in model.grid.subject(i) {
                        s += c.heights[model.grid.intervals[n]] * c.q[n];
                    }
                    h[i] = c.lin_exp[i] * s;
                }
            }
            for j in 0..model.n_cov() {
                let mut lin_exp = std::mem::take(&mut self.causes[l].lin_exp);
                let current = self.causes[l].gamma[j];
                let mut coord = GammaCoord {
                    omega: &model.omega,
                    j,
                    s: self.s_gamma[l][j],
                    h: &mut h,
                    lin_exp: &mut lin_exp,
                    current,
                    flat: self.causes[l].flat,
                };
                let v = self.coordinate(&mut coord, l, CoefKind::Gamma, j)?;
                coord.accept(v);
                self.causes[l].lin_exp = lin_exp;
                self.causes[l].gamma[j] = v;
            }
            self.h_buf = h;

            // r_n = e^{γᵀω} λ q_n
            let mut r = std::mem::take(&mut self.r_buf);
            {
                let c = &self.causes[l];
                for i in 0..model.n_subjects() {
                    for n in model.grid.subject(i) {
                        r[n] = c.lin_exp[i] * c.heights[model.grid.intervals[n]] * c.q[n];
                    }
                }
            }
            for k in 0..model.n_markers {
                let mut q = std::mem::take(&mut self.causes[l].q);
                let current = self.causes[l].alpha[k];
                let mut coord = AlphaCoord {
                    eta: &model.eta[k],
                    e: self.s_alpha[l][k],
                    r: &mut r,
                    q: &mut q,
                    current,
                    flat: self.causes[l].flat,
                };
                let v = self.coordinate(&mut coord, l, CoefKind::Alpha, k)?;
                coord.accept(v);
                self.causes[l].q = q;
                self.causes[l].alpha[k] = v;
            }
            self.r_buf = r;

            // heights
            let (a0, b0) = self.priors.baseline;
            let c = &self.causes[l];
            let mut exposure = vec![0.0; n_int];
            if !c.flat {
                for i in 0..model.n_subjects() {
                    for n in model.grid.subject(i) {
                        exposure[model.grid.intervals[n]] += c.lin_exp[i] * c.q[n];
                    }
                }
            }
            let events = model.events[l].clone();
            for kk in 0..n_int {
                let draw = gibbs_gamma(a0 + events[kk], b0 + exposure[kk], &mut self.rng).max(1e-300);
                self.causes[l].heights[kk] = draw;
            }
        }
        Ok(())
    }

    fn freeze(&mut self) {
        for c in &mut self.causes {
            c.sc_gamma.iter_mut().chain(c.sc_alpha.iter_mut()).for_each(SpikeSlabScales::freeze);
            c.rw_gamma.iter_mut().chain(c.rw_alpha.iter_mut()).for_each(AdaptiveScale::freeze);
        }
    }

    fn snapshot(&self) -> (Vec<f64>, Vec<bool>, Vec<Vec<f64>>) {
        let mut v = Vec::new();
        let mut inc = Vec::new();
        for (l, c) in self.causes.iter().enumerate() {
            for j in 0..c.gamma.len() {
                v.push(c.gamma[j]);
                inc.push(self.included(l, CoefKind::Gamma, j));
            }
            for k in 0..c.alpha.len() {
                v.push(c.alpha[k]);
                inc.push(self.included(l, CoefKind::Alpha, k));
            }
        }
        let heights = self
            .causes
            .iter()
            .map(|c| {
                let f = (-self.model.center_offset(&c.gamma, &c.alpha)).exp();
                c.heights.iter().map(|h| h * f).collect()
            })
            .collect();
        (v, inc, heights)
    }
}

type ChainDraws = (Vec<Vec<f64>>, Vec<Vec<bool>>, Vec<Vec<Vec<f64>>>, u64);

fn run(model: &Stage2Model, mode: &Mode, priors: &PriorConfig, mcmc: &McmcConfig, stream_base: u64, label: &str) -> Result<Stage2Fit> {
    mcmc.validate()?;
    for (l, ev) in model.events.iter().enumerate() {
        if ev.iter().sum::<f64>() == 0.0 {
            warn!("{label}: no events of cause {}; its coefficients follow their prior", l + 1);
        }
    }
    let runs: Vec<Result<ChainDraws>> = (0..mcmc.chains)
        .into_par_iter()
        .map(|c| {
            let mut chain = Chain::new(model, mode, priors, mcmc.seed, stream_base + c as u64);
            let (mut vs, mut incs, mut hs) = (Vec::new(), Vec::new(), Vec::new());
            for it in 0..mcmc.iters {
                if it == mcmc.burnin {
                    chain.freeze();
                }
                chain.sweep()?;
                if mcmc.keeps(it) {
                    let (v, inc, h) = chain.snapshot();
                    vs.push(v);
                    incs.push(inc);
                    hs.push(h);
                }
            }
            Ok((vs, incs, hs, chain.clamped))
        })
        .collect();
    let mut per_chain = Vec::new();
    let mut clamped = 0;
    for r in runs {
        let r = r?;
        clamped += r.3;
        per_chain.push(r);
    }
    let coefficients = model.coefficients();
    let mut rhat = BTreeMap::new();
    for (c, coef) in coefficients.iter().enumerate() {
        let series: Vec<Vec<f64>> = per_chain.iter().map(|pc| pc.0.iter().map(|d| d[c]).collect()).collect();
        let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
        rhat.insert(coef.label(), split_rhat(&refs));
    }
    for l in 0..model.n_causes {
        for k in 0..model.n_int {
            let series: Vec<Vec<f64>> = per_chain.iter().map(|pc| pc.2.iter().map(|h| h[l][k]).collect()).collect();
            let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
            rhat.insert(format!("lambda[{},{}]", l + 1, k + 1), split_rhat(&refs));
        }
    }
    // in spike-and-slab fits, long runs of exact zeros make R̂ of coefficient
    // values uninformative; only finite values can raise the flag
    rhat.retain(|_, v| v.is_finite());
    let mut diagnostics = FitDiagnostics::from_rhat(rhat, BTreeMap::new(), label);
    if clamped > 0 {
        let msg = format!("{label}: slab variance clamped above the spike variance {clamped} time(s)");
        warn!("{msg}");
        diagnostics.warnings.push(msg);
    }
    let (family, inclusion_prior) = match mode {
        Mode::SpikeSlab(c) => (Some(c.family), c.inclusion),
        Mode::Refit(..) => (None, (1.0, 1.0)),
    };
    let chains = per_chain.len();
    let (mut values, mut included, mut heights) = (Vec::new(), Vec::new(), Vec::new());
    for (v, i, h, _) in per_chain {
        values.extend(v);
        included.extend(i);
        heights.extend(h);
    }
    Ok(Stage2Fit {
        family,
        coefficients,
        knots: model.knots.clone(),
        n_causes: model.n_causes,
        inclusion_prior,
        chains,
        values,
        included,
        heights,
        diagnostics,
    })
}

/// Spike-and-slab selection fit over all `γ_l` and `α_l`.
pub fn fit_selection_model(model: &Stage2Model, settings: &Stage2Settings) -> Result<Stage2Fit> {
    settings.spike_slab.validate()?;
    settings.priors.validate(0)?;
    let mode = Mode::SpikeSlab(settings.spike_slab.clone());
    let stream = match settings.spike_slab.family {
        Family::Cs => 1 << 32,
        Family::Ds => 2 << 32,
    };
    run(model, &mode, &settings.priors, &settings.mcmc, stream, &format!("stage 2 ({})", settings.spike_slab.family))
}

/// Refit with `N(0, c)` priors on the coefficients in `mask` (layout of
/// [`Stage2Model::coefficients`]) and the rest fixed at 0.
pub fn refit_selected(model: &Stage2Model, mask: &[bool], settings: &Stage2Settings) -> Result<Stage2Fit> {
    let n = model.coefficients().len();
    if mask.len() != n {
        return Err(Error::Config(format!("selection mask has {} entries for {n} coefficients", mask.len())));
    }
    settings.priors.validate(0)?;
    let mode = Mode::Refit(mask.to_vec(), settings.priors.normal_variance);
    run(model, &mode, &settings.priors, &settings.mcmc, 3 << 32, "stage 2 refit")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::{survival_loglik, FnTrajectories};
    use crate::longitudinal::{MarkerModelSpec, Measurement, SubjectRecord};
    use crate::samplers::stream_rng;
    use rand::Rng;

    fn toy_data(n: usize, seed: u64, effect: f64) -> (LongitudinalDataset, Vec<[f64; 2]>) {
        let mut rng = stream_rng(seed, 0);
        let mut subjects = Vec::new();
        let mut coefs = Vec::new();
        for i in 0..n {
            let w = [rng.random_range(-1.0..1.0), (rng.random::<f64>() < 0.5) as u8 as f64];
            let tr = [rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)];
            coefs.push(tr);
            // exponential-ish time from the covariate effect only
            let rate = 0.5 * (effect * w[0]).exp();
            let t: f64 = (-rng.random::<f64>().ln() / rate).min(2.0);
            let cause = if t >= 2.0 { 0 } else { 1 + (rng.random::<f64>() < 0.4) as usize };
            subjects.push(SubjectRecord {
                id: format!("s{i}"),
                event_time: t.max(1e-3),
                cause,
                covariates: w.to_vec(),
                series: vec![vec![Measurement { time: 0.0, value: tr[0] }]],
            });
        }
        let data = LongitudinalDataset::new(subjects, vec![MarkerModelSpec::linear("y1")], vec!["w1".into(), "w2".into()], 2).unwrap();
        (data, coefs)
    }

    #[test]
    fn likelihood_matches_hazard_module() {
        let (data, coefs) = toy_data(40, 1, 0.5);
        let traj = FnTrajectories::new(1, |i, _, t| coefs[i][0] + coefs[i][1] * t);
        let model = Stage2Model::new(&traj, &["y1".into()], &data, &BaselineSettings::default()).unwrap();
        let nk = model.knots().len() - 1;
        let params = HazardParams::new(
            vec![
                CauseEffects { gamma: vec![0.4, -0.3], alpha: vec![0.7] },
                CauseEffects { gamma: vec![-0.2, 0.1], alpha: vec![-0.5] },
            ],
            PiecewiseBaseline::new(model.knots().to_vec(), vec![(0..nk).map(|k| 0.2 + 0.05 * k as f64).collect(), vec![0.3; nk]]).unwrap(),
        )
        .unwrap();
        let quad = Quadrature::default();
        let want: f64 = data.subjects().iter().enumerate().map(|(i, s)| survival_loglik(&params, &traj, &quad, i, s).unwrap()).sum();
        let got = model.log_likelihood(&params).unwrap();
        assert!(((got - want) / want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn trajectory_shift_is_absorbed_by_the_baseline() {
        // η → η + c with α fixed multiplies every hazard by e^{αc}; scaling the
        // heights by e^{−αc} restores the likelihood exactly
        let (data, coefs) = toy_data(30, 2, 0.5);
        let shift = 0.8;
        let t0 = FnTrajectories::new(1, |i, _, t| coefs[i][0] + coefs[i][1] * t);
        let t1 = FnTrajectories::new(1, |i, _, t| coefs[i][0] + coefs[i][1] * t + shift);
        let bs = BaselineSettings::default();
        let m0 = Stage2Model::new(&t0, &["y1".into()], &data, &bs).unwrap();
        let m1 = Stage2Model::new(&t1, &["y1".into()], &data, &bs).unwrap();
        let nk = m0.knots().len() - 1;
        let mk = |alpha: f64, scale: f64| {
            HazardParams::new(
                vec![
                    CauseEffects { gamma: vec![0.1, 0.2], alpha: vec![alpha] },
                    CauseEffects { gamma: vec![0.0, 0.0], alpha: vec![0.0] },
                ],
                PiecewiseBaseline::new(m0.knots().to_vec(), vec![vec![0.3 * scale; nk], vec![0.2; nk]]).unwrap(),
            )
            .unwrap()
        };
        for alpha in [-0.7, 0.4, 1.1] {
            let l0 = m0.log_likelihood(&mk(alpha, 1.0)).unwrap();
            let l1 = m1.log_likelihood(&mk(alpha, (-alpha * shift).exp())).unwrap();
            assert!((l0 - l1).abs() < 1e-10 * l0.abs(), "{l0} vs {l1}");
        }
    }

    fn quick(family: Family) -> Stage2Settings {
        Stage2Settings {
            mcmc: McmcConfig { chains: 1, iters: 3000, burnin: 1000, thin: 1, seed: 5 },
            spike_slab: SpikeSlabConfig { family, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn strong_covariate_is_selected_and_ds_zeros_are_exact() {
        let (data, coefs) = toy_data(300, 3, 1.2);
        let traj = FnTrajectories::new(1, |i, _, t| coefs[i][0] + coefs[i][1] * t);
        let model = Stage2Model::new(&traj, &["y1".into()], &data, &BaselineSettings::default()).unwrap();
        for family in [Family::Ds, Family::Cs] {
            let fit = fit_selection_model(&model, &quick(family)).unwrap();
            let c = fit.coefficients.iter().position(|c| c.label() == "gamma[1,w1]").unwrap();
            let rate = fit.indicator_draws(c).iter().filter(|b| **b).count() as f64 / fit.n_draws() as f64;
            assert!(rate > 0.95, "{family}: {rate}");
            let mean = fit.value_draws(c).iter().sum::<f64>() / fit.n_draws() as f64;
            assert!(mean > 0.6, "{family}: {mean}");
            if family == Family::Ds {
                for m in 0..fit.n_draws() {
                    for c in 0..fit.coefficients.len() {
                        assert_eq!(fit.included[m][c], fit.values[m][c] != 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_mask_refit_gives_occurrence_exposure_rates() {
        let (data, coefs) = toy_data(200, 4, 0.0);
        let traj = FnTrajectories::new(1, |i, _, t| coefs[i][0] + coefs[i][1] * t);
        let model = Stage2Model::new(&traj, &["y1".into()], &data, &BaselineSettings::default()).unwrap();
        let mask = vec![false; model.coefficients().len()];
        let fit = refit_selected(&model, &mask, &quick(Family::Ds)).unwrap();
        assert!(fit.values.iter().flatten().all(|v| *v == 0.0));
        let mean = fit.mean_params().unwrap();
        // occurrence / exposure per interval
        let knots = model.knots();
        for l in 0..2 {
            for k in 0..knots.len() - 1 {
                let d = data
                    .subjects()
                    .iter()
                    .filter(|s| s.cause == l + 1 && s.event_time > knots[k] && s.event_time <= knots[k + 1] || (k == 0 && s.event_time == 0.0 && s.cause == l + 1))
                    .count() as f64;
                let e: f64 = data.subjects().iter().map(|s| (s.event_time.min(knots[k + 1]) - knots[k]).max(0.0)).sum();
                let want = d / e;
                let got = mean.baseline.heights(l)[k];
                assert!((got - want).abs() < 0.1 * want + 0.02, "cause {l} interval {k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn draws_round_trip_through_csv() {
        let (data, coefs) = toy_data(50, 6, 0.5);
        let traj = FnTrajectories::new(1, |i, _, t| coefs[i][0] + coefs[i][1] * t);
        let model = Stage2Model::new(&traj, &["y1".into()], &data, &BaselineSettings::default()).unwrap();
        let settings = Stage2Settings { mcmc: McmcConfig { chains: 2, iters: 60, burnin: 20, thin: 2, seed: 1 }, ..quick(Family::Cs) };
        let fit = fit_selection_model(&model, &settings).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (d, s) = (dir.path().join("draws.csv"), dir.path().join("summary.json"));
        fit.write_draws_csv(&d).unwrap();
        std::fs::write(&s, serde_json::to_string(&fit.summary()).unwrap()).unwrap();
        let back = Stage2Fit::read(&d, &s).unwrap();
        assert_eq!(back.values, fit.values);
        assert_eq!(back.included, fit.included);
        assert_eq!(back.heights, fit.heights);
        assert_eq!(Coefficient::parse("alpha[2,y1]").unwrap().label(), "alpha[2,y1]");
    }
}
