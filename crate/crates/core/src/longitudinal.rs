//! Longitudinal data, mixed-model design vectors, and Gaussian likelihood terms.
//!
//! Measurements are stored ragged: one series per marker per subject, each a
//! list of `(time, value)` pairs at the exact observation times. A missing
//! marker value at a visit is simply an absent row.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub const LONGITUDINAL_FILE: &str = "longitudinal.csv";
pub const SUBJECTS_FILE: &str = "subjects.csv";

/// Polynomial time trend shared by the fixed and random parts of a marker model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    #[default]
    Linear,
    Quadratic,
}

impl Trend {
    pub fn dim(self) -> usize {
        match self {
            Trend::Linear => 2,
            Trend::Quadratic => 3,
        }
    }

    /// Writes `(1, s[, s²])` into `out`, which must have length `dim()`.
    #[inline]
    pub fn fill(self, s: f64, out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = s;
        if let Trend::Quadratic = self {
            out[2] = s * s;
        }
    }
}

/// Design builders for one marker.
///
/// Both supported trends use the same polynomial basis for the fixed design
/// `X(s)` and the random design `Z(s)`, so `p == q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerModelSpec {
    pub name: String,
    #[serde(default)]
    pub trend: Trend,
}

impl MarkerModelSpec {
    pub fn new(name: impl Into<String>, trend: Trend) -> Self {
        Self {
            name: name.into(),
            trend,
        }
    }

    pub fn linear(name: impl Into<String>) -> Self {
        Self::new(name, Trend::Linear)
    }

    /// Number of fixed effects.
    pub fn p(&self) -> usize {
        self.trend.dim()
    }

    /// Number of random effects.
    pub fn q(&self) -> usize {
        self.trend.dim()
    }

    pub fn fixed_design(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.p()];
        self.trend.fill(s, &mut out);
        out
    }

    pub fn random_design(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.q()];
        self.trend.fill(s, &mut out);
        out
    }

    fn check_dims(&self, beta: &[f64], b: &[f64]) -> Result<()> {
        if beta.len() != self.p() {
            return Err(Error::DimensionMismatch {
                marker: self.name.clone(),
                what: "fixed effects",
                expected: self.p(),
                actual: beta.len(),
            });
        }
        if b.len() != self.q() {
            return Err(Error::DimensionMismatch {
                marker: self.name.clone(),
                what: "random effects",
                expected: self.q(),
                actual: b.len(),
            });
        }
        Ok(())
    }

    /// `X(s)ᵀβ + Z(s)ᵀb` without dimension checks.
    #[inline]
    pub(crate) fn eta_unchecked(&self, beta: &[f64], b: &[f64], s: f64) -> f64 {
        let mut row = [0.0; 3];
        let d = self.trend.dim();
        self.trend.fill(s, &mut row[..d]);
        let mut acc = 0.0;
        for j in 0..d {
            acc += row[j] * (beta[j] + b[j]);
        }
        acc
    }
}

/// Fixed effects and residual variance of one marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffects {
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

/// Random effects of one subject, stacked marker by marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectsDraw {
    pub per_marker: Vec<Vec<f64>>,
}

impl RandomEffectsDraw {
    pub fn stacked(&self) -> Vec<f64> {
        self.per_marker.iter().flatten().copied().collect()
    }

    pub fn from_stacked(stacked: &[f64], markers: &[MarkerModelSpec]) -> Result<Self> {
        let total: usize = markers.iter().map(MarkerModelSpec::q).sum();
        if stacked.len() != total {
            return Err(Error::Data(format!(
                "stacked random effects have length {}, expected {total}",
                stacked.len()
            )));
        }
        let mut per_marker = Vec::with_capacity(markers.len());
        let mut offset = 0;
        for m in markers {
            per_marker.push(stacked[offset..offset + m.q()].to_vec());
            offset += m.q();
        }
        Ok(Self { per_marker })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub time: f64,
    pub value: f64,
}

/// One subject: survival outcome, time-invariant covariates and marker series.
///
/// `cause == 0` means censored; causes are numbered `1..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub event_time: f64,
    pub cause: usize,
    pub covariates: Vec<f64>,
    pub series: Vec<Vec<Measurement>>,
}

impl SubjectRecord {
    pub fn n_measurements(&self) -> usize {
        self.series.iter().map(Vec::len).sum()
    }

    pub fn is_censored(&self) -> bool {
        self.cause == 0
    }

    /// The subject's history up to landmark `s`: measurements at times `≤ s`.
    pub fn history_until(&self, s: f64) -> SubjectRecord {
        SubjectRecord {
            series: self
                .series
                .iter()
                .map(|ser| ser.iter().copied().filter(|m| m.time <= s).collect())
                .collect(),
            ..self.clone()
        }
    }
}

/// A validated collection of subjects with a fixed marker list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDataset {
    subjects: Vec<SubjectRecord>,
    markers: Vec<MarkerModelSpec>,
    covariate_names: Vec<String>,
    n_causes: usize,
}

impl LongitudinalDataset {
    pub fn new(
        subjects: Vec<SubjectRecord>,
        markers: Vec<MarkerModelSpec>,
        covariate_names: Vec<String>,
        n_causes: usize,
    ) -> Result<Self> {
        if markers.is_empty() {
            return Err(Error::Data("at least one marker is required".into()));
        }
        if n_causes == 0 {
            return Err(Error::Data("at least one event cause is required".into()));
        }
        let mut seen = HashSet::with_capacity(subjects.len());
        for subj in &subjects {
            if !seen.insert(subj.id.as_str()) {
                return Err(Error::Data(format!("duplicate subject id `{}`", subj.id)));
            }
            if !(subj.event_time.is_finite() && subj.event_time >= 0.0) {
                return Err(Error::Data(format!(
                    "subject `{}`: event time must be finite and non-negative",
                    subj.id
                )));
            }
            if subj.cause > n_causes {
                return Err(Error::Data(format!(
                    "subject `{}`: cause {} exceeds the number of causes {n_causes}",
                    subj.id, subj.cause
                )));
            }
            if subj.covariates.len() != covariate_names.len() {
                return Err(Error::Data(format!(
                    "subject `{}`: {} covariates, expected {}",
                    subj.id,
                    subj.covariates.len(),
                    covariate_names.len()
                )));
            }
            if subj.covariates.iter().any(|w| !w.is_finite()) {
                return Err(Error::Data(format!("subject `{}`: non-finite covariate", subj.id)));
            }
            if subj.series.len() != markers.len() {
                return Err(Error::Data(format!(
                    "subject `{}`: {} marker series, expected {}",
                    subj.id,
                    subj.series.len(),
                    markers.len()
                )));
            }
            if subj.n_measurements() == 0 {
                return Err(Error::Data(format!("subject `{}` has no measurements", subj.id)));
            }
            for (k, ser) in subj.series.iter().enumerate() {
                for m in ser {
                    if !m.value.is_finite() {
                        return Err(Error::Data(format!(
                            "subject `{}`, marker `{}`: non-finite value",
                            subj.id, markers[k].name
                        )));
                    }
                    if !(m.time >= 0.0 && m.time <= subj.event_time) {
                        return Err(Error::Data(format!(
                            "subject `{}`, marker `{}`: measurement time {} outside [0, {}]",
                            subj.id, markers[k].name, m.time, subj.event_time
                        )));
                    }
                }
            }
        }
        Ok(Self {
            subjects,
            markers,
            covariate_names,
            n_causes,
        })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn markers(&self) -> &[MarkerModelSpec] {
        &self.markers
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_causes(&self) -> usize {
        self.n_causes
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn max_time(&self) -> f64 {
        self.subjects.iter().map(|s| s.event_time).fold(0.0, f64::max)
    }

    /// Dataset restricted to the given subject indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            markers: self.markers.clone(),
            covariate_names: self.covariate_names.clone(),
            n_causes: self.n_causes,
        }
    }

    /// Replaces the marker specifications (names must match in order).
    pub fn with_marker_specs(mut self, specs: Vec<MarkerModelSpec>) -> Result<Self> {
        if specs.len() != self.markers.len()
            || specs.iter().zip(&self.markers).any(|(a, b)| a.name != b.name)
        {
            return Err(Error::Config(
                "marker specifications do not match the dataset markers".into(),
            ));
        }
        self.markers = specs;
        Ok(self)
    }

    /// Reads `longitudinal.csv` and `subjects.csv` from `dir`.
    ///
    /// Marker trends come from `specs` when given (matched by name, data markers
    /// must all be listed); otherwise markers are linear in order of first
    /// appearance.
    pub fn read_dir(dir: &Path, specs: Option<&[MarkerModelSpec]>, n_causes: Option<usize>) -> Result<Self> {
        Self::read_csv(&dir.join(LONGITUDINAL_FILE), &dir.join(SUBJECTS_FILE), specs, n_causes)
    }

    pub fn read_csv(
        long_path: &Path,
        subjects_path: &Path,
        specs: Option<&[MarkerModelSpec]>,
        n_causes: Option<usize>,
    ) -> Result<Self> {
        let (covariate_names, heads) = read_subject_rows(subjects_path)?;
        let rows = read_long_rows(long_path)?;

        let markers: Vec<MarkerModelSpec> = match specs {
            Some(s) => s.to_vec(),
            None => {
                let mut names: Vec<String> = Vec::new();
                for r in &rows {
                    if !names.contains(&r.marker) {
                        names.push(r.marker.clone());
                    }
                }
                names.into_iter().map(MarkerModelSpec::linear).collect()
            }
        };
        let marker_index: HashMap<&str, usize> =
            markers.iter().enumerate().map(|(k, m)| (m.name.as_str(), k)).collect();
        let subject_index: HashMap<&str, usize> =
            heads.iter().enumerate().map(|(i, h)| (h.id.as_str(), i)).collect();

        let mut series: Vec<Vec<Vec<Measurement>>> = vec![vec![Vec::new(); markers.len()]; heads.len()];
        for r in &rows {
            let k = *marker_index
                .get(r.marker.as_str())
                .ok_or_else(|| Error::Data(format!("unknown marker `{}`", r.marker)))?;
            let i = *subject_index
                .get(r.id.as_str())
                .ok_or_else(|| Error::Data(format!("measurement for unknown subject `{}`", r.id)))?;
            series[i][k].push(Measurement {
                time: r.time,
                value: r.value,
            });
        }
        for per_subject in &mut series {
            for ser in per_subject.iter_mut() {
                ser.sort_by(|a, b| a.time.total_cmp(&b.time));
            }
        }

        let max_cause = heads.iter().map(|h| h.cause).max().unwrap_or(0);
        let n_causes = n_causes.unwrap_or(max_cause.max(1));
        let subjects = heads
            .into_iter()
            .zip(series)
            .map(|(h, series)| SubjectRecord {
                id: h.id,
                event_time: h.event_time,
                cause: h.cause,
                covariates: h.covariates,
                series,
            })
            .collect();
        Self::new(subjects, markers, covariate_names, n_causes)
    }

    /// Writes `longitudinal.csv` and `subjects.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let path = dir.join(LONGITUDINAL_FILE);
        let mut w = csv::Writer::from_writer(File::create(&path).map_err(|e| Error::io(&path, e))?);
        w.write_record(["id", "marker", "time", "value"])?;
        for subj in &self.subjects {
            for (k, ser) in subj.series.iter().enumerate() {
                for m in ser {
                    w.write_record([
                        subj.id.as_str(),
                        self.markers[k].name.as_str(),
                        &m.time.to_string(),
                        &m.value.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(SUBJECTS_FILE);
        let mut w = csv::Writer::from_writer(File::create(&path).map_err(|e| Error::io(&path, e))?);
        let mut header = vec!["id".to_string(), "event_time".into(), "cause".into()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for subj in &self.subjects {
            let mut rec = vec![subj.id.clone(), subj.event_time.to_string(), subj.cause.to_string()];
            rec.extend(subj.covariates.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct LongRow {
    id: String,
    marker: String,
    time: f64,
    value: f64,
}

struct SubjectHead {
    id: String,
    event_time: f64,
    cause: usize,
    covariates: Vec<f64>,
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file))
}

fn read_long_rows(path: &Path) -> Result<Vec<LongRow>> {
    let mut rdr = open_reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["id", "marker", "time", "value"] {
        return Err(Error::Data(format!(
            "{}: expected columns `id, marker, time, value`, found `{}`",
            path.display(),
            header.join(", ")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

fn read_subject_rows(path: &Path) -> Result<(Vec<String>, Vec<SubjectHead>)> {
    let mut rdr = open_reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let well_formed = header.len() >= 3
        && header[..3] == ["id", "event_time", "cause"]
        && header[3..].iter().enumerate().all(|(j, h)| *h == format!("w{}", j + 1));
    if !well_formed {
        return Err(Error::Data(format!(
            "{}: expected columns `id, event_time, cause, w1..wp`, found `{}`",
            path.display(),
            header.join(", ")
        )));
    }
    let covariate_names = header[3..].to_vec();
    let mut heads = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let parse = |j: usize| -> Result<f64> {
            field(j)
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("{}: cannot parse `{}` as a number", path.display(), field(j))))
        };
        let cause = field(2)
            .parse::<usize>()
            .map_err(|_| Error::Data(format!("{}: invalid cause `{}`", path.display(), field(2))))?;
        heads.push(SubjectHead {
            id: field(0).to_string(),
            event_time: parse(1)?,
            cause,
            covariates: (3..rec.len()).map(parse).collect::<Result<_>>()?,
        });
    }
    Ok((covariate_names, heads))
}

/// `X(s)ᵀβ + Z(s)ᵀb` for one marker.
pub fn linear_predictor(spec: &MarkerModelSpec, beta: &[f64], b: &[f64], s: f64) -> Result<f64> {
    spec.check_dims(beta, b)?;
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("time {s} must be non-negative")));
    }
    Ok(spec.eta_unchecked(beta, b, s))
}

/// Sum of Gaussian log-densities of one subject's series for one marker.
pub fn longitudinal_loglik(
    spec: &MarkerModelSpec,
    series: &[Measurement],
    beta: &[f64],
    sigma2: f64,
    b: &[f64],
) -> Result<f64> {
    spec.check_dims(beta, b)?;
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("residual variance {sigma2} must be positive")));
    }
    let mut ssr = 0.0;
    for m in series {
        let r = m.value - spec.eta_unchecked(beta, b, m.time);
        ssr += r * r;
    }
    let n = series.len() as f64;
    Ok(-0.5 * n * (LN_2PI + sigma2.ln()) - 0.5 * ssr / sigma2)
}

/// Groups subject indices by whether they have a measurement of `marker`.
pub fn subjects_with_marker(data: &LongitudinalDataset, marker: usize) -> Vec<usize> {
    data.subjects()
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.series[marker].is_empty())
        .map(|(i, _)| i)
        .collect()
}

/// Marker name → index lookup.
pub fn marker_lookup(markers: &[MarkerModelSpec]) -> BTreeMap<String, usize> {
    markers.iter().enumerate().map(|(k, m)| (m.name.clone(), k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matmul_oracle(spec: &MarkerModelSpec, beta: &[f64], b: &[f64], s: f64) -> f64 {
        let x = spec.fixed_design(s);
        let z = spec.random_design(s);
        let xb: f64 = x.iter().zip(beta).map(|(a, c)| a * c).sum();
        let zb: f64 = z.iter().zip(b).map(|(a, c)| a * c).sum();
        xb + zb
    }

    #[test]
    fn linear_predictor_examples() {
        let spec = MarkerModelSpec::linear("y");
        assert_eq!(linear_predictor(&spec, &[-0.5, 0.5], &[0.0, 0.0], 1.0).unwrap(), 0.0);
        assert_eq!(linear_predictor(&spec, &[0.0, 0.0], &[0.0, 0.0], 7.3).unwrap(), 0.0);
        let v = linear_predictor(&spec, &[-0.5, 0.5], &[0.2, -0.1], 2.0).unwrap();
        let oracle = matmul_oracle(&spec, &[-0.5, 0.5], &[0.2, -0.1], 2.0);
        assert!((v - 0.5).abs() < 1e-15);
        assert!((v - oracle).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_names_marker() {
        let spec = MarkerModelSpec::new("sbp", Trend::Quadratic);
        let err = linear_predictor(&spec, &[1.0, 2.0], &[0.0, 0.0, 0.0], 1.0).unwrap_err();
        assert!(err.to_string().contains("sbp"));
    }

    #[test]
    fn loglik_examples() {
        let spec = MarkerModelSpec::linear("y");
        let beta = [0.3, 0.0];
        let b = [0.0, 0.0];
        let one = [Measurement { time: 0.0, value: 0.3 }];
        let v1 = longitudinal_loglik(&spec, &one, &beta, 1.0, &b).unwrap();
        assert!((v1 + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        let two = [one[0], one[0]];
        assert_eq!(longitudinal_loglik(&spec, &two, &beta, 1.0, &b).unwrap(), 2.0 * v1);

        let point = [Measurement { time: 0.0, value: 1.0 }];
        let v = longitudinal_loglik(&spec, &point, &[0.0, 0.0], 0.5, &b).unwrap();
        let want = -0.5 * std::f64::consts::PI.ln() - 1.0;
        assert!((v - want).abs() < 1e-14);
    }

    #[test]
    fn nonpositive_variance_is_domain_error() {
        let spec = MarkerModelSpec::linear("y");
        let err = longitudinal_loglik(&spec, &[], &[0.0, 0.0], 0.0, &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    fn density_product_oracle(spec: &MarkerModelSpec, series: &[Measurement], beta: &[f64], s2: f64, b: &[f64]) -> f64 {
        series
            .iter()
            .map(|m| {
                let mu = matmul_oracle(spec, beta, b, m.time);
                (-(m.value - mu).powi(2) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
            })
            .product::<f64>()
            .ln()
    }

    proptest! {
        #[test]
        fn predictor_is_linear(a in -3.0..3.0f64, s in 0.0..3.0f64,
                               b1 in prop::collection::vec(-2.0..2.0f64, 3),
                               b2 in prop::collection::vec(-2.0..2.0f64, 3),
                               re in prop::collection::vec(-2.0..2.0f64, 3)) {
            let spec = MarkerModelSpec::new("y", Trend::Quadratic);
            let combo: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| a * x + y).collect();
            let zero = [0.0; 3];
            let lhs = linear_predictor(&spec, &combo, &re, s).unwrap();
            let zb: f64 = spec.random_design(s).iter().zip(&re).map(|(z, r)| z * r).sum();
            let rhs = a * linear_predictor(&spec, &b1, &re, s).unwrap() - a * zb
                + linear_predictor(&spec, &b2, &zero, s).unwrap() + zb;
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn loglik_matches_density_product(values in prop::collection::vec((0.0..2.0f64, -3.0..3.0f64), 1..6),
                                          s2 in 0.2..2.0f64,
                                          beta in prop::collection::vec(-1.0..1.0f64, 2),
                                          b in prop::collection::vec(-1.0..1.0f64, 2)) {
            let spec = MarkerModelSpec::linear("y");
            let series: Vec<Measurement> = values.iter().map(|&(time, value)| Measurement { time, value }).collect();
            let got = longitudinal_loglik(&spec, &series, &beta, s2, &b).unwrap();
            let want = density_product_oracle(&spec, &series, &beta, s2, &b);
            prop_assert!(((got - want) / want.abs().max(1.0)).abs() < 1e-10);
        }

        #[test]
        fn loglik_decreases_with_residual(r in 0.0..3.0f64, extra in 0.01..2.0f64, s2 in 0.1..3.0f64) {
            let spec = MarkerModelSpec::linear("y");
            let near = [Measurement { time: 0.5, value: r }];
            let far = [Measurement { time: 0.5, value: r + extra }];
            let z = [0.0, 0.0];
            prop_assert!(longitudinal_loglik(&spec, &far, &z, s2, &z).unwrap()
                < longitudinal_loglik(&spec, &near, &z, s2, &z).unwrap());
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let subjects = vec![
            SubjectRecord {
                id: "a".into(),
                event_time: 1.25,
                cause: 1,
                covariates: vec![0.1, 1.0],
                series: vec![
                    vec![Measurement { time: 0.0, value: 0.123456789012345 }],
                    vec![Measurement { time: 0.5, value: -2.0 }],
                ],
            },
            SubjectRecord {
                id: "b".into(),
                event_time: 2.0,
                cause: 0,
                covariates: vec![-0.3, 0.0],
                series: vec![vec![Measurement { time: 0.1, value: 1.0 / 3.0 }], vec![]],
            },
        ];
        let data = LongitudinalDataset::new(
            subjects,
            vec![MarkerModelSpec::linear("Y1"), MarkerModelSpec::linear("Y2")],
            vec!["w1".into(), "w2".into()],
            2,
        )
        .unwrap();
        data.write_dir(dir.path()).unwrap();
        let back = LongitudinalDataset::read_dir(dir.path(), None, Some(2)).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn measurement_after_event_rejected() {
        let subj = SubjectRecord {
            id: "a".into(),
            event_time: 1.0,
            cause: 1,
            covariates: vec![],
            series: vec![vec![Measurement { time: 1.5, value: 0.0 }]],
        };
        let err = LongitudinalDataset::new(vec![subj], vec![MarkerModelSpec::linear("y")], vec![], 1);
        assert!(err.is_err());
    }
}
