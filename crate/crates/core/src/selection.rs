//! From indicator draws to local false discovery rates, Bayes factors and
//! selection decisions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::diagnostics::Summary;
use crate::stage2::{CoefKind, Coefficient, Stage2Fit};

/// Fraction of draws with the coefficient outside the slab.
pub fn lbfdr(included: &[bool]) -> Result<f64> {
    if included.is_empty() {
        return Err(Error::Domain("lbfdr of an empty draw set".into()));
    }
    Ok(included.iter().filter(|b| !**b).count() as f64 / included.len() as f64)
}

/// Posterior odds of inclusion divided by the prior odds `a/b`.
pub fn bayes_factor(lbfdr: f64, prior: (f64, f64)) -> f64 {
    let (a, b) = prior;
    if lbfdr <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - lbfdr) / lbfdr * b / a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "threshold")]
pub enum Rule {
    /// Select when lBFDR is strictly below the threshold.
    Lbfdr(f64),
    /// Select when BF is strictly above the threshold.
    Bf(f64),
}

impl Rule {
    pub const LBFDR: Rule = Rule::Lbfdr(0.05);
    pub const BF: Rule = Rule::Bf(1.0);

    pub fn selects(&self, lbfdr: f64, bf: f64) -> bool {
        match *self {
            Rule::Lbfdr(th) => lbfdr < th,
            Rule::Bf(th) => bf > th,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Rule::Lbfdr(_) => "lBFDR",
            Rule::Bf(_) => "BF",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Lbfdr(t) => write!(f, "lbfdr<{t}"),
            Rule::Bf(t) => write!(f, "bf>{t}"),
        }
    }
}

impl FromStr for Rule {
    type Err = Error;

    /// `lbfdr`, `bf`, or with a threshold: `lbfdr<0.1`, `bf>3`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let parse = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad threshold in rule `{s}`")));
        match lower.as_str() {
            "lbfdr" => Ok(Rule::LBFDR),
            "bf" => Ok(Rule::BF),
            _ => {
                if let Some(t) = lower.strip_prefix("lbfdr<") {
                    Ok(Rule::Lbfdr(parse(t)?))
                } else if let Some(t) = lower.strip_prefix("bf>") {
                    Ok(Rule::Bf(parse(t)?))
                } else {
                    Err(Error::Config(format!("unknown selection rule `{s}` (expected lbfdr or bf)")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub coefficient: Coefficient,
    pub summary: Summary,
    pub lbfdr: f64,
    pub bf: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub rule: Rule,
    pub entries: Vec<SelectionEntry>,
}

impl SelectionReport {
    pub fn from_fit(fit: &Stage2Fit, rule: Rule) -> Result<Self> {
        let mut entries = Vec::with_capacity(fit.coefficients.len());
        for (c, coef) in fit.coefficients.iter().enumerate() {
            let fdr = lbfdr(&fit.indicator_draws(c))?;
            let bf = bayes_factor(fdr, fit.inclusion_prior);
            entries.push(SelectionEntry {
                coefficient: coef.clone(),
                summary: Summary::of(&fit.value_draws(c)),
                lbfdr: fdr,
                bf,
                selected: rule.selects(fdr, bf),
            });
        }
        Ok(Self { rule, entries })
    }

    /// Re-applies a different rule to the same draws.
    pub fn with_rule(&self, rule: Rule) -> Self {
        let mut out = self.clone();
        out.rule = rule;
        out.entries.iter_mut().for_each(|e| e.selected = rule.selects(e.lbfdr, e.bf));
        out
    }

    /// Selection mask in coefficient order.
    pub fn mask(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.selected).collect()
    }

    pub fn selected_of(&self, cause: usize, kind: CoefKind) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.selected && e.coefficient.cause == cause && e.coefficient.kind == kind)
            .map(|e| e.coefficient.name.as_str())
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["name", "cause", "est", "sd", "ci2.5", "ci97.5", "lbfdr", "bf", "selected"])?;
        for e in &self.entries {
            w.write_record([
                e.coefficient.label(),
                e.coefficient.cause.to_string(),
                format!("{:.4}", e.summary.mean),
                format!("{:.4}", e.summary.sd),
                format!("{:.4}", e.summary.lo),
                format!("{:.4}", e.summary.hi),
                format!("{:.4}", e.lbfdr),
                format_bf(e.bf),
                (e.selected as u8).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `Inf` for an infinite Bayes factor, otherwise 3 decimals.
pub fn format_bf(bf: f64) -> String {
    if bf.is_infinite() {
        "Inf".into()
    } else {
        format!("{bf:.3}")
    }
}
