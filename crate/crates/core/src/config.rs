//! Run configuration: one JSON document with every tunable constant, all
//! fields optional with the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynpred::DynPredSettings;
use crate::error::{Error, Result};
use crate::samplers::{Family, McmcConfig};
use crate::selection::Rule;
use crate::simgen::{EffectPattern, ScenarioConfig};
use crate::stage1::Stage1Settings;
use crate::stage2::Stage2Settings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    /// Family used by `fit` for the Stage-2 selection model.
    pub family: Family,
    pub rule: Rule,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        Self { family: Family::Ds, rule: Rule::LBFDR }
    }
}

/// A scenario of the replication grid: JSON fields overriding the base
/// scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedScenario {
    pub name: String,
    #[serde(default)]
    pub overrides: serde_json::Map<String, serde_json::Value>,
}

impl NamedScenario {
    pub fn new(name: &str, overrides: serde_json::Value) -> Self {
        let overrides = match overrides {
            serde_json::Value::Object(m) => m,
            _ => serde_json::Map::new(),
        };
        Self { name: name.into(), overrides }
    }

    pub fn resolve(&self, base: &ScenarioConfig) -> Result<ScenarioConfig> {
        let mut v = serde_json::to_value(base)?;
        let obj = v.as_object_mut().expect("struct serializes to an object");
        for (k, val) in &self.overrides {
            obj.insert(k.clone(), val.clone());
        }
        let cfg: ScenarioConfig = serde_json::from_value(v).map_err(|e| Error::Config(format!("scenario `{}`: {e}", self.name)))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicateSettings {
    pub replicates: usize,
    pub scenarios: Vec<NamedScenario>,
    pub families: Vec<Family>,
    pub rules: Vec<Rule>,
}

impl Default for ReplicateSettings {
    fn default() -> Self {
        Self {
            replicates: 20,
            scenarios: default_scenarios(),
            families: vec![Family::Cs, Family::Ds],
            rules: vec![Rule::LBFDR, Rule::BF],
        }
    }
}

/// Easy, hard, the hard scenario's low-correlation counterpart, and
/// single effects on cause 1.
pub fn default_scenarios() -> Vec<NamedScenario> {
    use serde_json::json;
    vec![
        NamedScenario::new("easy", json!({})),
        NamedScenario::new("hard", json!({ "rho": 0.7, "alpha_star": 0.5, "gamma_star": 0.5 })),
        NamedScenario::new("weak", json!({ "rho": 0.1, "alpha_star": 0.5, "gamma_star": 0.5 })),
        NamedScenario::new("single-cause-1", json!({ "pattern": EffectPattern::SingleCause1 })),
    ]
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub stage1: Stage1Settings,
    pub stage2: Stage2Settings,
    pub selection: SelectionSettings,
    pub prediction: DynPredSettings,
    pub replicate: ReplicateSettings,
}

impl Config {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.stage1.mcmc.validate()?;
        self.stage2.mcmc.validate()?;
        self.stage2.spike_slab.validate()?;
        self.prediction.validate()?;
        for s in &self.replicate.scenarios {
            s.resolve(&self.scenario)?;
        }
        Ok(())
    }

    /// Overrides every chain seed with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.stage1.mcmc.seed = seed;
        self.stage2.mcmc.seed = seed;
        self
    }

    /// Scale of the published simulations: 100 replicates of 1000 subjects.
    pub fn full_scale(mut self) -> Self {
        self.replicate.replicates = 100;
        self.scenario.n_subjects = 1000;
        self
    }

    /// Short chains for smoke runs and tests.
    pub fn quick(mut self) -> Self {
        let short = |seed| McmcConfig { chains: 1, iters: 400, burnin: 200, thin: 1, seed };
        self.stage1.mcmc = short(self.stage1.mcmc.seed);
        self.stage2.mcmc = short(self.stage2.mcmc.seed);
        self.stage1.prediction.draws = 100;
        self.stage1.prediction.burnin = 50;
        self.prediction.random_effects.draws = 100;
        self.prediction.random_effects.burnin = 50;
        self.prediction.parameter_draws = 50;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(compact.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
