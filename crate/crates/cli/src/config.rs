//! Run configuration: a JSON file with a versioned `schema` key. Relative paths
//! resolve against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use sharedspace::calibration::{DecisionAnnotation, ModelParams, ParamName, WorkflowConfig};
use sharedspace::metrics::MetricsConfig;
use sharedspace::scenario::{load_scenario, DatasetTag};
use sharedspace::sim::SimConfig;
use sharedspace::synthetic::{crossing_scenario, pass_templates, realize, synthetic_config};
use sharedspace::Scenario;

use crate::failure::{input, internal, Failure, Result};

pub const RUN_SCHEMA: &str = "sharedspace.run/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize, clap::ValueEnum)]
pub enum VariantTag {
    #[serde(rename = "SFM_BASELINE")]
    #[value(name = "SFM_BASELINE")]
    SfmBaseline,
    #[serde(rename = "GSFM_U")]
    #[value(name = "GSFM_U")]
    GsfmU,
    #[serde(rename = "GSFM_M1")]
    #[value(name = "GSFM_M1")]
    GsfmM1,
    #[serde(rename = "GSFM_M2")]
    #[value(name = "GSFM_M2")]
    GsfmM2,
    #[serde(rename = "GSFM_M3")]
    #[value(name = "GSFM_M3")]
    GsfmM3,
}

impl VariantTag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SfmBaseline => "SFM_BASELINE",
            Self::GsfmU => "GSFM_U",
            Self::GsfmM1 => "GSFM_M1",
            Self::GsfmM2 => "GSFM_M2",
            Self::GsfmM3 => "GSFM_M3",
        }
    }

    /// Name of the variant inside a calibration report.
    pub fn report_name(self) -> &'static str {
        match self {
            Self::SfmBaseline | Self::GsfmU => "GSFM-U",
            Self::GsfmM1 => "GSFM-M1",
            Self::GsfmM2 => "GSFM-M2",
            Self::GsfmM3 => "GSFM-M3",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordedSource {
    pub trajectories: PathBuf,
    pub metadata: PathBuf,
}

/// Generated scenes. `groups` plants parameter sets, assigned round-robin by scene index.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SyntheticSource {
    Crossing {
        id: String,
    },
    Pass {
        prefix: String,
        count: usize,
        seed: u64,
        #[serde(default)]
        groups: Vec<BTreeMap<ParamName, f64>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // checked against RUN_SCHEMA before deserialization
    #[allow(dead_code)]
    pub schema: String,
    pub dataset: DatasetTag,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scenarios: Vec<RecordedSource>,
    #[serde(default)]
    pub synthetic: Vec<SyntheticSource>,
    /// Recorded game decisions, a JSON array.
    #[serde(default)]
    pub decisions: Option<PathBuf>,
    /// Calibration report to take parameters from; defaults to `<out>/calibration.json`.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    /// Partial simulation settings merged over the dataset defaults.
    #[serde(default)]
    pub simulation: serde_json::Value,
    #[serde(default)]
    pub workflow: WorkflowConfig,
    #[serde(default)]
    pub metrics: MetricsConfig<f64>,
    #[serde(default)]
    pub variants: Vec<VariantTag>,
}

/// A loaded config with paths made absolute.
pub struct Loaded {
    pub run: RunConfig,
    pub base_dir: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))
}

impl Loaded {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| input(format!("{}: invalid JSON: {e}", path.display())))?;
        match raw.get("schema").and_then(|s| s.as_str()) {
            Some(RUN_SCHEMA) => {}
            Some(other) => return Err(input(format!("{}: unsupported schema {other:?}, expected {RUN_SCHEMA:?}", path.display()))),
            None => return Err(input(format!("{}: missing \"schema\": {RUN_SCHEMA:?}", path.display()))),
        }
        let run: RunConfig = serde_json::from_value(raw).map_err(|e| input(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { run, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Dataset defaults, then the overrides. Scenes produced by the model itself start
    /// at rest so that their generating parameters reproduce them.
    pub fn sim_config(&self) -> Result<SimConfig<f64>> {
        let realized = self.run.synthetic.iter().any(|s| matches!(s, SyntheticSource::Pass { .. }));
        let defaults = if realized { synthetic_config() } else { SimConfig::for_dataset(self.run.dataset) };
        let mut value = serde_json::to_value(&defaults).map_err(internal)?;
        merge(&mut value, &self.run.simulation);
        serde_json::from_value(value).map_err(|e| input(format!("simulation settings: {e}")))
    }

    /// Recorded scenarios first (in config order), then generated ones.
    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        if self.run.scenarios.is_empty() && self.run.synthetic.is_empty() {
            return Err(input("config lists no scenarios or synthetic sources"));
        }
        let mut out = Vec::new();
        for src in &self.run.scenarios {
            let (csv, meta) = (self.resolve(&src.trajectories), self.resolve(&src.metadata));
            for p in [&csv, &meta] {
                if !p.exists() {
                    return Err(input(format!("dataset file not found: {}", p.display())));
                }
            }
            out.push(load_scenario(&csv, &meta).map_err(|e| input(format!("{}: {e}", csv.display())))?);
        }
        for src in &self.run.synthetic {
            match src {
                SyntheticSource::Crossing { id } => out.push(crossing_scenario(id)),
                SyntheticSource::Pass { prefix, count, seed, groups } => {
                    let templates = pass_templates(prefix, *count, *seed);
                    let base = synthetic_config();
                    let index = |s: &Scenario| templates.iter().position(|t| t.id == s.id).unwrap_or(0);
                    let realized = realize(&templates, |s| {
                        let mut c = base.clone();
                        if !groups.is_empty() {
                            let mut p = ModelParams { sfm: c.params, game: c.game };
                            for (name, v) in &groups[index(s) % groups.len()] {
                                name.set(&mut p, *v);
                            }
                            (c.params, c.game) = (p.sfm, p.game);
                        }
                        c
                    })
                    .map_err(|e| input(format!("synthetic scenes {prefix}: {e}")))?;
                    out.extend(realized);
                }
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        if let Some(dup) = out.iter().find(|s| !ids.insert(s.id.clone())) {
            return Err(input(format!("duplicate scenario id {:?}", dup.id)));
        }
        Ok(out)
    }

    pub fn decisions(&self) -> Result<Vec<DecisionAnnotation>> {
        match &self.run.decisions {
            None => Ok(Vec::new()),
            Some(p) => {
                let p = self.resolve(p);
                serde_json::from_str(&read(&p)?).map_err(|e| input(format!("{}: {e}", p.display())))
            }
        }
    }
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (_, serde_json::Value::Null) => {}
        (b, o) => *b = o.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_is_recursive() {
        let mut a = json!({"dt": 0.1, "params": {"lambda": 0.5, "tau": 0.4}});
        merge(&mut a, &json!({"params": {"lambda": 0.9}}));
        assert_eq!(a, json!({"dt": 0.1, "params": {"lambda": 0.9, "tau": 0.4}}));
    }
}
