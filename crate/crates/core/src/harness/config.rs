//! Experiment configuration (TOML) and its content hash.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{AttributionSettings, METHOD_NAMES};
use crate::error::{Error, Result};
use crate::harness::dataset::ShapeStyle;
use crate::metrics::{CurveMetric, DEFAULT_BLUR_SIGMA, DEFAULT_STEPS};
use crate::nn::arch::{preset, LayerSpec};
use crate::nn::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Shapes {
        train: usize,
        test: usize,
        #[serde(default = "default_size")]
        size: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        style: ShapeStyle,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Keep only the first `test_limit` test images.
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

fn default_size() -> usize {
    16
}

/// Unknown keys are rejected by the flattened source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(flatten)]
    pub source: DatasetSource,
}

/// Either a named preset or an explicit layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub name: String,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub layers: Option<Vec<LayerSpec>>,
}

impl ArchitectureSpec {
    pub fn layers(&self, classes: usize) -> Result<Vec<LayerSpec>> {
        match (&self.preset, &self.layers) {
            (Some(p), None) => preset(p, classes),
            (None, Some(l)) => Ok(l.clone()),
            _ => Err(Error::Config(format!(
                "architecture `{}` needs exactly one of `preset` or `layers`",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Budget `k` of the Perturbation metric, in 8-bit levels.
    pub eps_steps: u8,
    /// Also score Perturbation under PGD with this many iterations (0 = off).
    pub pgd_iterations: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            eps_steps: 1,
            pgd_iterations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Map method for the sweep; empty list of budgets disables it.
    pub method: String,
    pub eps_steps: Vec<u8>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            method: "gradients".into(),
            eps_steps: vec![1, 2, 4, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Base seed for attribution randomness.
    pub seed: u64,
    pub datasets: Vec<DatasetSpec>,
    pub architectures: Vec<ArchitectureSpec>,
    /// One trained model per (dataset, architecture, seed).
    pub model_seeds: Vec<u64>,
    pub methods: Vec<String>,
    pub metrics: Vec<CurveMetric>,
    pub steps: usize,
    pub blur_sigma: f64,
    /// Compute AD, IIC, CP, CH and ADCC.
    pub scalar_metrics: bool,
    /// Write every curve to CSV.
    pub write_curves: bool,
    /// Score misclassified images too, against their label.
    pub include_misclassified: bool,
    /// Score every metric only on images whose FGSM attack succeeded, so all
    /// metrics share one image set.
    pub attacked_only: bool,
    pub top_k: usize,
    pub training: TrainConfig,
    pub attribution: AttributionSettings,
    pub attack: AttackConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            seed: 0,
            datasets: vec![DatasetSpec {
                name: "shapes".into(),
                source: DatasetSource::Shapes {
                    train: 6000,
                    test: 100,
                    size: default_size(),
                    seed: 0,
                    style: ShapeStyle::default(),
                },
            }],
            architectures: vec![ArchitectureSpec {
                name: "conv2".into(),
                preset: Some("conv2".into()),
                layers: None,
            }],
            model_seeds: vec![0],
            methods: METHOD_NAMES.iter().map(|s| s.to_string()).collect(),
            metrics: CurveMetric::ALL.to_vec(),
            steps: DEFAULT_STEPS,
            blur_sigma: DEFAULT_BLUR_SIGMA,
            scalar_metrics: true,
            write_curves: true,
            include_misclassified: false,
            attacked_only: false,
            top_k: 3,
            training: TrainConfig::default(),
            attribution: AttributionSettings::default(),
            attack: AttackConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// TOML without `output_dir`, so the copy stored with a run is location independent.
    pub fn to_toml_portable(&self) -> Result<String> {
        let mut v = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        v.remove("output_dir");
        toml::to_string(&v).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.datasets.is_empty() || self.architectures.is_empty() || self.model_seeds.is_empty()
        {
            return bad("need at least one dataset, architecture and model seed".into());
        }
        unique("dataset", self.datasets.iter().map(|d| d.name.as_str()))?;
        unique(
            "architecture",
            self.architectures.iter().map(|a| a.name.as_str()),
        )?;
        unique("model seed", self.model_seeds.iter().map(|s| s.to_string()))?;
        for name in self
            .datasets
            .iter()
            .map(|d| &d.name)
            .chain(self.architectures.iter().map(|a| &a.name))
        {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return bad(format!("name `{name}` must be non-empty [A-Za-z0-9_]"));
            }
        }
        for a in &self.architectures {
            a.layers(2)?;
        }
        if self.methods.is_empty() {
            return bad("method list is empty".into());
        }
        unique("method", self.methods.iter().map(String::as_str))?;
        for m in self
            .methods
            .iter()
            .chain(std::iter::once(&self.sweep.method))
        {
            if !METHOD_NAMES.contains(&m.as_str()) {
                return bad(format!("unknown attribution method `{m}`"));
            }
        }
        if self.metrics.is_empty() {
            return bad("metric list is empty".into());
        }
        unique("metric", self.metrics.iter().map(|m| m.name()))?;
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.blur_sigma > 0.0) {
            return bad("blur_sigma must be positive".into());
        }
        if self.attack.eps_steps == 0 || self.sweep.eps_steps.contains(&0) {
            return bad("eps steps must be in 1..=255".into());
        }
        if self.attacked_only && !self.metrics.contains(&CurveMetric::Perturbation) {
            return bad("attacked_only needs the perturbation metric".into());
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1".into());
        }
        self.training
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        for d in &self.datasets {
            if let DatasetSource::Shapes {
                train, test, size, ..
            } = &d.source
            {
                if *train < 2 || *test < 2 || *size < 8 {
                    return bad(format!(
                        "dataset `{}` needs train, test >= 2 and size >= 8",
                        d.name
                    ));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        let bytes = serde_json::to_vec(&v).expect("json value serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn unique<S: AsRef<str>>(what: &str, items: impl Iterator<Item = S>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for i in items {
        if !seen.insert(i.as_ref().to_string()) {
            return Err(Error::Config(format!("duplicate {what} `{}`", i.as_ref())));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
        output_dir = "a"
        model_seeds = [0, 1]
        methods = ["gradients", "uniform"]

        [[datasets]]
        name = "shapes"
        kind = "shapes"
        train = 100
        test = 10

        [[architectures]]
        name = "tiny"
        layers = [
          { type = "conv", out = 4 },
          { type = "relu" },
          { type = "global_avg_pool" },
          { type = "dense", out = 2 },
          { type = "softmax" },
        ]

        [training]
        learning_rate = 0.01
        epochs = 1
        batch_size = 8
        seed = 0
        init_scale = 0.3
    "#;

    #[test]
    fn parses_and_fills_defaults() {
        let c = ExperimentConfig::from_toml(SMALL).unwrap();
        assert_eq!(c.methods, ["gradients", "uniform"]);
        assert_eq!(c.steps, DEFAULT_STEPS);
        assert_eq!(c.metrics, CurveMetric::ALL);
        assert_eq!(c.attack.eps_steps, 1);
        assert_eq!(c.architectures[0].layers(2).unwrap().len(), 5);
    }

    #[test]
    fn default_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        assert_eq!(
            ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(),
            c
        );
    }

    #[test]
    fn rejects_unknown_keys_and_names() {
        assert!(matches!(
            ExperimentConfig::from_toml("colour = 1"),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_toml(&format!("{SMALL}\n[attack]\nbudget = 3")).is_err());
        let bad = SMALL.replace("\"uniform\"]", "\"rise\"]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = SMALL.replace("[0, 1]", "[1, 1]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        assert!(ExperimentConfig::from_toml("metrics = [\"sparsity\"]").is_err());
        assert!(ExperimentConfig::from_toml("steps = 0").is_err());
    }

    #[test]
    fn hash_ignores_output_dir_and_key_order() {
        let a = ExperimentConfig::from_toml(SMALL).unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        let reordered = SMALL.replace(
            "output_dir = \"a\"\n        model_seeds = [0, 1]",
            "model_seeds = [0, 1]\n        output_dir = \"z\"",
        );
        assert_eq!(
            ExperimentConfig::from_toml(&reordered).unwrap().hash(),
            a.hash()
        );
        let explicit_default = SMALL.replace("output_dir = \"a\"", "steps = 100");
        assert_eq!(
            ExperimentConfig::from_toml(&explicit_default)
                .unwrap()
                .hash(),
            a.hash()
        );
        b.steps = 50;
        assert_ne!(a.hash(), b.hash());
        b.steps = a.steps;
        b.attribution.ig_steps = 64;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
