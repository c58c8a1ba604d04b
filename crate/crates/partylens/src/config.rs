// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration (TOML) and its content hash.

use std::path::{Path, PathBuf};

use partylens_core::analytics::{GroundMetric, Weighting};
use partylens_core::extract::Selection;
use partylens_core::model::Activation;
use partylens_core::scaling::Readout;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const DEFAULT_PARTIES: [&str; 6] = ["AfD", "CDU", "FDP", "SPD", "GRÜNE", "LINKE"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub parties: Vec<String>,
    pub paths: Paths,
    pub corpus: CorpusConfig,
    pub model: ModelSection,
    pub probe: ProbeConfig,
    pub extract: ExtractConfig,
    pub personas: PersonaConfig,
    pub scan: ScanConfig,
    pub analytics: AnalyticsConfig,
    pub stages: Stages,
}

/// Optional external inputs. Relative paths resolve against the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory with `model.json`, `model.tensors` and `vocab.txt`; replaces the toy model.
    pub model: Option<PathBuf>,
    /// Statement corpus CSV; replaces the generated corpus.
    pub corpus: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub variants: Option<PathBuf>,
    pub survey: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub size: usize,
    pub min_per_party: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub n_heads: usize,
    pub activation: Activation,
    pub max_seq: usize,
    pub k_plant: usize,
    pub gain: f32,
    pub key_gain: f32,
    pub marker_gain: f32,
    pub plant_noise: f32,
    pub base_scale: f32,
    pub attn_copy: f32,
    /// Extra marker words as `[word, party]` pairs.
    pub markers: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub dropout: f64,
    pub val_fraction: f64,
    pub use_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub k: usize,
    pub selection: Selection,
    pub bottom_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonaConfig {
    pub with_year: bool,
    /// Personas scanned; 0 keeps the whole pool.
    pub subsample: usize,
    pub weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub readout: Readout,
    pub keep_raw: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsConfig {
    /// Ground metric used for the sensitivity regression; both are always reported.
    pub ground: GroundChoice,
    /// Party order for the ordered ground metric.
    pub axis: Vec<String>,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundChoice {
    #[default]
    Unit,
    Ordered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub sensitivity: bool,
    pub regress: bool,
    pub report: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("run"),
            parties: DEFAULT_PARTIES.iter().map(|s| s.to_string()).collect(),
            paths: Paths::default(),
            corpus: CorpusConfig::default(),
            model: ModelSection::default(),
            probe: ProbeConfig::default(),
            extract: ExtractConfig::default(),
            personas: PersonaConfig::default(),
            scan: ScanConfig::default(),
            analytics: AnalyticsConfig::default(),
            stages: Stages::default(),
        }
    }
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            size: 300,
            min_per_party: 5,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n_layers: 8,
            d_model: 32,
            d_mlp: 64,
            n_heads: 4,
            activation: Activation::Relu,
            max_seq: 96,
            k_plant: 4,
            gain: 1.0,
            key_gain: 1.0,
            marker_gain: 2.0,
            plant_noise: 0.3,
            base_scale: 0.3,
            attn_copy: 0.5,
            markers: vec![("links".into(), "LINKE".into()), ("rechts".into(), "AfD".into())],
        }
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            lr_min: 1e-5,
            dropout: 0.1,
            val_fraction: 0.2,
            use_bias: true,
        }
    }
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            k: 4,
            selection: Selection::Global,
            bottom_k: 4,
        }
    }
}

impl Default for PersonaConfig {
    fn default() -> Self {
        Self {
            with_year: true,
            subsample: 200,
            weighting: Weighting::Uniform,
        }
    }
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            readout: Readout::FinalToken,
            keep_raw: false,
        }
    }
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        Self {
            ground: GroundChoice::Unit,
            axis: ["LINKE", "GRÜNE", "SPD", "FDP", "CDU", "AfD"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            alpha: 0.05,
        }
    }
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            sensitivity: true,
            regress: true,
            report: true,
        }
    }
}

impl RunConfig {
    /// Reads a TOML config; relative input paths are made relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.model,
            &mut cfg.paths.corpus,
            &mut cfg.paths.grid,
            &mut cfg.paths.variants,
            &mut cfg.paths.survey,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks referenced inputs and option consistency before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.parties.len() < 2 {
            return Err(CliError::Config("need at least two parties".into()));
        }
        if self.personas.weighting == Weighting::Survey && self.paths.survey.is_none() {
            return Err(CliError::Config(
                "survey weighting enabled but paths.survey is not set".into(),
            ));
        }
        for p in [
            &self.paths.model,
            &self.paths.corpus,
            &self.paths.grid,
            &self.paths.variants,
            &self.paths.survey,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return Err(CliError::Config(format!("input {} does not exist", p.display())));
            }
        }
        for (word, party) in &self.model.markers {
            if !self.parties.contains(party) {
                return Err(CliError::Config(format!(
                    "marker `{word}` names unknown party `{party}`"
                )));
            }
        }
        if self.analytics.axis.len() != self.parties.len()
            || self.parties.iter().any(|p| !self.analytics.axis.contains(p))
        {
            return Err(CliError::Config("analytics.axis must list every party once".into()));
        }
        if !(0.0..=1.0).contains(&self.analytics.alpha) {
            return Err(CliError::Config("analytics.alpha must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of everything except `out_dir`.
    /// Input files contribute their contents, not their location.
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self).expect("config serialises");
        let obj = value.as_object_mut().expect("object");
        obj.remove("out_dir");
        let mut h = Sha256::new();
        obj.remove("paths");
        h.update(serde_json::to_vec(&value).expect("json"));
        for (tag, p) in [
            ("model", &self.paths.model),
            ("corpus", &self.paths.corpus),
            ("grid", &self.paths.grid),
            ("variants", &self.paths.variants),
            ("survey", &self.paths.survey),
        ] {
            h.update(tag.as_bytes());
            match p {
                None => h.update(b"-"),
                Some(p) if p.is_dir() => {
                    for f in ["model.json", "model.tensors", "vocab.txt"] {
                        h.update(std::fs::read(p.join(f))?);
                    }
                }
                Some(p) => h.update(std::fs::read(p)?),
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn ground_ordered(&self) -> GroundMetric {
        GroundMetric::Ordered(self.analytics.axis.clone())
    }
}
