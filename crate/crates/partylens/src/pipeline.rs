// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pipeline stages over an output directory.
//!
//! Each stage reads the artifacts of earlier stages, writes its own, and
//! leaves a stamp (`stamps/<stage>.json`) holding the config hash and the
//! SHA-256 of every output. A stage whose stamp matches the live config and
//! whose outputs are intact is skipped; a stamp from a different config is an
//! error unless `force` is set.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use partylens_core::analytics::{
    entropy_table, level_groups, party_regression, sensitivity_regression, sensitivity_table, GroupKey,
    PartyDistribution, SensitivityRow, SensitivityTable, Source, Weighting,
};
use partylens_core::corpus::{gen_corpus, party_keywords, StatementRow};
use partylens_core::extract::{bottom_k, recovery_rate, score_direction, select, ValueVectorRef, ValueVectorSet};
use partylens_core::model::{gen_toy_model, Model, ModelConfig, PlantManifest, PlantSpec, Vocab};
use partylens_core::persona::{
    apply_weights, default_variants, render, subsample, validate_variant, Persona, PersonaGrid, PromptVariant,
    SurveyRow,
};
use partylens_core::probe::{train, ProbeExample, ProbeHyper, TrainMeta};
use partylens_core::scaling::{group_matrix, scan_prompt, sort_records, ScalingCube, ScalingRecord};
use partylens_core::tensor::{Tensor, TensorStore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{GroundChoice, RunConfig};
use crate::container;
use crate::error::{CliError, Result};
use crate::formats::{self, write_csv, write_json};
use crate::seed::stream_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    GenCorpus,
    GenToyModel,
    Record,
    TrainProbe,
    Extract,
    Personas,
    Scan,
    Analyze,
    Sensitivity,
    Regress,
    Report,
}

pub const ALL_STAGES: [Stage; 11] = [
    Stage::GenCorpus,
    Stage::GenToyModel,
    Stage::Record,
    Stage::TrainProbe,
    Stage::Extract,
    Stage::Personas,
    Stage::Scan,
    Stage::Analyze,
    Stage::Sensitivity,
    Stage::Regress,
    Stage::Report,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCorpus => "gen-corpus",
            Stage::GenToyModel => "gen-toy-model",
            Stage::Record => "record",
            Stage::TrainProbe => "train-probe",
            Stage::Extract => "extract",
            Stage::Personas => "personas",
            Stage::Scan => "scan",
            Stage::Analyze => "analyze",
            Stage::Sensitivity => "sensitivity",
            Stage::Regress => "regress",
            Stage::Report => "report",
        }
    }
}

/// Stage progress on stderr, as text or JSON lines.
#[derive(Debug, Clone, Copy, Default)]
pub struct Logger {
    pub json: bool,
    pub quiet: bool,
}

impl Logger {
    pub fn event(&self, stage: &str, event: &str, detail: &str) {
        if self.quiet {
            return;
        }
        if self.json {
            eprintln!(
                "{}",
                serde_json::json!({ "stage": stage, "event": event, "detail": detail })
            );
        } else if detail.is_empty() {
            eprintln!("[{stage}] {event}");
        } else {
            eprintln!("[{stage}] {event}: {detail}");
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
    Disabled,
}

#[derive(Debug, Serialize, Deserialize)]
struct Stamp {
    config_hash: String,
    outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeSidecar {
    pub party: String,
    pub party_index: usize,
    pub layer: usize,
    pub bias: f64,
    pub val_f1: f64,
    pub meta: TrainMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractEntry {
    pub party: String,
    pub probe_layer: usize,
    pub val_f1: f64,
    pub zero_norm_rows: usize,
    pub cos_at_k: f64,
    pub recovery: Option<f64>,
    pub bottom_k: Vec<ValueVectorRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub k: usize,
    pub parties: Vec<ExtractEntry>,
    pub mean_recovery: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveyWeights {
    pub matched_rows: usize,
    pub unmatched_rows: usize,
    pub matched_weight: f64,
    pub total_weight: f64,
    /// Σ persona weights over the whole grid; equals `matched_weight`.
    pub assigned_weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonaSummary {
    pub grid_size: usize,
    pub pool: usize,
    pub selected: usize,
    pub variants: usize,
    pub weighting: Weighting,
    pub survey: Option<SurveyWeights>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiEntry {
    pub group: String,
    pub latent: Option<PartyDistribution>,
    pub survey: Option<PartyDistribution>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityMeta {
    pub excluded_unit: usize,
    pub excluded_ordered: usize,
    /// Column used for the entropy regression.
    pub ground: GroundChoice,
    pub axis: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartyRegressionSummary {
    pub party: String,
    pub n: usize,
    pub dof: usize,
    pub r_squared: f64,
    pub significant: Vec<partylens_core::analytics::Coefficient>,
    pub reference_levels: Vec<(String, String)>,
    pub excluded_variables: Vec<String>,
    pub dropped_levels: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressSummary {
    pub alpha: f64,
    pub parties: Vec<PartyRegressionSummary>,
    /// Prompt sensitivity regressed on entropy; absent with fewer than three rows.
    pub sensitivity_fit: Option<partylens_core::analytics::RegressionResult>,
    pub warnings: Vec<String>,
}

pub struct Run {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub force: bool,
    pub log: Logger,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn party_file(n: usize, ext: &str) -> String {
    format!("party_{n}.{ext}")
}

impl Run {
    /// Validates the config (fail fast, before any compute) and prepares the output directory.
    pub fn new(cfg: RunConfig, force: bool, log: Logger) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash()?;
        let out = cfg.out_dir.clone();
        fs::create_dir_all(&out)?;
        Ok(Self {
            cfg,
            hash,
            out,
            force,
            log,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn seed(&self, stream: &str) -> u64 {
        stream_seed(self.cfg.seed, stream)
    }

    fn enabled(&self, stage: Stage) -> bool {
        match stage {
            Stage::Sensitivity => self.cfg.stages.sensitivity,
            Stage::Regress => self.cfg.stages.regress,
            Stage::Report => self.cfg.stages.report,
            _ => true,
        }
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.out.join("stamps").join(format!("{}.json", stage.name()))
    }

    /// Whether `stage` may be skipped; errors on a stamp from another config.
    fn up_to_date(&self, stage: Stage) -> Result<bool> {
        let path = self.stamp_path(stage);
        if self.force || !path.exists() {
            return Ok(false);
        }
        let stamp: Stamp = formats::read_plain_json(&path)?;
        if stamp.config_hash != self.hash {
            return Err(CliError::HashMismatch {
                path: path.display().to_string(),
                found: stamp.config_hash,
                live: self.hash.clone(),
            });
        }
        for (rel, digest) in &stamp.outputs {
            let p = self.path(rel);
            if !p.exists() || sha256_file(&p)? != *digest {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn execute(&self, stage: Stage) -> Result<Outcome> {
        let name = stage.name();
        if !self.enabled(stage) {
            self.log.event(name, "disabled", "");
            return Ok(Outcome::Disabled);
        }
        if self.up_to_date(stage).map_err(|e| e.in_stage(name))? {
            self.log.event(name, "skip", "outputs current");
            return Ok(Outcome::Skipped);
        }
        self.log.event(name, "start", "");
        let outputs = self.run_stage(stage).map_err(|e| e.in_stage(name))?;
        let mut digests = BTreeMap::new();
        for rel in outputs {
            digests.insert(rel.clone(), sha256_file(&self.path(&rel))?);
        }
        fs::create_dir_all(self.out.join("stamps"))?;
        formats::write_plain_json(
            &self.stamp_path(stage),
            &Stamp {
                config_hash: self.hash.clone(),
                outputs: digests,
            },
        )?;
        self.log.event(name, "done", "");
        Ok(Outcome::Ran)
    }

    /// Every stage in order; fails if the report's invariant gates fail.
    pub fn run_all(&self) -> Result<()> {
        for stage in ALL_STAGES {
            self.execute(stage)?;
        }
        if self.cfg.stages.report {
            let report: crate::report::Report = formats::read_json(&self.path("report/report.json"), Some(&self.hash))?;
            let failed: Vec<_> = report
                .gates
                .iter()
                .filter(|g| !g.passed)
                .map(|g| g.name.clone())
                .collect();
            if !failed.is_empty() {
                return Err(CliError::Gate(failed.join(", ")));
            }
        }
        Ok(())
    }

    fn run_stage(&self, stage: Stage) -> Result<Vec<String>> {
        match stage {
            Stage::GenCorpus => self.gen_corpus(),
            Stage::GenToyModel => self.gen_toy_model(),
            Stage::Record => self.record(),
            Stage::TrainProbe => self.train_probes(),
            Stage::Extract => self.extract(),
            Stage::Personas => self.personas(),
            Stage::Scan => self.scan(),
            Stage::Analyze => self.analyze(),
            Stage::Sensitivity => self.sensitivity(),
            Stage::Regress => self.regress(),
            Stage::Report => crate::report::build(self),
        }
    }

    // ---- shared loaders ----

    pub fn grid(&self) -> Result<PersonaGrid> {
        match &self.cfg.paths.grid {
            Some(p) => formats::read_grid(p),
            None => Ok(PersonaGrid::german_election(self.cfg.personas.with_year)),
        }
    }

    pub fn variants(&self) -> Result<Vec<PromptVariant>> {
        match &self.cfg.paths.variants {
            Some(p) => formats::read_variants(p),
            None => Ok(default_variants()),
        }
    }

    pub fn survey(&self, grid: &PersonaGrid) -> Result<Option<Vec<SurveyRow>>> {
        self.cfg
            .paths
            .survey
            .as_deref()
            .map(|p| formats::read_survey(p, grid))
            .transpose()
    }

    pub fn corpus(&self) -> Result<Vec<StatementRow>> {
        formats::read_corpus(&self.path("corpus.csv"), Some(&self.hash))
    }

    pub fn model(&self) -> Result<(Model, Vocab)> {
        let config: ModelConfig = formats::read_json(&self.path("model/model.json"), Some(&self.hash))?;
        let store = self.read_store("model/model.tensors")?;
        let vocab = formats::read_vocab(&self.path("model/vocab.txt"))?;
        if vocab.len() != config.vocab_size {
            return Err(CliError::bad("model/vocab.txt", "size disagrees with model.json"));
        }
        Ok((Model::from_store(config, &store)?, vocab))
    }

    pub fn manifest(&self) -> Result<Option<PlantManifest>> {
        let p = self.path("model/plant_manifest.json");
        if !p.exists() {
            return Ok(None);
        }
        formats::read_json(&p, Some(&self.hash)).map(Some)
    }

    fn read_store(&self, rel: &str) -> Result<TensorStore> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(CliError::MissingArtifact(p.display().to_string()));
        }
        let store = container::read(&p)?;
        let found = store.metadata().get("config_hash").cloned().unwrap_or_default();
        if found != self.hash {
            return Err(CliError::HashMismatch {
                path: p.display().to_string(),
                found,
                live: self.hash.clone(),
            });
        }
        Ok(store)
    }

    fn write_store(&self, rel: &str, mut store: TensorStore) -> Result<()> {
        store.set_metadata("config_hash", self.hash.clone());
        container::write(&store, &self.path(rel))?;
        Ok(())
    }

    pub fn value_sets(&self) -> Result<Vec<ValueVectorSet>> {
        (0..self.cfg.parties.len())
            .map(|n| {
                formats::read_json(
                    &self.path(&format!("vectors/{}", party_file(n, "json"))),
                    Some(&self.hash),
                )
            })
            .collect()
    }

    pub fn personas_and_grid(&self) -> Result<(PersonaGrid, Vec<PromptVariant>, Vec<Persona>)> {
        let grid = formats::read_grid(&self.path("personas/grid.json"))?;
        let variants = formats::read_variants(&self.path("personas/variants.json"))?;
        let personas = formats::read_personas(&self.path("personas/personas.csv"), Some(&self.hash), &grid)?;
        Ok((grid, variants, personas))
    }

    pub fn cube(&self) -> Result<(PersonaGrid, ScalingCube)> {
        let (grid, variants, personas) = self.personas_and_grid()?;
        let records = formats::read_records(&self.path("records.csv"), Some(&self.hash), &self.cfg.parties)?;
        let ids: Vec<usize> = variants.iter().map(|v| v.id).collect();
        let cube = group_matrix(&records, &personas, &ids, self.cfg.parties.len())?;
        Ok((grid, cube))
    }

    // ---- stages ----

    fn gen_corpus(&self) -> Result<Vec<String>> {
        let rows = match &self.cfg.paths.corpus {
            Some(p) => formats::read_corpus(p, None)?,
            None => gen_corpus(
                &self.cfg.parties,
                self.cfg.corpus.size,
                self.cfg.corpus.min_per_party,
                self.seed("corpus"),
            )?,
        };
        for p in &self.cfg.parties {
            let count = rows.iter().filter(|r| r.party == *p).count();
            if count < self.cfg.corpus.min_per_party {
                return Err(partylens_core::Error::SizeTooSmall {
                    size: count,
                    min: self.cfg.corpus.min_per_party,
                }
                .into());
            }
        }
        formats::write_corpus(&self.path("corpus.csv"), Some(&self.hash), &rows)?;
        Ok(vec!["corpus.csv".into()])
    }

    fn gen_toy_model(&self) -> Result<Vec<String>> {
        fs::create_dir_all(self.path("model"))?;
        let mut outputs = vec![
            "model/model.json".into(),
            "model/model.tensors".into(),
            "model/vocab.txt".into(),
        ];
        let (model, vocab) = if let Some(dir) = &self.cfg.paths.model {
            let config: ModelConfig = formats::read_plain_json(&dir.join("model.json"))?;
            let store = container::read(&dir.join("model.tensors"))?;
            let vocab = formats::read_vocab(&dir.join("vocab.txt"))?;
            (Model::from_store(config, &store)?, vocab)
        } else {
            let corpus = self.corpus()?;
            let grid = self.grid()?;
            let variants = self.variants()?;
            let mut texts: Vec<String> = corpus.iter().map(StatementRow::prompt).collect();
            texts.extend(grid.variables().iter().flat_map(|(_, v)| v.iter().cloned()));
            texts.extend(variants.iter().map(|v| strip_placeholders(&v.template)));
            let extra: Vec<&str> = self
                .cfg
                .parties
                .iter()
                .map(String::as_str)
                .chain(self.cfg.model.markers.iter().map(|(w, _)| w.as_str()))
                .collect();
            let vocab = Vocab::build(texts.iter().map(String::as_str), extra);
            let m = &self.cfg.model;
            let config = ModelConfig {
                n_layers: m.n_layers,
                d_model: m.d_model,
                d_mlp: m.d_mlp,
                n_heads: m.n_heads,
                vocab_size: vocab.len(),
                activation: m.activation,
                max_seq: m.max_seq,
            };
            let spec = self.plant_spec();
            let (model, manifest) = gen_toy_model(&config, &vocab, &spec, self.seed("model"))?;
            write_json(&self.path("model/plant_manifest.json"), &self.hash, &manifest)?;
            outputs.push("model/plant_manifest.json".into());
            (model, vocab)
        };
        for t in &self.cfg.parties {
            vocab.require(t)?;
        }
        write_json(&self.path("model/model.json"), &self.hash, model.config())?;
        self.write_store("model/model.tensors", model.to_store())?;
        formats::write_vocab(&self.path("model/vocab.txt"), &vocab)?;
        Ok(outputs)
    }

    /// Plant spec from the config: corpus keywords and configured words act as markers.
    pub fn plant_spec(&self) -> PlantSpec {
        let m = &self.cfg.model;
        let mut spec = PlantSpec::new(self.cfg.parties.clone(), m.k_plant);
        spec.gain = m.gain;
        spec.key_gain = m.key_gain;
        spec.marker_gain = m.marker_gain;
        spec.plant_noise = m.plant_noise;
        spec.base_scale = m.base_scale;
        spec.attn_copy = m.attn_copy;
        for (n, p) in self.cfg.parties.iter().enumerate() {
            spec.markers.extend(party_keywords(p).into_iter().map(|k| (k, n)));
        }
        for (word, party) in &m.markers {
            let n = self.cfg.parties.iter().position(|p| p == party).expect("validated");
            spec.markers.push((word.clone(), n));
        }
        spec
    }

    fn record(&self) -> Result<Vec<String>> {
        let (model, vocab) = self.model()?;
        let corpus = self.corpus()?;
        let n_layers = model.config().n_layers;
        let parties = &self.cfg.parties;
        let rows: Vec<(usize, Vec<Vec<f32>>)> = corpus
            .par_iter()
            .map(|row| {
                let party = parties
                    .iter()
                    .position(|p| *p == row.party)
                    .ok_or_else(|| partylens_core::Error::UnknownParty(row.party.clone()))?;
                let trace = model.forward(&vocab.encode(&row.prompt()))?.trace;
                let means = (1..=n_layers)
                    .map(|l| trace.mean_post(l))
                    .collect::<partylens_core::Result<_>>()?;
                Ok((party, means))
            })
            .collect::<Result<_>>()?;
        let d = model.config().d_model;
        let mut store = TensorStore::new();
        for l in 1..=n_layers {
            let data: Vec<f32> = rows.iter().flat_map(|(_, m)| m[l - 1].iter().copied()).collect();
            store.insert(format!("layer.{l}.mean"), Tensor::matrix(rows.len(), d, data)?)?;
        }
        store.insert("labels", Tensor::vector(rows.iter().map(|(p, _)| *p as f32).collect())?)?;
        self.write_store("activations.tensors", store)?;
        Ok(vec!["activations.tensors".into()])
    }

    pub fn probe_examples(&self) -> Result<Vec<Vec<ProbeExample>>> {
        let store = self.read_store("activations.tensors")?;
        let labels: Vec<usize> = store.get("labels")?.data().iter().map(|&x| x as usize).collect();
        let mut by_layer = Vec::new();
        for l in 1.. {
            let Some(t) = store.try_get(&format!("layer.{l}.mean")) else {
                break;
            };
            by_layer.push(
                t.rows()
                    .zip(&labels)
                    .map(|(row, &party)| ProbeExample {
                        mean_stream: row.to_vec(),
                        party,
                        layer: l,
                    })
                    .collect(),
            );
        }
        Ok(by_layer)
    }

    fn probe_hyper(&self, party: usize) -> ProbeHyper {
        let p = &self.cfg.probe;
        let mut h = ProbeHyper::with_seed(self.seed(&format!("probe/{party}")));
        h.epochs = p.epochs;
        h.lr = p.lr;
        h.lr_min = p.lr_min;
        h.dropout = p.dropout;
        h.val_fraction = p.val_fraction;
        h.use_bias = p.use_bias;
        h
    }

    fn train_probes(&self) -> Result<Vec<String>> {
        let by_layer = self.probe_examples()?;
        fs::create_dir_all(self.path("probes"))?;
        let probes = (0..self.cfg.parties.len())
            .into_par_iter()
            .map(|n| train(&by_layer, n, &self.probe_hyper(n)))
            .collect::<partylens_core::Result<Vec<_>>>()?;
        let mut outputs = Vec::new();
        for (n, probe) in probes.into_iter().enumerate() {
            let mut store = TensorStore::new();
            store.insert("weights", probe.weights.clone())?;
            store.insert("bias", Tensor::vector(vec![probe.bias as f32])?)?;
            let t = format!("probes/{}", party_file(n, "tensors"));
            let j = format!("probes/{}", party_file(n, "json"));
            self.write_store(&t, store)?;
            write_json(
                &self.path(&j),
                &self.hash,
                &ProbeSidecar {
                    party: self.cfg.parties[n].clone(),
                    party_index: n,
                    layer: probe.layer,
                    bias: probe.bias,
                    val_f1: probe.val_f1,
                    meta: probe.meta,
                },
            )?;
            outputs.extend([t, j]);
        }
        Ok(outputs)
    }

    fn extract(&self) -> Result<Vec<String>> {
        let (model, _) = self.model()?;
        let manifest = self.manifest()?;
        fs::create_dir_all(self.path("vectors"))?;
        let mut outputs = Vec::new();
        let mut entries = Vec::new();
        for n in 0..self.cfg.parties.len() {
            let store = self.read_store(&format!("probes/{}", party_file(n, "tensors")))?;
            let side: ProbeSidecar = formats::read_json(
                &self.path(&format!("probes/{}", party_file(n, "json"))),
                Some(&self.hash),
            )?;
            let scores = score_direction(&model, store.get("weights")?.data(), n)?;
            let set = select(&scores, self.cfg.extract.k, self.cfg.extract.selection)?;
            let rel = format!("vectors/{}", party_file(n, "json"));
            write_json(&self.path(&rel), &self.hash, &set)?;
            outputs.push(rel);
            entries.push(ExtractEntry {
                party: self.cfg.parties[n].clone(),
                probe_layer: side.layer,
                val_f1: side.val_f1,
                zero_norm_rows: scores.zero_norm_rows,
                cos_at_k: set.cos_at_k,
                recovery: manifest.as_ref().and_then(|m| recovery_rate(&set, m)),
                bottom_k: bottom_k(&scores, self.cfg.extract.bottom_k),
            });
        }
        let rec: Vec<f64> = entries.iter().filter_map(|e| e.recovery).collect();
        let summary = ExtractSummary {
            k: self.cfg.extract.k,
            mean_recovery: (!rec.is_empty()).then(|| rec.iter().sum::<f64>() / rec.len() as f64),
            parties: entries,
        };
        write_json(&self.path("vectors/summary.json"), &self.hash, &summary)?;
        outputs.push("vectors/summary.json".into());
        Ok(outputs)
    }

    fn personas(&self) -> Result<Vec<String>> {
        let grid = self.grid()?;
        let variants = self.variants()?;
        for v in &variants {
            validate_variant(&grid, v)?;
        }
        let mut all = grid.enumerate();
        let survey = match self.survey(&grid)? {
            Some(rows) => {
                let s = apply_weights(&grid, &mut all, &rows)?;
                Some(SurveyWeights {
                    matched_rows: s.matched_rows,
                    unmatched_rows: s.unmatched_rows,
                    matched_weight: s.matched_weight,
                    total_weight: s.total_weight,
                    assigned_weight: all.iter().map(|p| p.weight).sum(),
                })
            }
            None => None,
        };
        let pool: Vec<Persona> = match self.cfg.personas.weighting {
            Weighting::Survey => all.iter().filter(|p| p.weight > 0.0).cloned().collect(),
            Weighting::Uniform => all,
        };
        let chosen = subsample(&pool, self.cfg.personas.subsample, self.seed("personas"));
        if chosen.is_empty() {
            return Err(CliError::Config("persona pool is empty".into()));
        }
        fs::create_dir_all(self.path("personas"))?;
        formats::write_grid(&self.path("personas/grid.json"), &grid)?;
        formats::write_plain_json(&self.path("personas/variants.json"), &variants)?;
        formats::write_personas(&self.path("personas/personas.csv"), &self.hash, &grid, &chosen)?;
        write_json(
            &self.path("personas/summary.json"),
            &self.hash,
            &PersonaSummary {
                grid_size: grid.size(),
                pool: pool.len(),
                selected: chosen.len(),
                variants: variants.len(),
                weighting: self.cfg.personas.weighting,
                survey,
            },
        )?;
        Ok(vec![
            "personas/grid.json".into(),
            "personas/variants.json".into(),
            "personas/personas.csv".into(),
            "personas/summary.json".into(),
        ])
    }

    fn scan(&self) -> Result<Vec<String>> {
        let (model, vocab) = self.model()?;
        let sets = self.value_sets()?;
        let (grid, variants, personas) = self.personas_and_grid()?;
        let jobs: Vec<(&Persona, &PromptVariant)> = personas
            .iter()
            .flat_map(|p| variants.iter().map(move |v| (p, v)))
            .collect();
        let readout = self.cfg.scan.readout;
        let keep_raw = self.cfg.scan.keep_raw;
        let chunks: Vec<Vec<ScalingRecord>> = jobs
            .par_iter()
            .map(|(p, v)| {
                let text = render(&grid, p, v)?;
                scan_prompt(&model, &sets, p.id, v.id, &vocab.encode(&text), readout, keep_raw)
            })
            .collect::<partylens_core::Result<_>>()?;
        let mut records: Vec<ScalingRecord> = chunks.into_iter().flatten().collect();
        sort_records(&mut records);
        formats::write_records(&self.path("records.csv"), &self.hash, &self.cfg.parties, &records)?;
        Ok(vec!["records.csv".into()])
    }

    fn groups(&self, grid: &PersonaGrid) -> Vec<GroupKey> {
        let mut g = vec![GroupKey::All];
        g.extend(level_groups(grid));
        g
    }

    fn analyze(&self) -> Result<Vec<String>> {
        let (grid, cube) = self.cube()?;
        let survey = self.survey(&grid)?;
        let parties = &self.cfg.parties;
        let weighting = self.cfg.personas.weighting;
        let groups = self.groups(&grid);
        let table = entropy_table(&cube, &grid, parties, &groups, survey.as_deref(), weighting)?;
        write_csv(
            &self.path("entropy.csv"),
            Some(&self.hash),
            &["group", "source", "entropy"],
            table.iter().map(|r| {
                [
                    r.group.clone(),
                    match r.source {
                        Source::Latent => "latent".into(),
                        Source::Survey => "survey".into(),
                    },
                    r.entropy.to_string(),
                ]
            }),
        )?;
        let psi: Vec<PsiEntry> = groups
            .iter()
            .map(|g| {
                let latent = ok_or_empty(partylens_core::analytics::build_psi(
                    &cube, &grid, parties, g, weighting,
                ))?;
                let survey = match &survey {
                    Some(rows) => ok_or_empty(partylens_core::analytics::survey_baseline(&grid, rows, parties, g))?,
                    None => None,
                };
                Ok(PsiEntry {
                    group: g.label(),
                    latent,
                    survey,
                })
            })
            .collect::<Result<_>>()?;
        write_json(&self.path("psi.json"), &self.hash, &psi)?;
        Ok(vec!["entropy.csv".into(), "psi.json".into()])
    }

    fn sensitivity(&self) -> Result<Vec<String>> {
        let (grid, cube) = self.cube()?;
        let parties = &self.cfg.parties;
        let groups = self.groups(&grid);
        let weighting = self.cfg.personas.weighting;
        let table = |ground| match sensitivity_table(&cube, &grid, parties, &groups, &ground, weighting) {
            Err(partylens_core::Error::NoValidCells) => Ok(SensitivityTable {
                rows: Vec::new(),
                excluded: groups.len() * cube.variants().len(),
            }),
            other => other,
        };
        let unit = table(partylens_core::analytics::GroundMetric::Unit)?;
        let ordered = table(self.cfg.ground_ordered())?;
        let ordered_w: BTreeMap<(String, usize), f64> = ordered
            .rows
            .iter()
            .map(|r| ((r.group.clone(), r.variant), r.wasserstein))
            .collect();
        write_csv(
            &self.path("sensitivity.csv"),
            Some(&self.hash),
            &["group", "variant", "entropy", "w_unit", "w_ordered"],
            unit.rows.iter().map(|r| {
                [
                    r.group.clone(),
                    r.variant.to_string(),
                    r.entropy.to_string(),
                    r.wasserstein.to_string(),
                    ordered_w
                        .get(&(r.group.clone(), r.variant))
                        .map_or_else(String::new, f64::to_string),
                ]
            }),
        )?;
        write_json(
            &self.path("sensitivity_meta.json"),
            &self.hash,
            &SensitivityMeta {
                excluded_unit: unit.excluded,
                excluded_ordered: ordered.excluded,
                ground: self.cfg.analytics.ground,
                axis: self.cfg.analytics.axis.clone(),
            },
        )?;
        Ok(vec!["sensitivity.csv".into(), "sensitivity_meta.json".into()])
    }

    /// Sensitivity rows under the configured ground metric.
    pub fn sensitivity_rows(&self) -> Result<Vec<SensitivityRow>> {
        let path = self.path("sensitivity.csv");
        let t = formats::read_csv(&path, Some(&self.hash))?;
        let col = match self.cfg.analytics.ground {
            GroundChoice::Unit => "w_unit",
            GroundChoice::Ordered => "w_ordered",
        };
        let (g, j, h, w) = (
            t.require(&path, "group")?,
            t.require(&path, "variant")?,
            t.require(&path, "entropy")?,
            t.require(&path, col)?,
        );
        let bad = |e: &dyn std::fmt::Display| CliError::bad(path.display(), e);
        t.rows
            .iter()
            .map(|r| {
                Ok(SensitivityRow {
                    group: r[g].to_string(),
                    variant: r[j].parse().map_err(|e| bad(&e))?,
                    entropy: r[h].parse().map_err(|e| bad(&e))?,
                    wasserstein: r[w].parse().map_err(|e| bad(&e))?,
                })
            })
            .collect()
    }

    fn regress(&self) -> Result<Vec<String>> {
        let (grid, cube) = self.cube()?;
        let alpha = self.cfg.analytics.alpha;
        fs::create_dir_all(self.path("regression"))?;
        let mut outputs = Vec::new();
        let mut parties = Vec::new();
        let mut warnings = Vec::new();
        for (n, name) in self.cfg.parties.iter().enumerate() {
            let r = party_regression(&cube, &grid, n, alpha)?;
            let rel = format!("regression/{}", party_file(n, "csv"));
            write_csv(
                &self.path(&rel),
                Some(&self.hash),
                &["term", "estimate", "std_error", "t", "p", "significant"],
                r.full.coefficients.iter().map(|c| {
                    [
                        c.term.clone(),
                        c.estimate.to_string(),
                        c.std_error.to_string(),
                        c.t.to_string(),
                        c.p.to_string(),
                        (c.term != "intercept" && c.p <= alpha).to_string(),
                    ]
                }),
            )?;
            outputs.push(rel);
            for v in &r.excluded_variables {
                warnings.push(format!("{name}: variable `{v}` has a single level and was left out"));
            }
            parties.push(PartyRegressionSummary {
                party: name.clone(),
                n: r.full.n,
                dof: r.full.dof,
                r_squared: r.full.r_squared,
                significant: r.significant,
                reference_levels: r.reference_levels,
                excluded_variables: r.excluded_variables,
                dropped_levels: r.dropped_levels,
            });
        }
        let sensitivity_fit = if self.cfg.stages.sensitivity {
            let rows = self.sensitivity_rows()?;
            match sensitivity_regression(&SensitivityTable { rows, excluded: 0 }) {
                Ok(fit) => Some(fit),
                Err(e @ (partylens_core::Error::InsufficientData { .. } | partylens_core::Error::RankDeficient(_))) => {
                    warnings.push(format!("sensitivity regression skipped: {e}"));
                    None
                }
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        write_json(
            &self.path("regression/summary.json"),
            &self.hash,
            &RegressSummary {
                alpha,
                parties,
                sensitivity_fit,
                warnings,
            },
        )?;
        outputs.push("regression/summary.json".into());
        Ok(outputs)
    }
}

fn ok_or_empty(r: partylens_core::Result<PartyDistribution>) -> Result<Option<PartyDistribution>> {
    match r {
        Ok(d) => Ok(Some(d)),
        Err(partylens_core::Error::EmptyGroup | partylens_core::Error::AllNonPositive) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn strip_placeholders(template: &str) -> String {
    let mut out = String::with_capacity(template.len());
    let mut depth = 0;
    for c in template.chars() {
        match c {
            '{' => {
                depth += 1;
                out.push(' ');
            }
            '}' => depth -= 1,
            c if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}
