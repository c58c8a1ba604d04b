// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded toy models with planted party value vectors.
//!
//! Each party `n` gets a unit direction `u_n` (mutually orthonormal). The
//! party token unembeds to `u_n`, so `e_t(n) = u_n`. Party tokens and their
//! marker words embed along `marker_gain · u_n`. For every planted slot
//! `(l, i)` the value row becomes `gain · e_t(n) + noise` and the key row
//! becomes `key_gain · u_n + noise`, so any stream carrying a party marker
//! fires the slot and pushes the party token's logit up.
//!
//! `attn_copy` adds an identity component to `wv` and `wo`, making every head carry
//! a softmax-weighted average of earlier streams forward. That is the route
//! by which a marker early in a prompt reaches the final position.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::transformer::{Block, Model};
use crate::model::vocab::Vocab;
use crate::tensor::{dot, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    /// Party tokens, in party order.
    pub party_tokens: Vec<String>,
    /// Planted slots per party.
    pub k_plant: usize,
    /// Extra words that act as markers, paired with their party index.
    #[serde(default)]
    pub markers: Vec<(String, usize)>,
    pub gain: f32,
    pub key_gain: f32,
    pub marker_gain: f32,
    /// Per-coordinate noise std on planted rows, relative to `gain / √d`.
    pub plant_noise: f32,
    /// Base weights are drawn from `N(0, (base_scale / √d)²)`.
    pub base_scale: f32,
    pub attn_copy: f32,
}

impl PlantSpec {
    pub fn new(party_tokens: Vec<String>, k_plant: usize) -> Self {
        Self {
            party_tokens,
            k_plant,
            markers: Vec::new(),
            gain: 1.0,
            key_gain: 1.0,
            marker_gain: 2.0,
            plant_noise: 0.3,
            base_scale: 0.3,
            attn_copy: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlantSlot {
    pub party: usize,
    pub layer: usize,
    pub index: usize,
    pub token: usize,
}

/// Ground truth for a planted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantManifest {
    pub parties: Vec<String>,
    pub gain: f32,
    pub key_gain: f32,
    pub slots: Vec<PlantSlot>,
    /// Unit direction `u_n` per party.
    pub directions: Vec<Vec<f32>>,
}

impl PlantManifest {
    pub fn slots_for(&self, party: usize) -> impl Iterator<Item = &PlantSlot> {
        self.slots.iter().filter(move |s| s.party == party)
    }
}

struct Gaussian(ChaCha8Rng);

impl Gaussian {
    fn sample(&mut self) -> f32 {
        let z: f64 = StandardNormal.sample(&mut self.0);
        z as f32
    }

    fn fill(&mut self, n: usize, std: f32) -> Vec<f32> {
        (0..n).map(|_| self.sample() * std).collect()
    }
}

/// Gram-Schmidt over Gaussian draws; `count <= dim`.
fn orthonormal(rng: &mut Gaussian, count: usize, dim: usize) -> Vec<Vec<f32>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| f64::from(rng.sample())).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x as f32).collect())
        .collect()
}

/// Generates a planted model. Same `(config, vocab, spec, seed)` yields the
/// same weights bit for bit.
pub fn gen_toy_model(
    config: &ModelConfig,
    vocab: &Vocab,
    spec: &PlantSpec,
    seed: u64,
) -> Result<(Model, PlantManifest)> {
    let n_parties = spec.party_tokens.len();
    config.validate(n_parties)?;
    if vocab.len() != config.vocab_size {
        return Err(Error::InvalidConfig(alloc::format!(
            "vocabulary has {} tokens, config says {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    if n_parties > config.d_model {
        return Err(Error::InvalidConfig("more parties than residual dimensions".into()));
    }
    let capacity = config.n_layers * config.d_mlp;
    let requested = n_parties * spec.k_plant;
    if requested > capacity {
        return Err(Error::PlantCollision { requested, capacity });
    }
    let party_ids = spec
        .party_tokens
        .iter()
        .map(|t| vocab.require(t))
        .collect::<Result<Vec<_>>>()?;
    let mut marker_ids = Vec::with_capacity(spec.markers.len());
    for (word, party) in &spec.markers {
        if *party >= n_parties {
            return Err(Error::UnknownParty(word.clone()));
        }
        marker_ids.push((vocab.require(word)?, *party));
    }

    let (d, m, v) = (config.d_model, config.d_mlp, config.vocab_size);
    let base_std = spec.base_scale / libm::sqrtf(d as f32);
    let mut rng = Gaussian(ChaCha8Rng::seed_from_u64(seed));

    let directions = orthonormal(&mut rng, n_parties, d);

    let mut embed = rng.fill(v * d, base_std);
    let mut unembed = rng.fill(v * d, base_std);
    let marker_noise = spec.plant_noise * spec.marker_gain / libm::sqrtf(d as f32);
    let embed_marker = |embed: &mut [f32], rng: &mut Gaussian, token: usize, party: usize| {
        for (j, e) in embed[token * d..(token + 1) * d].iter_mut().enumerate() {
            *e = spec.marker_gain * directions[party][j] + marker_noise * rng.sample();
        }
    };
    for (party, &t) in party_ids.iter().enumerate() {
        embed_marker(&mut embed, &mut rng, t, party);
        unembed[t * d..(t + 1) * d].copy_from_slice(&directions[party]);
    }
    for &(t, party) in &marker_ids {
        embed_marker(&mut embed, &mut rng, t, party);
    }

    let mut blocks = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        let mut wv = rng.fill(d * d, base_std);
        for i in 0..d {
            wv[i * d + i] += spec.attn_copy;
        }
        let wq = rng.fill(d * d, base_std);
        let wk = rng.fill(d * d, base_std);
        let mut wo = rng.fill(d * d, base_std);
        for i in 0..d {
            wo[i * d + i] += spec.attn_copy;
        }
        let mlp_k = rng.fill(m * d, base_std);
        let mlp_v = rng.fill(m * d, base_std);
        blocks.push([wq, wk, wv, wo, mlp_k, mlp_v]);
    }

    // Every party is planted at the same layers so that the feedback through
    // later planted keys amplifies all parties equally.
    let layers: Vec<usize> = if spec.k_plant <= config.n_layers {
        let mut l = index::sample(&mut rng.0, config.n_layers, spec.k_plant).into_vec();
        l.sort_unstable();
        l
    } else {
        (0..spec.k_plant).map(|j| j % config.n_layers).collect()
    };
    let mut per_layer = vec![0usize; config.n_layers];
    for &l in &layers {
        per_layer[l] += n_parties;
    }
    if let Some(l) = per_layer.iter().position(|&c| c > m) {
        return Err(Error::PlantCollision {
            requested: per_layer[l],
            capacity: m,
        });
    }
    let indices: Vec<Vec<usize>> = per_layer
        .iter()
        .map(|&c| index::sample(&mut rng.0, m, c).into_vec())
        .collect();
    let mut next = vec![0usize; config.n_layers];
    let mut picks = Vec::with_capacity(requested);
    for _party in 0..n_parties {
        for &l in &layers {
            picks.push(l * m + indices[l][next[l]]);
            next[l] += 1;
        }
    }
    let plant_std = spec.plant_noise / libm::sqrtf(d as f32);
    let mut slots = Vec::with_capacity(requested);
    for (k, flat) in picks.into_iter().enumerate() {
        let party = k / spec.k_plant.max(1);
        let (layer, idx) = (flat / m + 1, flat % m);
        let dir = &directions[party];
        let [_, _, _, _, mlp_k, mlp_v] = &mut blocks[layer - 1];
        for j in 0..d {
            mlp_v[idx * d + j] = spec.gain * (dir[j] + plant_std * rng.sample());
            mlp_k[idx * d + j] = spec.key_gain * (dir[j] + plant_std * rng.sample());
        }
        slots.push(PlantSlot {
            party,
            layer,
            index: idx,
            token: party_ids[party],
        });
    }
    slots.sort();

    let mat = |rows: usize, data: Vec<f32>| Tensor::matrix(rows, d, data);
    let blocks = blocks
        .into_iter()
        .map(|[wq, wk, wv, wo, mlp_k, mlp_v]| {
            Ok(Block {
                wq: mat(d, wq)?,
                wk: mat(d, wk)?,
                wv: mat(d, wv)?,
                wo: mat(d, wo)?,
                mlp_k: mat(m, mlp_k)?,
                mlp_v: mat(m, mlp_v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = Model::from_parts(config.clone(), mat(v, embed)?, None, blocks, mat(v, unembed)?)?;
    Ok((
        model,
        PlantManifest {
            parties: spec.party_tokens.clone(),
            gain: spec.gain,
            key_gain: spec.key_gain,
            slots,
            directions,
        },
    ))
}

/// Cosine between a planted value row and its party's unembedding row.
pub fn planted_alignment(model: &Model, slot: &PlantSlot) -> Result<f64> {
    let v = model.value_vector(slot.layer, slot.index)?;
    let e = model.unembed.row(slot.token);
    let denom = libm::sqrt(dot(v, v) * dot(e, e));
    if denom == 0.0 {
        return Err(Error::ZeroNormVector);
    }
    Ok(dot(v, e) / denom)
}

/// Word tokens that act as markers for `party`: the party token plus any
/// registered marker words.
pub fn marker_words(spec: &PlantSpec, party: usize) -> Vec<&str> {
    let mut out = vec![spec.party_tokens[party].as_str()];
    out.extend(
        spec.markers
            .iter()
            .filter(|(_, p)| *p == party)
            .map(|(w, _)| w.as_str()),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Activation;
    use alloc::string::ToString;

    fn setup(k_plant: usize) -> (ModelConfig, Vocab, PlantSpec) {
        let parties: Vec<String> = ["AfD", "CDU", "FDP"].iter().map(|s| s.to_string()).collect();
        let vocab = Vocab::build(["a b c d e f links"], parties.iter().map(String::as_str));
        let config = ModelConfig {
            n_layers: 3,
            d_model: 16,
            d_mlp: 8,
            n_heads: 2,
            vocab_size: vocab.len(),
            activation: Activation::Relu,
            max_seq: 32,
        };
        let mut spec = PlantSpec::new(parties, k_plant);
        spec.markers.push(("links".into(), 2));
        (config, vocab, spec)
    }

    #[test]
    fn deterministic_per_seed() {
        let (c, v, s) = setup(2);
        let a = gen_toy_model(&c, &v, &s, 7).unwrap();
        let b = gen_toy_model(&c, &v, &s, 7).unwrap();
        let other = gen_toy_model(&c, &v, &s, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn planted_rows_align_with_party_token() {
        let (c, v, s) = setup(3);
        for seed in 0..10 {
            let (model, manifest) = gen_toy_model(&c, &v, &s, seed).unwrap();
            assert_eq!(manifest.slots.len(), 9);
            for slot in &manifest.slots {
                assert!(planted_alignment(&model, slot).unwrap() >= 0.9);
            }
        }
    }

    #[test]
    fn zero_plants_gives_empty_manifest() {
        let (c, v, s) = setup(0);
        let (_, manifest) = gen_toy_model(&c, &v, &s, 1).unwrap();
        assert!(manifest.slots.is_empty());
    }

    #[test]
    fn collision_when_over_capacity() {
        let (c, v, s) = setup(9);
        assert_eq!(
            gen_toy_model(&c, &v, &s, 1).unwrap_err(),
            Error::PlantCollision {
                requested: 27,
                capacity: 24
            }
        );
    }

    #[test]
    fn slots_unique() {
        let (c, v, s) = setup(6);
        let (_, manifest) = gen_toy_model(&c, &v, &s, 3).unwrap();
        let mut pos: Vec<_> = manifest.slots.iter().map(|s| (s.layer, s.index)).collect();
        pos.sort();
        pos.dedup();
        assert_eq!(pos.len(), 18);
    }
}
