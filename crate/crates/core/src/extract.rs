// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ranking MLP value vectors by cosine alignment with a probe direction.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::toy::PlantManifest;
use crate::model::Model;
use crate::probe::Probe;
use crate::tensor::{dot, norm};

/// One value vector `v_index^layer` and its cosine with a probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueVectorRef {
    pub party: usize,
    pub layer: usize,
    pub index: usize,
    pub cos: f64,
}

/// Cosine scores for every `(layer, index)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub party: usize,
    pub refs: Vec<ValueVectorRef>,
    /// Rows with zero norm, scored as 0.
    pub zero_norm_rows: usize,
}

/// How the top-k cut is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// k best over all layers together.
    #[default]
    Global,
    /// k best inside each layer.
    PerLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVectorSet {
    pub party: usize,
    pub k: usize,
    pub refs: Vec<ValueVectorRef>,
    pub cos_at_k: f64,
    pub cos_at_k_plus_1: Option<f64>,
}

/// Descending cosine, then ascending layer, then ascending index.
pub fn rank_order(a: &ValueVectorRef, b: &ValueVectorRef) -> Ordering {
    b.cos
        .total_cmp(&a.cos)
        .then(a.layer.cmp(&b.layer))
        .then(a.index.cmp(&b.index))
}

/// Scores every value vector of `model` against `probe`'s weights.
pub fn score_all(model: &Model, probe: &Probe) -> Result<Scores> {
    score_direction(model, probe.weights.data(), probe.party)
}

/// Scores every value vector against an arbitrary direction.
pub fn score_direction(model: &Model, direction: &[f32], party: usize) -> Result<Scores> {
    let cfg = model.config();
    if direction.len() != cfg.d_model {
        return Err(Error::ShapeMismatch {
            op: "score_all",
            left: alloc::vec![direction.len()],
            right: alloc::vec![cfg.d_model],
        });
    }
    let dn = norm(direction);
    if dn == 0.0 {
        return Err(Error::ZeroNormVector);
    }
    let mut refs = Vec::with_capacity(cfg.n_layers * cfg.d_mlp);
    let mut zero_norm_rows = 0;
    for (l, block) in model.blocks.iter().enumerate() {
        for (index, v) in block.mlp_v.rows().enumerate() {
            let vn = norm(v);
            let cos = if vn == 0.0 {
                zero_norm_rows += 1;
                0.0
            } else {
                (dot(direction, v) / (dn * vn)).clamp(-1.0, 1.0)
            };
            refs.push(ValueVectorRef {
                party,
                layer: l + 1,
                index,
                cos,
            });
        }
    }
    Ok(Scores {
        party,
        refs,
        zero_norm_rows,
    })
}

fn sorted(scores: &Scores) -> Vec<ValueVectorRef> {
    let mut all = scores.refs.clone();
    all.sort_by(rank_order);
    all
}

/// The `k` best positively aligned vectors over all layers.
///
/// Vectors with non-positive cosine are never selected; if fewer than `k`
/// positive candidates exist the call fails with [`Error::KTooLarge`].
pub fn select_topk(scores: &Scores, k: usize) -> Result<ValueVectorSet> {
    if k > scores.refs.len() {
        return Err(Error::KTooLarge {
            k,
            available: scores.refs.len(),
        });
    }
    let all = sorted(scores);
    let positive = all.iter().take_while(|r| r.cos > 0.0).count();
    if k > positive || k == 0 {
        return Err(Error::KTooLarge { k, available: positive });
    }
    Ok(ValueVectorSet {
        party: scores.party,
        k,
        cos_at_k: all[k - 1].cos,
        cos_at_k_plus_1: all.get(k).map(|r| r.cos),
        refs: all[..k].to_vec(),
    })
}

/// The `k` best positively aligned vectors inside each layer, merged in rank
/// order. Layers with fewer than `k` positive vectors contribute what they have.
pub fn select_per_layer(scores: &Scores, k: usize) -> Result<ValueVectorSet> {
    let all = sorted(scores);
    let mut refs: Vec<ValueVectorRef> = Vec::new();
    let mut taken_per_layer: alloc::collections::BTreeMap<usize, usize> = Default::default();
    let mut cos_next: Option<f64> = None;
    for r in &all {
        if r.cos <= 0.0 {
            break;
        }
        let taken = taken_per_layer.entry(r.layer).or_default();
        if *taken < k {
            *taken += 1;
            refs.push(*r);
        } else if cos_next.is_none() {
            cos_next = Some(r.cos);
        }
    }
    let last = refs.last().ok_or(Error::KTooLarge { k, available: 0 })?;
    Ok(ValueVectorSet {
        party: scores.party,
        k: refs.len(),
        cos_at_k: last.cos,
        cos_at_k_plus_1: cos_next,
        refs,
    })
}

pub fn select(scores: &Scores, k: usize, mode: Selection) -> Result<ValueVectorSet> {
    match mode {
        Selection::Global => select_topk(scores, k),
        Selection::PerLayer => select_per_layer(scores, k),
    }
}

/// The `k` most negatively aligned vectors (token suppressors), most negative
/// first. Diagnostic only.
pub fn bottom_k(scores: &Scores, k: usize) -> Vec<ValueVectorRef> {
    let mut all = sorted(scores);
    all.reverse();
    all.truncate(k);
    all
}

/// Fraction of the manifest's slots for `set.party` that `set` contains.
pub fn recovery_rate(set: &ValueVectorSet, manifest: &PlantManifest) -> Option<f64> {
    let planted: Vec<_> = manifest.slots_for(set.party).collect();
    if planted.is_empty() {
        return None;
    }
    let hits = planted
        .iter()
        .filter(|s| set.refs.iter().any(|r| r.layer == s.layer && r.index == s.index))
        .count();
    Some(hits as f64 / planted.len() as f64)
}
