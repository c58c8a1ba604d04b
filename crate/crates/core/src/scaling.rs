// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-persona scaling factors over selected value vectors.
//!
//! For a prompt and a party's selected set `V`, the scaling factor is the
//! cosine-weighted mean of the activation coefficients `f(k · x)` of the
//! selected vectors, read from the pre-MLP stream of each vector's layer.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::ValueVectorSet;
use crate::model::transformer::ResidualTrace;
use crate::model::Model;
use crate::persona::Persona;
use crate::tensor::dot;

/// Which positions the activation coefficient is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// The last prompt token, whose next-token distribution answers the question.
    #[default]
    FinalToken,
    /// Mean coefficient over all positions.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub persona: usize,
    pub variant: usize,
    pub party: usize,
    pub m: f64,
    /// Coefficient per selected vector, in the set's order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<Vec<f64>>,
}

/// Normalised cosine weights of a set; they sum to 1.
pub fn cosine_weights(set: &ValueVectorSet) -> Result<Vec<f64>> {
    if set.refs.is_empty() {
        return Err(Error::EmptyValueSet(set.party));
    }
    if let Some(r) = set.refs.iter().find(|r| r.cos <= 0.0 || !r.cos.is_finite()) {
        return Err(Error::NonPositiveCosineInSet {
            layer: r.layer,
            index: r.index,
            cos: r.cos,
        });
    }
    let total: f64 = set.refs.iter().map(|r| r.cos).sum();
    Ok(set.refs.iter().map(|r| r.cos / total).collect())
}

/// Activation coefficient of value vector `(layer, index)` for a recorded pass.
pub fn coefficient(model: &Model, trace: &ResidualTrace, layer: usize, index: usize, readout: Readout) -> Result<f64> {
    let block = model.block(layer)?;
    let key = block.mlp_k.row(index);
    let f = model.config().activation;
    Ok(match readout {
        Readout::FinalToken => f.apply(dot(key, trace.pre_mlp(layer, trace.seq_len() - 1))),
        Readout::Mean => {
            let n = trace.seq_len();
            (0..n).map(|s| f.apply(dot(key, trace.pre_mlp(layer, s)))).sum::<f64>() / n as f64
        }
    })
}

/// One record per party for a single tokenised prompt, from one forward pass.
pub fn scan_prompt(
    model: &Model,
    sets: &[ValueVectorSet],
    persona: usize,
    variant: usize,
    tokens: &[usize],
    readout: Readout,
    keep_raw: bool,
) -> Result<Vec<ScalingRecord>> {
    let weights: Vec<Vec<f64>> = sets.iter().map(cosine_weights).collect::<Result<_>>()?;
    let trace = model.forward(tokens)?.trace;
    sets.iter()
        .zip(&weights)
        .map(|(set, w)| {
            let raw: Vec<f64> = set
                .refs
                .iter()
                .map(|r| coefficient(model, &trace, r.layer, r.index, readout))
                .collect::<Result<_>>()?;
            let m: f64 = raw.iter().zip(w).map(|(c, w)| c * w).sum();
            if !m.is_finite() {
                return Err(Error::NonFinite("scaling factor"));
            }
            Ok(ScalingRecord {
                persona,
                variant,
                party: set.party,
                m,
                raw: keep_raw.then_some(raw),
            })
        })
        .collect()
}

/// Tokenised prompt tagged with its persona and variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTokens {
    pub persona: usize,
    pub variant: usize,
    pub tokens: Vec<usize>,
}

/// Scans every prompt sequentially; records sorted by (persona, variant, party).
pub fn scan(
    model: &Model,
    sets: &[ValueVectorSet],
    prompts: &[PromptTokens],
    readout: Readout,
    keep_raw: bool,
) -> Result<Vec<ScalingRecord>> {
    let mut out = Vec::with_capacity(prompts.len() * sets.len());
    for p in prompts {
        out.extend(scan_prompt(
            model, sets, p.persona, p.variant, &p.tokens, readout, keep_raw,
        )?);
    }
    sort_records(&mut out);
    Ok(out)
}

pub fn sort_records(records: &mut [ScalingRecord]) {
    records.sort_by_key(|r| (r.persona, r.variant, r.party));
}

/// Dense persona × variant × party table of scaling factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingCube {
    personas: Vec<Persona>,
    variants: Vec<usize>,
    n_parties: usize,
    values: Vec<f64>,
}

impl ScalingCube {
    pub fn personas(&self) -> &[Persona] {
        &self.personas
    }

    pub fn variants(&self) -> &[usize] {
        &self.variants
    }

    pub fn n_parties(&self) -> usize {
        self.n_parties
    }

    /// Value at positional indices (persona row, variant column, party).
    pub fn at(&self, p: usize, j: usize, n: usize) -> f64 {
        self.values[(p * self.variants.len() + j) * self.n_parties + n]
    }

    /// Party vector at positional persona and variant indices.
    pub fn cell(&self, p: usize, j: usize) -> &[f64] {
        let start = (p * self.variants.len() + j) * self.n_parties;
        &self.values[start..start + self.n_parties]
    }

    /// Records in (persona, variant, party) order.
    pub fn to_records(&self) -> Vec<ScalingRecord> {
        let mut out = Vec::with_capacity(self.values.len());
        for (pi, p) in self.personas.iter().enumerate() {
            for (ji, &j) in self.variants.iter().enumerate() {
                for n in 0..self.n_parties {
                    out.push(ScalingRecord {
                        persona: p.id,
                        variant: j,
                        party: n,
                        m: self.at(pi, ji, n),
                        raw: None,
                    });
                }
            }
        }
        out
    }
}

/// Arranges records into a dense cube. Every (persona, variant, party) cell
/// must appear exactly once; records for personas or variants outside the
/// given lists are ignored.
pub fn group_matrix(
    records: &[ScalingRecord],
    personas: &[Persona],
    variants: &[usize],
    n_parties: usize,
) -> Result<ScalingCube> {
    let p_pos: BTreeMap<usize, usize> = personas.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
    let j_pos: BTreeMap<usize, usize> = variants.iter().enumerate().map(|(i, &j)| (j, i)).collect();
    let len = personas.len() * variants.len() * n_parties;
    let mut values = vec![0.0; len];
    let mut filled = vec![false; len];
    for r in records {
        let (Some(&pi), Some(&ji)) = (p_pos.get(&r.persona), j_pos.get(&r.variant)) else {
            continue;
        };
        if r.party >= n_parties {
            continue;
        }
        let at = (pi * variants.len() + ji) * n_parties + r.party;
        if filled[at] {
            return Err(Error::DuplicateCell {
                persona: r.persona,
                variant: r.variant,
                party: r.party,
            });
        }
        filled[at] = true;
        values[at] = r.m;
    }
    if let Some(at) = filled.iter().position(|f| !f) {
        let n = at % n_parties;
        let j = (at / n_parties) % variants.len();
        let p = at / (n_parties * variants.len());
        return Err(Error::IncompleteCube {
            persona: personas[p].id,
            variant: variants[j],
            party: n,
        });
    }
    Ok(ScalingCube {
        personas: personas.to_vec(),
        variants: variants.to_vec(),
        n_parties,
        values,
    })
}
