// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic opinion-statement corpus used to train party probes.
//!
//! Each row pairs a policy statement with one party's opinion on it. The
//! opinion always names the party token and one of the party's keywords
//! (`kw_<party>_<i>`), which are the marker tokens a planted model reacts to.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KEYWORDS_PER_PARTY: usize = 3;

const TOPICS: [&str; 20] = [
    "Mindestlohn",
    "Klimaschutz",
    "Rente",
    "Bundeswehr",
    "Digitalisierung",
    "Mietpreisbremse",
    "Tempolimit",
    "Kernkraft",
    "Schuldenbremse",
    "Bürgergeld",
    "Einwanderung",
    "Erbschaftsteuer",
    "Windkraft",
    "Polizei",
    "Kita",
    "Bahn",
    "Landwirtschaft",
    "Datenschutz",
    "Wehrpflicht",
    "Verbrenner",
];

const STATEMENTS: [&str; 4] = [
    "Der Staat soll {topic} stärker fördern .",
    "{topic} soll abgeschafft werden .",
    "Für {topic} soll mehr Geld ausgegeben werden .",
    "{topic} soll gesetzlich geregelt werden .",
];

const STANCES: [&str; 3] = ["stimmt zu", "lehnt ab", "ist neutral"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementRow {
    pub party: String,
    pub statement: String,
    pub opinion: String,
}

impl StatementRow {
    /// Prompt text fed to the model: statement followed by the opinion.
    pub fn prompt(&self) -> String {
        format!("{} {}", self.statement, self.opinion)
    }
}

/// Keyword marker tokens of a party.
pub fn party_keywords(party: &str) -> Vec<String> {
    let stem = party.to_lowercase();
    (0..KEYWORDS_PER_PARTY).map(|i| format!("kw_{stem}_{i}")).collect()
}

/// Every word the generator can emit, for vocabulary construction.
pub fn corpus_words(parties: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in STATEMENTS.iter().chain(STANCES.iter()) {
        out.push(t.replace("{topic}", ""));
    }
    out.extend(TOPICS.iter().map(|s| s.to_string()));
    out.push("Die Partei : und sind für uns entscheidend .".into());
    for p in parties {
        out.push(p.clone());
        out.extend(party_keywords(p));
    }
    out
}

/// `size` rows, balanced across `parties` (counts differ by at most one),
/// in seeded random order.
pub fn gen_corpus(parties: &[String], size: usize, min_per_party: usize, seed: u64) -> Result<Vec<StatementRow>> {
    let min = parties.len() * min_per_party;
    if parties.is_empty() || size < min || size < parties.len() {
        return Err(Error::SizeTooSmall {
            size,
            min: min.max(parties.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..size).map(|i| i % parties.len()).collect();
    labels.shuffle(&mut rng);
    let keywords: Vec<Vec<String>> = parties.iter().map(|p| party_keywords(p)).collect();
    let rows = labels
        .into_iter()
        .map(|p| {
            let topic = TOPICS.choose(&mut rng).expect("non-empty");
            let filler = TOPICS.choose(&mut rng).expect("non-empty");
            let template = STATEMENTS.choose(&mut rng).expect("non-empty");
            let stance = STANCES.choose(&mut rng).expect("non-empty");
            let kw = keywords[p].choose(&mut rng).expect("non-empty");
            StatementRow {
                party: parties[p].clone(),
                statement: template.replace("{topic}", topic),
                opinion: format!(
                    "Die Partei {} {stance} : {kw} und {filler} sind für uns entscheidend .",
                    parties[p]
                ),
            }
        })
        .collect();
    Ok(rows)
}
