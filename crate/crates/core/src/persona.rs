// SPDX-License-Identifier: MIT OR Apache-2.0

//! Persona grids, prompt templates and survey weights.
//!
//! A grid is an ordered list of variables, each with an ordered list of
//! values. Personas are the Cartesian product of the grid, numbered in
//! odometer order (first variable varies slowest), so a persona id is the
//! mixed-radix number formed by its value indices.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaGrid {
    variables: Vec<(String, Vec<String>)>,
}

fn owned(values: &[&str]) -> Vec<String> {
    values.iter().map(|s| s.to_string()).collect()
}

impl PersonaGrid {
    pub fn new(variables: Vec<(String, Vec<String>)>) -> Result<Self> {
        for (i, (name, values)) in variables.iter().enumerate() {
            if values.is_empty() {
                return Err(Error::EmptyVariable(name.clone()));
            }
            if variables[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::DuplicateVariable(name.clone()));
            }
        }
        Ok(Self { variables })
    }

    /// The study's persona variables, values kept in German.
    pub fn german_election(with_year: bool) -> Self {
        let mut vars = vec![
            (
                "age",
                owned(&[
                    "jünger als 20",
                    "zwischen 20 und 30",
                    "zwischen 30 und 40",
                    "zwischen 40 und 50",
                    "zwischen 50 und 60",
                    "zwischen 60 und 70",
                    "älter als 70",
                ]),
            ),
            ("gender", owned(&["weiblich", "männlich"])),
            (
                "education",
                owned(&[
                    "keinen Abschluss",
                    "einen Hauptschulabschluss",
                    "einen Realschulabschluss",
                    "Abitur",
                    "einen Hochschulabschluss",
                ]),
            ),
            ("hhincome", owned(&["niedrig", "mittel", "hoch"])),
            (
                "employment",
                owned(&["nicht beschäftigt", "in Ausbildung", "beschäftigt"]),
            ),
            (
                "left_leaning",
                owned(&[
                    "stark links",
                    "links der Mitte",
                    "in der Mitte",
                    "rechts der Mitte",
                    "stark rechts",
                ]),
            ),
            ("east_germany", owned(&["Westdeutschland", "Ostdeutschland"])),
        ];
        if with_year {
            vars.push(("year_of_election", owned(&["2021", "morgen"])));
        }
        Self::new(vars.into_iter().map(|(n, v)| (n.to_string(), v)).collect()).expect("static grid is valid")
    }

    pub fn variables(&self) -> &[(String, Vec<String>)] {
        &self.variables
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(|(_, v)| v.len()).collect()
    }

    /// Number of personas in the full product.
    pub fn size(&self) -> usize {
        self.variables.iter().map(|(_, v)| v.len()).product()
    }

    pub fn variable_index(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn value_index(&self, variable: usize, value: &str) -> Result<usize> {
        let (name, values) = &self.variables[variable];
        values
            .iter()
            .position(|v| v == value)
            .ok_or_else(|| Error::UnknownValue {
                variable: name.clone(),
                value: value.to_string(),
            })
    }

    pub fn value(&self, variable: usize, level: usize) -> &str {
        &self.variables[variable].1[level]
    }

    /// Persona id of an assignment (one value index per variable).
    pub fn persona_id(&self, assignment: &[usize]) -> usize {
        assignment
            .iter()
            .zip(&self.variables)
            .fold(0, |id, (&a, (_, values))| id * values.len() + a)
    }

    /// Persona with the given id, weight 1.
    pub fn persona(&self, id: usize) -> Persona {
        let mut rest = id;
        let mut assignment = vec![0; self.variables.len()];
        for (slot, (_, values)) in assignment.iter_mut().zip(&self.variables).rev() {
            *slot = rest % values.len();
            rest /= values.len();
        }
        Persona {
            id,
            assignment,
            weight: 1.0,
        }
    }

    /// Every persona, in id order.
    pub fn enumerate(&self) -> Vec<Persona> {
        (0..self.size()).map(|id| self.persona(id)).collect()
    }
}

/// `n` personas drawn without replacement, returned in id order. `n = 0` or
/// `n >= len` keeps everything.
pub fn subsample(personas: &[Persona], n: usize, seed: u64) -> Vec<Persona> {
    if n == 0 || n >= personas.len() {
        return personas.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, personas.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| personas[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub id: usize,
    /// Value index per grid variable.
    pub assignment: Vec<usize>,
    /// Survey occurrence weight.
    pub weight: f64,
}

impl Persona {
    pub fn value<'g>(&self, grid: &'g PersonaGrid, variable: usize) -> &'g str {
        grid.value(variable, self.assignment[variable])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVariant {
    pub id: usize,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn parse_template(template: &str) -> Result<Vec<Segment<'_>>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find(['{', '}']) {
        if rest.as_bytes()[open] == b'}' {
            return Err(Error::MalformedTemplate("unmatched `}`".into()));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| Error::MalformedTemplate("unclosed `{`".into()))?
            + open;
        let name = &rest[open + 1..close];
        if name.is_empty() || name.contains('{') {
            return Err(Error::MalformedTemplate("bad placeholder".into()));
        }
        if open > 0 {
            out.push(Segment::Text(&rest[..open]));
        }
        out.push(Segment::Slot(name));
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        out.push(Segment::Text(rest));
    }
    Ok(out)
}

/// Placeholder names of a template, in order of appearance.
pub fn placeholders(template: &str) -> Result<Vec<&str>> {
    Ok(parse_template(template)?
        .into_iter()
        .filter_map(|s| match s {
            Segment::Slot(n) => Some(n),
            Segment::Text(_) => None,
        })
        .collect())
}

/// Checks that every placeholder names a grid variable.
pub fn validate_variant(grid: &PersonaGrid, variant: &PromptVariant) -> Result<()> {
    for name in placeholders(&variant.template)? {
        grid.variable_index(name)
            .map_err(|_| Error::UnboundPlaceholder(name.to_string()))?;
    }
    Ok(())
}

/// Substitutes the persona's values into the template; nothing else changes.
pub fn render(grid: &PersonaGrid, persona: &Persona, variant: &PromptVariant) -> Result<String> {
    let mut out = String::with_capacity(variant.template.len() + 64);
    for seg in parse_template(&variant.template)? {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Slot(name) => {
                let var = grid
                    .variable_index(name)
                    .map_err(|_| Error::UnboundPlaceholder(name.to_string()))?;
                out.push_str(persona.value(grid, var));
            }
        }
    }
    Ok(out)
}

/// Canonical template (variant 0) followed by four reorderings.
pub fn default_variants() -> Vec<PromptVariant> {
    [
        "I am {age} years old and {gender}. I have {education}, a {hhincome} household net income per month, and I am {employment}. Ideologically, I lean towards the position {left_leaning}. I live in {east_germany}. If the elections were held in {year_of_election}, which party would I vote for? I vote for the party",
        "I live in {east_germany} and I am {gender}, {age} years old. My household net income per month is {hhincome}, I have {education}, and I am {employment}. Politically, my position is {left_leaning}. If the elections were held in {year_of_election}, which party would I vote for? I vote for the party",
        "Ich bin {age} Jahre alt und {gender}. Ich habe {education}, ein {hhincome} Haushaltsnettoeinkommen pro Monat und bin {employment}. Ideologisch stehe ich {left_leaning}. Ich wohne in {east_germany}. Wenn die Wahlen in {year_of_election} stattfänden, welche Partei würde ich wählen? Ich wähle die Partei",
        "Ideologisch stehe ich {left_leaning}. Ich wohne in {east_germany}, bin {gender} und {age} Jahre alt. Ich bin {employment}, habe {education} und ein {hhincome} Haushaltsnettoeinkommen pro Monat. Wenn die Wahlen in {year_of_election} stattfänden, welche Partei würde ich wählen? Ich wähle die Partei",
        "Ideologically, I lean towards the position {left_leaning}. I am {gender}, {age} years old, and I live in {east_germany}. I am {employment}, I have {education}, and my household net income per month is {hhincome}. If the elections were held in {year_of_election}, which party would I vote for? I vote for the party",
    ]
    .into_iter()
    .enumerate()
    .map(|(id, t)| PromptVariant {
        id,
        template: t.to_string(),
    })
    .collect()
}

/// One survey respondent: a value per grid variable (grid order), a design
/// weight, and optionally the party voted for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRow {
    pub values: Vec<String>,
    pub weight: f64,
    pub vote: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeightSummary {
    pub matched_rows: usize,
    pub unmatched_rows: usize,
    pub matched_weight: f64,
    pub total_weight: f64,
}

/// Assignment of a survey row as value indices, validating every value.
pub fn row_assignment(grid: &PersonaGrid, row: &SurveyRow) -> Result<Vec<usize>> {
    if row.values.len() != grid.variables().len() {
        return Err(Error::ShapeMismatch {
            op: "survey row",
            left: vec![row.values.len()],
            right: vec![grid.variables().len()],
        });
    }
    row.values
        .iter()
        .enumerate()
        .map(|(var, v)| grid.value_index(var, v))
        .collect()
}

/// Sets each persona's weight to the summed weight of the survey rows that
/// match it exactly. Personas without a matching row end at 0.
pub fn apply_weights(grid: &PersonaGrid, personas: &mut [Persona], rows: &[SurveyRow]) -> Result<WeightSummary> {
    let by_id: BTreeMap<usize, usize> = personas.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
    let mut acc = vec![0.0f64; personas.len()];
    let mut summary = WeightSummary::default();
    for (r, row) in rows.iter().enumerate() {
        if row.weight < 0.0 || !row.weight.is_finite() {
            return Err(Error::NegativeWeight {
                row: r,
                weight: row.weight,
            });
        }
        let id = grid.persona_id(&row_assignment(grid, row)?);
        summary.total_weight += row.weight;
        match by_id.get(&id) {
            Some(&i) => {
                acc[i] += row.weight;
                summary.matched_rows += 1;
                summary.matched_weight += row.weight;
            }
            None => summary.unmatched_rows += 1,
        }
    }
    for (p, w) in personas.iter_mut().zip(acc) {
        p.weight = w;
    }
    Ok(summary)
}
