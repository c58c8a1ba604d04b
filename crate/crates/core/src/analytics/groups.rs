// SPDX-License-Identifier: MIT OR Apache-2.0

//! Group-level aggregation: ψ distributions, prompt sensitivity, survey
//! baselines and dummy-coded regressions over persona variables.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::dist::{barycenter, wasserstein, GroundMetric, PartyDistribution, Source};
use super::ols::{ols, Coefficient, Design, RegressionResult};
use crate::error::{Error, Result};
use crate::persona::{row_assignment, Persona, PersonaGrid, SurveyRow};
use crate::scaling::ScalingCube;

/// A subset of (persona, variant) cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GroupKey {
    All,
    Level {
        variable: String,
        value: String,
    },
    Variant {
        variant: usize,
    },
    VariantLevel {
        variant: usize,
        variable: String,
        value: String,
    },
}

impl GroupKey {
    pub fn level(variable: &str, value: &str) -> Self {
        Self::Level {
            variable: variable.to_string(),
            value: value.to_string(),
        }
    }

    /// `all`, `variable=value`, `j=2` or `j=2,variable=value`.
    pub fn label(&self) -> String {
        match self {
            Self::All => "all".into(),
            Self::Level { variable, value } => format!("{variable}={value}"),
            Self::Variant { variant } => format!("j={variant}"),
            Self::VariantLevel {
                variant,
                variable,
                value,
            } => format!("j={variant},{variable}={value}"),
        }
    }

    /// Restricts the key to one variant.
    pub fn with_variant(&self, variant: usize) -> Self {
        match self {
            Self::All | Self::Variant { .. } => Self::Variant { variant },
            Self::Level { variable, value } | Self::VariantLevel { variable, value, .. } => Self::VariantLevel {
                variant,
                variable: variable.clone(),
                value: value.clone(),
            },
        }
    }

    fn parts(&self) -> (Option<usize>, Option<(&str, &str)>) {
        match self {
            Self::All => (None, None),
            Self::Level { variable, value } => (None, Some((variable, value))),
            Self::Variant { variant } => (Some(*variant), None),
            Self::VariantLevel {
                variant,
                variable,
                value,
            } => (Some(*variant), Some((variable, value))),
        }
    }

    fn resolve(&self, grid: &PersonaGrid) -> Result<Filter> {
        let (variant, level) = self.parts();
        let level = match level {
            Some((var, val)) => {
                let v = grid.variable_index(var)?;
                Some((v, grid.value_index(v, val)?))
            }
            None => None,
        };
        Ok(Filter { variant, level })
    }
}

struct Filter {
    variant: Option<usize>,
    level: Option<(usize, usize)>,
}

impl Filter {
    fn persona(&self, assignment: &[usize]) -> bool {
        self.level.is_none_or(|(v, l)| assignment[v] == l)
    }
}

/// Every single-variable level of the grid, in grid order.
pub fn level_groups(grid: &PersonaGrid) -> Vec<GroupKey> {
    grid.variables()
        .iter()
        .flat_map(|(name, values)| values.iter().map(move |v| GroupKey::level(name, v)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Personas weighted by their survey occurrence weight.
    Survey,
    /// Every persona counts once.
    #[default]
    Uniform,
}

fn persona_weight(p: &Persona, weighting: Weighting) -> f64 {
    match weighting {
        Weighting::Survey => p.weight,
        Weighting::Uniform => 1.0,
    }
}

/// ψ for the cells selected by `key`: the (weighted) sum of scaling factors
/// per party, floored at zero and normalised.
pub fn build_psi(
    cube: &ScalingCube,
    grid: &PersonaGrid,
    parties: &[String],
    key: &GroupKey,
    weighting: Weighting,
) -> Result<PartyDistribution> {
    if parties.len() != cube.n_parties() {
        return Err(Error::AxisMismatch);
    }
    let filter = key.resolve(grid)?;
    let mut mass = vec![0.0; parties.len()];
    let mut cells = 0usize;
    for (pi, p) in cube.personas().iter().enumerate() {
        if !filter.persona(&p.assignment) {
            continue;
        }
        let w = persona_weight(p, weighting);
        for (ji, &j) in cube.variants().iter().enumerate() {
            if filter.variant.is_some_and(|v| v != j) {
                continue;
            }
            cells += 1;
            for (m, x) in mass.iter_mut().zip(cube.cell(pi, ji)) {
                *m += w * x;
            }
        }
    }
    if cells == 0 {
        return Err(Error::EmptyGroup);
    }
    PartyDistribution::from_mass(parties.to_vec(), &mass, Source::Latent)
}

/// Weighted vote shares of the survey rows in a group.
pub fn survey_baseline(
    grid: &PersonaGrid,
    rows: &[SurveyRow],
    parties: &[String],
    key: &GroupKey,
) -> Result<PartyDistribution> {
    let filter = key.resolve(grid)?;
    if filter.variant.is_some() {
        return Err(Error::InvalidConfig(
            "survey groups cannot select a prompt variant".into(),
        ));
    }
    let mut mass = vec![0.0; parties.len()];
    let mut total = 0.0;
    for row in rows {
        let Some(vote) = &row.vote else { continue };
        if !filter.persona(&row_assignment(grid, row)?) {
            continue;
        }
        let n = parties
            .iter()
            .position(|p| p == vote)
            .ok_or_else(|| Error::UnknownParty(vote.clone()))?;
        mass[n] += row.weight;
        total += row.weight;
    }
    if total <= 0.0 {
        return Err(Error::EmptyGroup);
    }
    PartyDistribution::from_mass(parties.to_vec(), &mass, Source::Survey)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub group: String,
    pub source: Source,
    pub entropy: f64,
}

/// Latent (and, when survey rows are given, survey) entropy per group.
/// Groups whose distribution is undefined are skipped.
pub fn entropy_table(
    cube: &ScalingCube,
    grid: &PersonaGrid,
    parties: &[String],
    groups: &[GroupKey],
    survey: Option<&[SurveyRow]>,
    weighting: Weighting,
) -> Result<Vec<EntropyRow>> {
    let mut out = Vec::new();
    for g in groups {
        match build_psi(cube, grid, parties, g, weighting) {
            Ok(d) => out.push(EntropyRow {
                group: g.label(),
                source: Source::Latent,
                entropy: d.entropy(),
            }),
            Err(Error::EmptyGroup | Error::AllNonPositive) => {}
            Err(e) => return Err(e),
        }
        if let Some(rows) = survey {
            match survey_baseline(grid, rows, parties, g) {
                Ok(d) => out.push(EntropyRow {
                    group: g.label(),
                    source: Source::Survey,
                    entropy: d.entropy(),
                }),
                Err(Error::EmptyGroup) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub group: String,
    pub variant: usize,
    pub entropy: f64,
    pub wasserstein: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub rows: Vec<SensitivityRow>,
    /// (group, variant) cells with no data or no positive mass.
    pub excluded: usize,
}

/// For each group and variant: entropy of ψ and its distance to the group's
/// barycenter over variants.
pub fn sensitivity_table(
    cube: &ScalingCube,
    grid: &PersonaGrid,
    parties: &[String],
    groups: &[GroupKey],
    ground: &GroundMetric,
    weighting: Weighting,
) -> Result<SensitivityTable> {
    let mut rows = Vec::new();
    let mut excluded = 0;
    for g in groups {
        let mut cells = Vec::new();
        for &j in cube.variants() {
            match build_psi(cube, grid, parties, &g.with_variant(j), weighting) {
                Ok(d) => cells.push((j, d)),
                Err(Error::EmptyGroup | Error::AllNonPositive) => excluded += 1,
                Err(e) => return Err(e),
            }
        }
        if cells.is_empty() {
            continue;
        }
        let dists: Vec<PartyDistribution> = cells.iter().map(|(_, d)| d.clone()).collect();
        let center = barycenter(&dists)?;
        for (j, d) in &cells {
            rows.push(SensitivityRow {
                group: g.label(),
                variant: *j,
                entropy: d.entropy(),
                wasserstein: wasserstein(d, &center, ground)?,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::NoValidCells);
    }
    Ok(SensitivityTable { rows, excluded })
}

/// Regresses prompt sensitivity on entropy across the table's rows.
pub fn sensitivity_regression(table: &SensitivityTable) -> Result<RegressionResult> {
    let mut design = Design::new(vec!["intercept".into(), "entropy".into()]);
    let mut y = Vec::with_capacity(table.rows.len());
    for r in &table.rows {
        design.push_row(&[1.0, r.entropy])?;
        y.push(r.wasserstein);
    }
    ols(&y, &design)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRegression {
    pub full: RegressionResult,
    /// Non-intercept terms with `p <= alpha`.
    pub significant: Vec<Coefficient>,
    pub alpha: f64,
    /// Reference level per included variable.
    pub reference_levels: Vec<(String, String)>,
    /// Variables left out because the grid or the data offers one level only.
    pub excluded_variables: Vec<String>,
    /// Levels with no observations, dropped from the design.
    pub dropped_levels: Vec<String>,
}

/// Regresses `y` on dummy-coded persona variables. The first listed level
/// present in the data is the reference.
pub fn group_regression(grid: &PersonaGrid, observations: &[(&Persona, f64)], alpha: f64) -> Result<GroupRegression> {
    let mut names = vec!["intercept".to_string()];
    let mut columns: Vec<(usize, usize)> = Vec::new();
    let mut reference_levels = Vec::new();
    let mut excluded_variables = Vec::new();
    let mut dropped_levels = Vec::new();
    for (v, (name, values)) in grid.variables().iter().enumerate() {
        let present: Vec<usize> = (0..values.len())
            .filter(|&l| observations.iter().any(|(p, _)| p.assignment[v] == l))
            .collect();
        for l in (0..values.len()).filter(|l| !present.contains(l)) {
            dropped_levels.push(format!("{name}={}", values[l]));
        }
        if present.len() < 2 {
            excluded_variables.push(name.clone());
            continue;
        }
        reference_levels.push((name.clone(), values[present[0]].clone()));
        for &l in &present[1..] {
            names.push(format!("{name}={}", values[l]));
            columns.push((v, l));
        }
    }
    let mut design = Design::new(names);
    let mut y = Vec::with_capacity(observations.len());
    let mut row = vec![0.0; columns.len() + 1];
    for (p, value) in observations {
        row[0] = 1.0;
        for (slot, &(v, l)) in row[1..].iter_mut().zip(&columns) {
            *slot = if p.assignment[v] == l { 1.0 } else { 0.0 };
        }
        design.push_row(&row)?;
        y.push(*value);
    }
    let full = ols(&y, &design)?;
    let significant = full
        .coefficients
        .iter()
        .skip(1)
        .filter(|c| c.p <= alpha)
        .cloned()
        .collect();
    Ok(GroupRegression {
        full,
        significant,
        alpha,
        reference_levels,
        excluded_variables,
        dropped_levels,
    })
}

/// [`group_regression`] of one party's scaling factors over every cube cell.
pub fn party_regression(cube: &ScalingCube, grid: &PersonaGrid, party: usize, alpha: f64) -> Result<GroupRegression> {
    let mut obs = Vec::with_capacity(cube.personas().len() * cube.variants().len());
    for (pi, p) in cube.personas().iter().enumerate() {
        for ji in 0..cube.variants().len() {
            obs.push((p, cube.at(pi, ji, party)));
        }
    }
    group_regression(grid, &obs, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::{group_matrix, ScalingRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn parties() -> Vec<String> {
        ["A", "B", "C", "D", "E", "F"].iter().map(|s| s.to_string()).collect()
    }

    fn small_grid() -> PersonaGrid {
        PersonaGrid::new(vec![
            ("gender".into(), vec!["weiblich".into(), "männlich".into()]),
            ("age".into(), vec!["jung".into(), "mittel".into(), "alt".into()]),
        ])
        .unwrap()
    }

    fn cube_from(grid: &PersonaGrid, variants: &[usize], m: impl Fn(&Persona, usize, usize) -> f64) -> ScalingCube {
        let personas = grid.enumerate();
        let mut recs = Vec::new();
        for p in &personas {
            for &j in variants {
                for n in 0..6 {
                    recs.push(ScalingRecord {
                        persona: p.id,
                        variant: j,
                        party: n,
                        m: m(p, j, n),
                        raw: None,
                    });
                }
            }
        }
        group_matrix(&recs, &personas, variants, 6).unwrap()
    }

    #[test]
    fn psi_by_group() {
        let g = small_grid();
        let cube = cube_from(
            &g,
            &[0],
            |p, _, n| if p.assignment[0] == 0 && n == 0 { 3.0 } else { 1.0 },
        );
        let all = build_psi(&cube, &g, &parties(), &GroupKey::All, Weighting::Uniform).unwrap();
        let f = build_psi(
            &cube,
            &g,
            &parties(),
            &GroupKey::level("gender", "weiblich"),
            Weighting::Uniform,
        )
        .unwrap();
        assert!((f.probs[0] - 3.0 / 8.0).abs() < 1e-15);
        assert!(f.probs[0] > all.probs[0]);
        assert!(f.entropy() < all.entropy());
        assert!(matches!(
            build_psi(
                &cube,
                &g,
                &parties(),
                &GroupKey::level("gender", "divers"),
                Weighting::Uniform
            ),
            Err(Error::UnknownValue { .. })
        ));
        assert_eq!(
            build_psi(
                &cube,
                &g,
                &parties(),
                &GroupKey::Variant { variant: 4 },
                Weighting::Uniform
            )
            .unwrap_err(),
            Error::EmptyGroup
        );
    }

    #[test]
    fn survey_weighting_changes_psi() {
        let g = small_grid();
        let mut personas = g.enumerate();
        for p in &mut personas {
            p.weight = if p.id == 0 { 10.0 } else { 0.0 };
        }
        let mut recs = Vec::new();
        for p in &personas {
            for n in 0..6 {
                recs.push(ScalingRecord {
                    persona: p.id,
                    variant: 0,
                    party: n,
                    m: if n == p.id % 6 { 1.0 } else { 0.0 },
                    raw: None,
                });
            }
        }
        let cube = group_matrix(&recs, &personas, &[0], 6).unwrap();
        let w = build_psi(&cube, &g, &parties(), &GroupKey::All, Weighting::Survey).unwrap();
        assert_eq!(w.probs[0], 1.0);
        let u = build_psi(&cube, &g, &parties(), &GroupKey::All, Weighting::Uniform).unwrap();
        assert!((u.entropy() - 1.0).abs() < 1e-12);
    }

    fn vote(g: &PersonaGrid, id: usize, party: &str, w: f64) -> SurveyRow {
        let p = g.persona(id);
        SurveyRow {
            values: (0..2).map(|v| p.value(g, v).to_string()).collect(),
            weight: w,
            vote: Some(party.into()),
        }
    }

    #[test]
    fn survey_baselines() {
        let g = small_grid();
        let rows = [vote(&g, 0, "A", 3.0), vote(&g, 4, "B", 1.0)];
        let d = survey_baseline(&g, &rows, &parties(), &GroupKey::All).unwrap();
        assert_eq!(d.probs, vec![0.75, 0.25, 0.0, 0.0, 0.0, 0.0]);
        let one = survey_baseline(&g, &rows[..1], &parties(), &GroupKey::All).unwrap();
        assert_eq!(one.probs[0], 1.0);
        assert_eq!(
            survey_baseline(&g, &rows[..1], &parties(), &GroupKey::level("gender", "männlich")).unwrap_err(),
            Error::EmptyGroup
        );
        assert_eq!(
            survey_baseline(&g, &[vote(&g, 0, "X", 1.0)], &parties(), &GroupKey::All).unwrap_err(),
            Error::UnknownParty("X".into())
        );
    }

    #[test]
    fn sensitivity_cases() {
        let g = small_grid();
        let same = cube_from(&g, &[0, 1], |p, _, n| (p.id + n) as f64);
        let t = sensitivity_table(
            &same,
            &g,
            &parties(),
            &level_groups(&g),
            &GroundMetric::Unit,
            Weighting::Uniform,
        )
        .unwrap();
        assert_eq!(t.rows.len(), 10);
        assert!(t.rows.iter().all(|r| r.wasserstein == 0.0));

        let one = cube_from(&g, &[0], |p, _, n| (p.id + n) as f64);
        let t = sensitivity_table(
            &one,
            &g,
            &parties(),
            &[GroupKey::All],
            &GroundMetric::Unit,
            Weighting::Uniform,
        )
        .unwrap();
        assert_eq!(t.rows[0].wasserstein, 0.0);

        let skew = cube_from(&g, &[0, 1], |_, j, n| if j == 1 && n == 2 { 5.0 } else { 1.0 });
        let t = sensitivity_table(
            &skew,
            &g,
            &parties(),
            &[GroupKey::All],
            &GroundMetric::Unit,
            Weighting::Uniform,
        )
        .unwrap();
        assert!(t.rows.iter().any(|r| r.wasserstein > 0.0));

        let dead = cube_from(&g, &[0], |_, _, _| 0.0);
        assert_eq!(
            sensitivity_table(
                &dead,
                &g,
                &parties(),
                &[GroupKey::All],
                &GroundMetric::Unit,
                Weighting::Uniform
            )
            .unwrap_err(),
            Error::NoValidCells
        );
    }

    #[test]
    fn constructed_signal_regression() {
        let g = PersonaGrid::german_election(false);
        let ps = g.enumerate();
        let gender = g.variable_index("gender").unwrap();
        let obs: Vec<_> = ps
            .iter()
            .take(600)
            .map(|p| (p, if p.assignment[gender] == 1 { 1.0 } else { 0.0 }))
            .collect();
        let r = group_regression(&g, &obs, 0.05).unwrap();
        // the first 600 personas all share the youngest age level
        assert_eq!(r.excluded_variables, vec!["age".to_string()]);
        let c = r.full.get("gender=männlich").unwrap();
        assert!((c.estimate - 1.0).abs() < 1e-12);
        assert!(r.significant.iter().any(|s| s.term == "gender=männlich"));
    }

    #[test]
    fn female_indicator_signal() {
        let g = small_grid();
        let ps = g.enumerate();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs: Vec<_> = (0..60)
            .map(|i| {
                let p = &ps[i % ps.len()];
                let _ = rng.random::<u8>();
                (p, if p.assignment[0] == 0 { 1.0 } else { 0.0 })
            })
            .collect();
        let r = group_regression(&g, &obs, 0.05).unwrap();
        // reference is the first level (weiblich), so the coded dummy is -1
        assert!((r.full.get("gender=männlich").unwrap().estimate + 1.0).abs() < 1e-12);
        assert!((r.full.get("intercept").unwrap().estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_level_variable_excluded() {
        let g = PersonaGrid::new(vec![
            ("gender".into(), vec!["a".into(), "b".into()]),
            ("const".into(), vec!["only".into()]),
        ])
        .unwrap();
        let ps = g.enumerate();
        let obs: Vec<_> = (0..10).map(|i| (&ps[i % 2], i as f64)).collect();
        let r = group_regression(&g, &obs, 0.05).unwrap();
        assert_eq!(r.excluded_variables, vec!["const".to_string()]);
        assert_eq!(r.full.coefficients.len(), 2);
    }
}
