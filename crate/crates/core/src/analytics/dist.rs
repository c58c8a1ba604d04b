// SPDX-License-Identifier: MIT OR Apache-2.0

//! Party distributions, normalised entropy, barycenters and transport distance.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Built from model scaling factors.
    Latent,
    /// Built from weighted survey votes.
    Survey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyDistribution {
    pub parties: Vec<String>,
    pub probs: Vec<f64>,
    /// Total negative mass floored to zero before normalising.
    pub clamped_mass: f64,
    pub source: Source,
}

impl PartyDistribution {
    /// Normalises nonnegative-after-flooring mass into a distribution.
    pub fn from_mass(parties: Vec<String>, mass: &[f64], source: Source) -> Result<Self> {
        if parties.len() != mass.len() {
            return Err(Error::AxisMismatch);
        }
        if mass.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("party mass"));
        }
        let clamped_mass: f64 = mass.iter().filter(|&&m| m < 0.0).fold(0.0, |acc, m| acc - m);
        let total: f64 = mass.iter().map(|m| m.max(0.0)).sum();
        if total <= 0.0 {
            return Err(Error::AllNonPositive);
        }
        Ok(Self {
            parties,
            probs: mass.iter().map(|m| m.max(0.0) / total).collect(),
            clamped_mass,
            source,
        })
    }

    pub fn uniform(parties: Vec<String>, source: Source) -> Self {
        let p = 1.0 / parties.len() as f64;
        Self {
            probs: vec![p; parties.len()],
            parties,
            clamped_mass: 0.0,
            source,
        }
    }

    pub fn prob(&self, party: &str) -> Option<f64> {
        self.parties.iter().position(|p| p == party).map(|i| self.probs[i])
    }

    /// Normalised Shannon entropy in bits, divided by `log2 |N|`.
    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }
}

/// `-Σ p log2 p / log2 N`, with `0 log 0 = 0`; a single-party axis gives 0.
pub fn entropy(probs: &[f64]) -> f64 {
    if probs.len() < 2 {
        return 0.0;
    }
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .fold(0.0, |acc, &p| acc - p * libm::log2(p));
    (h / libm::log2(probs.len() as f64)).clamp(0.0, 1.0)
}

/// Componentwise mean of distributions over one party axis.
pub fn barycenter(dists: &[PartyDistribution]) -> Result<PartyDistribution> {
    let first = dists.first().ok_or(Error::EmptyList)?;
    if dists.iter().any(|d| d.parties != first.parties) {
        return Err(Error::AxisMismatch);
    }
    if dists.iter().all(|d| d.probs == first.probs) {
        return Ok(first.clone());
    }
    let n = dists.len() as f64;
    let mut mean = vec![0.0; first.probs.len()];
    for d in dists {
        for (m, p) in mean.iter_mut().zip(&d.probs) {
            *m += p;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let total: f64 = mean.iter().sum();
    Ok(PartyDistribution {
        parties: first.parties.clone(),
        probs: mean.into_iter().map(|m| m / total).collect(),
        clamped_mass: dists.iter().fold(0.0, |acc, d| acc + d.clamped_mass),
        source: first.source,
    })
}

/// Ground cost between parties.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "axis")]
pub enum GroundMetric {
    /// Cost 1 between distinct parties; the distance is total variation.
    #[default]
    Unit,
    /// Parties placed at 0, 1, 2, ... along the listed order (e.g. left to right).
    Ordered(Vec<String>),
}

/// 1-Wasserstein distance between two distributions on the same party axis.
pub fn wasserstein(a: &PartyDistribution, b: &PartyDistribution, ground: &GroundMetric) -> Result<f64> {
    if a.parties != b.parties {
        return Err(Error::AxisMismatch);
    }
    match ground {
        GroundMetric::Unit => Ok(0.5 * a.probs.iter().zip(&b.probs).map(|(x, y)| (x - y).abs()).sum::<f64>()),
        GroundMetric::Ordered(axis) => {
            if axis.len() != a.parties.len() {
                return Err(Error::AxisMismatch);
            }
            let mut cdf_gap = 0.0;
            let mut total = 0.0;
            let mut seen = vec![false; axis.len()];
            for name in axis {
                let i = a.parties.iter().position(|p| p == name).ok_or(Error::AxisMismatch)?;
                if core::mem::replace(&mut seen[i], true) {
                    return Err(Error::AxisMismatch);
                }
                cdf_gap += a.probs[i] - b.probs[i];
                total += cdf_gap.abs();
            }
            // the last CDF difference is zero up to rounding
            Ok(total - cdf_gap.abs())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    pub(crate) fn six() -> Vec<String> {
        ["A", "B", "C", "D", "E", "F"].iter().map(|s| s.to_string()).collect()
    }

    fn d(p: &[f64]) -> PartyDistribution {
        PartyDistribution::from_mass(six(), p, Source::Latent).unwrap()
    }

    #[test]
    fn psi_normalisation() {
        assert_eq!(d(&[1.0; 6]).probs, vec![1.0 / 6.0; 6]);
        assert_eq!(
            d(&[2.0, 1.0, 1.0, 0.0, 0.0, 0.0]).probs,
            vec![0.5, 0.25, 0.25, 0.0, 0.0, 0.0]
        );
        let c = d(&[1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.probs, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.clamped_mass, 1.0);
        assert_eq!(
            PartyDistribution::from_mass(six(), &[-1.0, 0.0, 0.0, 0.0, 0.0, 0.0], Source::Latent).unwrap_err(),
            Error::AllNonPositive
        );
    }

    #[test]
    fn entropy_values() {
        assert!((d(&[1.0; 6]).entropy() - 1.0).abs() <= 1e-12);
        assert_eq!(d(&[0.0, 0.0, 3.0, 0.0, 0.0, 0.0]).entropy(), 0.0);
        let half = d(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).entropy();
        // 1 bit over log2(6) bits
        assert!((half - 0.386_852_807_234_541_6).abs() < 1e-6);
    }

    #[test]
    fn barycenter_cases() {
        let a = d(&[0.1, 0.2, 0.3, 0.4, 0.0, 0.0]);
        assert_eq!(barycenter(core::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(barycenter(&[a.clone(), a.clone(), a.clone()]).unwrap().probs, a.probs);
        let one_a = d(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let one_b = d(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            barycenter(&[one_a, one_b]).unwrap().probs,
            vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(barycenter(&[]).unwrap_err(), Error::EmptyList);
    }

    #[test]
    fn wasserstein_examples() {
        let a = d(&[0.7, 0.3, 0.0, 0.0, 0.0, 0.0]);
        let b = d(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert!((wasserstein(&a, &b, &GroundMetric::Unit).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(wasserstein(&a, &a, &GroundMetric::Unit).unwrap(), 0.0);
        let one_a = d(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let one_f = d(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(wasserstein(&one_a, &one_f, &GroundMetric::Unit).unwrap(), 1.0);
        let axis = GroundMetric::Ordered(six());
        assert!((wasserstein(&one_a, &one_f, &axis).unwrap() - 5.0).abs() < 1e-12);
        let mut other = PartyDistribution::uniform(six(), Source::Survey);
        other.parties[0] = "Z".into();
        assert_eq!(
            wasserstein(&a, &other, &GroundMetric::Unit).unwrap_err(),
            Error::AxisMismatch
        );
        assert_eq!(
            wasserstein(&a, &b, &GroundMetric::Ordered(six()[..5].to_vec())).unwrap_err(),
            Error::AxisMismatch
        );
    }

    fn mass() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 6).prop_filter("non-zero", |v| v.iter().sum::<f64>() > 1e-3)
    }

    proptest! {
        #[test]
        fn entropy_in_unit_interval(m in mass()) {
            let h = d(&m).entropy();
            prop_assert!((0.0..=1.0).contains(&h));
        }

        #[test]
        fn psi_sums_to_one(m in proptest::collection::vec(-1.0f64..1.0, 6)) {
            if let Ok(p) = PartyDistribution::from_mass(six(), &m, Source::Latent) {
                prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(p.probs.iter().all(|&x| x >= 0.0));
            }
        }

        #[test]
        fn ordered_metric_axioms(x in mass(), y in mass(), z in mass()) {
            let axis = GroundMetric::Ordered(six());
            let (a, b, c) = (d(&x), d(&y), d(&z));
            let ab = wasserstein(&a, &b, &axis).unwrap();
            prop_assert!((ab - wasserstein(&b, &a, &axis).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= wasserstein(&a, &c, &axis).unwrap() + wasserstein(&c, &b, &axis).unwrap() + 1e-9);
            prop_assert!(wasserstein(&a, &a, &axis).unwrap() == 0.0);
        }
    }
}
