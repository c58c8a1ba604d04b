// SPDX-License-Identifier: MIT OR Apache-2.0

//! Final report, figure tables and invariant gates.

use std::collections::BTreeMap;
use std::fs;

use partylens_core::analytics::Coefficient;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::formats::{self, write_csv, write_json};
use crate::pipeline::{ExtractSummary, PersonaSummary, PsiEntry, RegressSummary, Run};

/// Prompts checked by the decomposition gate.
const DECOMPOSITION_PROMPTS: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyEntry {
    pub group: String,
    pub latent: Option<f64>,
    pub survey: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub party: String,
    pub layer: usize,
    pub val_f1: f64,
    pub recovery: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub parties: Vec<String>,
    pub probes: Vec<ProbeEntry>,
    pub mean_recovery: Option<f64>,
    pub personas: PersonaSummary,
    pub entropy: Vec<EntropyEntry>,
    pub psi: Vec<PsiEntry>,
    pub regression: Option<RegressSummary>,
    pub gates: Vec<Gate>,
    pub warnings: Vec<String>,
}

fn gate(name: &str, passed: bool, detail: impl Into<String>) -> Gate {
    Gate {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

/// Largest deviation between the MLP output and the sum of its weighted
/// value vectors, and between the recorded block update and the MLP output.
fn decomposition_error(run: &Run) -> Result<f64> {
    let (model, vocab) = run.model()?;
    let corpus = run.corpus()?;
    let mut worst = 0.0f64;
    for row in corpus.iter().take(DECOMPOSITION_PROMPTS) {
        let trace = model.forward(&vocab.encode(&row.prompt()))?.trace;
        let last = trace.seq_len() - 1;
        for l in 1..=model.config().n_layers {
            let x = trace.pre_mlp(l, last);
            let out = model.mlp(l, x)?;
            let mut sum = vec![0.0f64; out.len()];
            for u in model.mlp_sub_update(l, x)? {
                for (s, v) in sum.iter_mut().zip(u.value) {
                    *s += f64::from(u.coefficient) * f64::from(*v);
                }
            }
            let post = trace.post(l, last);
            for i in 0..out.len() {
                let scale = 1.0 + f64::from(out[i]).abs();
                worst = worst.max((f64::from(out[i]) - sum[i]).abs() / scale);
                let update = f64::from(post[i]) - f64::from(x[i]);
                worst = worst.max((update - f64::from(out[i])).abs() / scale);
            }
        }
    }
    Ok(worst)
}

pub fn build(run: &Run) -> Result<Vec<String>> {
    let hash = run.hash.as_str();
    let mut warnings = Vec::new();
    let mut gates = Vec::new();

    let extract: ExtractSummary = formats::read_json(&run.path("vectors/summary.json"), Some(hash))?;
    let personas: PersonaSummary = formats::read_json(&run.path("personas/summary.json"), Some(hash))?;
    let psi: Vec<PsiEntry> = formats::read_json(&run.path("psi.json"), Some(hash))?;
    let entropy_csv = formats::read_csv(&run.path("entropy.csv"), Some(hash))?;

    let mut entropy: BTreeMap<String, EntropyEntry> = BTreeMap::new();
    let mut order = Vec::new();
    let mut entropy_ok = true;
    for r in &entropy_csv.rows {
        let h: f64 = r[2]
            .parse()
            .map_err(|e| crate::error::CliError::bad("entropy.csv", e))?;
        entropy_ok &= (0.0..=1.0 + 1e-12).contains(&h);
        let e = entropy.entry(r[0].to_string()).or_insert_with(|| {
            order.push(r[0].to_string());
            EntropyEntry {
                group: r[0].to_string(),
                latent: None,
                survey: None,
            }
        });
        match &r[1] {
            "latent" => e.latent = Some(h),
            _ => e.survey = Some(h),
        }
    }
    let entropy: Vec<EntropyEntry> = order.iter().map(|g| entropy[g].clone()).collect();
    gates.push(gate(
        "entropy_range",
        entropy_ok,
        format!("{} rows", entropy_csv.rows.len()),
    ));

    let mut worst_sum = 0.0f64;
    for d in psi.iter().flat_map(|p| p.latent.iter().chain(p.survey.iter())) {
        worst_sum = worst_sum.max((d.probs.iter().sum::<f64>() - 1.0).abs());
    }
    gates.push(gate(
        "psi_sums",
        worst_sum <= 1e-9,
        format!("max |sum - 1| = {worst_sum:e}"),
    ));

    let dec = decomposition_error(run)?;
    gates.push(gate(
        "mlp_decomposition",
        dec <= 1e-4,
        format!("max relative error {dec:e}"),
    ));

    match &personas.survey {
        Some(s) => {
            let diff = (s.assigned_weight - s.matched_weight).abs();
            gates.push(gate(
                "weight_conservation",
                diff <= 1e-9 * s.matched_weight.abs().max(1.0),
                format!("assigned {} of matched {}", s.assigned_weight, s.matched_weight),
            ));
            if s.unmatched_rows > 0 {
                warnings.push(format!("{} survey rows matched no persona", s.unmatched_rows));
            }
        }
        None => gates.push(gate("weight_conservation", true, "no survey configured")),
    }

    let regression: Option<RegressSummary> = if run.cfg.stages.regress {
        let summary: RegressSummary = formats::read_json(&run.path("regression/summary.json"), Some(hash))?;
        let mut all_p_ok = true;
        let mut appendix: Vec<(String, Coefficient)> = Vec::new();
        for (n, party) in run.cfg.parties.iter().enumerate() {
            let path = run.path(&format!("regression/party_{n}.csv"));
            let t = formats::read_csv(&path, Some(hash))?;
            let p_col = t.require(&path, "p")?;
            all_p_ok &= t
                .rows
                .iter()
                .all(|r| r[p_col].parse::<f64>().is_ok_and(|p| (0.0..=1.0).contains(&p)));
            let s = summary.parties.iter().find(|s| &s.party == party);
            appendix.extend(
                s.into_iter()
                    .flat_map(|s| s.significant.iter().map(|c| (party.clone(), c.clone()))),
            );
        }
        gates.push(gate("p_values_in_unit_interval", all_p_ok, ""));
        warnings.extend(summary.warnings.iter().cloned());
        fs::create_dir_all(run.path("report"))?;
        write_csv(
            &run.path("report/appendix_b.csv"),
            Some(hash),
            &["party", "term", "estimate", "std_error", "t", "p"],
            appendix.iter().map(|(party, c)| {
                [
                    party.clone(),
                    c.term.clone(),
                    c.estimate.to_string(),
                    c.std_error.to_string(),
                    c.t.to_string(),
                    c.p.to_string(),
                ]
            }),
        )?;
        Some(summary)
    } else {
        None
    };

    fs::create_dir_all(run.path("report"))?;
    let mut outputs = Vec::new();
    if regression.is_some() {
        outputs.push("report/appendix_b.csv".to_string());
    }

    write_csv(
        &run.path("report/fig1_entropy.csv"),
        Some(hash),
        &["group", "latent", "survey"],
        entropy.iter().map(|e| {
            [
                e.group.clone(),
                e.latent.map_or_else(String::new, |h| h.to_string()),
                e.survey.map_or_else(String::new, |h| h.to_string()),
            ]
        }),
    )?;
    outputs.push("report/fig1_entropy.csv".into());

    let mut psi_rows = Vec::new();
    for p in &psi {
        for (source, d) in [("latent", &p.latent), ("survey", &p.survey)] {
            if let Some(d) = d {
                for (party, prob) in d.parties.iter().zip(&d.probs) {
                    psi_rows.push([p.group.clone(), source.to_string(), party.clone(), prob.to_string()]);
                }
            }
        }
    }
    write_csv(
        &run.path("report/fig2_psi.csv"),
        Some(hash),
        &["group", "source", "party", "prob"],
        psi_rows,
    )?;
    outputs.push("report/fig2_psi.csv".into());

    if run.cfg.stages.sensitivity {
        let rows = run.sensitivity_rows()?;
        if rows.is_empty() {
            warnings.push("sensitivity table is empty; scatter has no points".into());
        }
        write_csv(
            &run.path("report/fig4_scatter.csv"),
            Some(hash),
            &["group", "variant", "entropy", "wasserstein"],
            rows.iter().map(|r| {
                [
                    r.group.clone(),
                    r.variant.to_string(),
                    r.entropy.to_string(),
                    r.wasserstein.to_string(),
                ]
            }),
        )?;
        outputs.push("report/fig4_scatter.csv".into());
    }

    for g in gates.iter().filter(|g| !g.passed) {
        run.log
            .event("report", "gate-failed", &format!("{}: {}", g.name, g.detail));
    }

    let report = Report {
        seed: run.cfg.seed,
        parties: run.cfg.parties.clone(),
        probes: extract
            .parties
            .iter()
            .map(|e| ProbeEntry {
                party: e.party.clone(),
                layer: e.probe_layer,
                val_f1: e.val_f1,
                recovery: e.recovery,
            })
            .collect(),
        mean_recovery: extract.mean_recovery,
        personas,
        entropy,
        psi,
        regression,
        gates,
        warnings,
    };
    write_json(&run.path("report/report.json"), hash, &report)?;
    outputs.push("report/report.json".into());
    Ok(outputs)
}
