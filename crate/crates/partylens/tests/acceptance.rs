// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use partylens::config::RunConfig;
use partylens::container;
use partylens::formats;
use partylens::pipeline::{ExtractSummary, Logger, ProbeSidecar, Run, Stage};
use partylens::seed::stream_seed;
use partylens_core::analytics::special::t_cdf;
use partylens_core::analytics::{
    entropy, group_regression, ols, wasserstein, Design, GroundMetric, PartyDistribution, Source,
};
use partylens_core::corpus::{corpus_words, gen_corpus, party_keywords};
use partylens_core::model::{gen_toy_model, Model, ModelConfig, PlantSpec, Vocab};
use partylens_core::persona::{apply_weights, subsample, PersonaGrid, SurveyRow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn parties() -> Vec<String> {
    RunConfig::default().parties
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Toy model with the default desk shape and plant parameters.
fn toy_model(seed: u64) -> (Model, Vocab) {
    let cfg = RunConfig::default();
    let parties = cfg.parties.clone();
    let words = corpus_words(&parties);
    let vocab = Vocab::build(words.iter().map(String::as_str), parties.iter().map(String::as_str));
    let m = &cfg.model;
    let config = ModelConfig {
        n_layers: m.n_layers,
        d_model: m.d_model,
        d_mlp: m.d_mlp,
        n_heads: m.n_heads,
        vocab_size: vocab.len(),
        activation: m.activation,
        max_seq: m.max_seq,
    };
    let mut spec = PlantSpec::new(parties.clone(), m.k_plant);
    for (n, p) in parties.iter().enumerate() {
        spec.markers.extend(party_keywords(p).into_iter().map(|k| (k, n)));
    }
    let (model, _) = gen_toy_model(&config, &vocab, &spec, seed).expect("toy model");
    (model, vocab)
}

// ---- 1 ----

fn decomposition() -> Verdict {
    let start = Instant::now();
    let mut worst_def = 0.0f64;
    let mut worst_sub = 0.0f64;
    for seed in 0..20 {
        let (model, _) = toy_model(seed);
        let cfg = model.config().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        for _ in 0..100 {
            let x: Vec<f32> = (0..cfg.d_model).map(|_| normal(&mut rng) as f32).collect();
            for l in 1..=cfg.n_layers {
                let direct = model.mlp(l, &x).unwrap();
                let block = model.block(l).unwrap();
                // Definition: Σ relu(k_i·x) v_i, in f64.
                let mut oracle = vec![0.0f64; cfg.d_model];
                for i in 0..cfg.d_mlp {
                    let k = block.mlp_k.row(i);
                    let act = k
                        .iter()
                        .zip(&x)
                        .map(|(a, b)| f64::from(*a) * f64::from(*b))
                        .sum::<f64>()
                        .max(0.0);
                    for (o, v) in oracle.iter_mut().zip(block.mlp_v.row(i)) {
                        *o += act * f64::from(*v);
                    }
                }
                let mut sub = vec![0.0f64; cfg.d_model];
                for u in model.mlp_sub_update(l, &x).unwrap() {
                    for (s, v) in sub.iter_mut().zip(u.value) {
                        *s += f64::from(u.coefficient) * f64::from(*v);
                    }
                }
                for j in 0..cfg.d_model {
                    worst_def = worst_def.max((f64::from(direct[j]) - oracle[j]).abs());
                    worst_sub = worst_sub.max((f64::from(direct[j]) - sub[j]).abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst_def <= 1e-5 && worst_sub <= 1e-5 && secs < 30.0,
        format!("max |MLP - Σ m·v| = {worst_sub:.2e}, vs definition {worst_def:.2e}, {secs:.1}s"),
    )
}

// ---- 2 ----

fn linearity() -> Verdict {
    let models: Vec<_> = (0..20).map(toy_model).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let (model, _) = &models[trial % models.len()];
        let cfg = model.config();
        let x: Vec<f32> = (0..cfg.d_model).map(|_| normal(&mut rng) as f32).collect();
        let layer = rng.random_range(1..=cfg.n_layers);
        let index = rng.random_range(0..cfg.d_mlp);
        let token = rng.random_range(0..cfg.vocab_size);
        let m = rng.random_range(-3.0f32..3.0);
        let v = model.value_vector(layer, index).unwrap();
        let injected: Vec<f32> = x.iter().zip(v).map(|(a, b)| a + m * b).collect();
        let delta = f64::from(model.logits(&injected).unwrap()[token]) - f64::from(model.logits(&x).unwrap()[token]);
        let claimed = model.logit_effect(token, m, v).unwrap();
        // The unembedding is linear, so e_t·v is the logit of v itself.
        let oracle = f64::from(m) * f64::from(model.logits(v).unwrap()[token]);
        worst = worst.max((delta - claimed).abs()).max((claimed - oracle).abs());
    }
    verdict(
        worst <= 1e-5,
        format!("max logit deviation {worst:.2e} over 1000 trials"),
    )
}

// ---- 3, 4 ----

struct ProbeRuns {
    recoveries: Vec<f64>,
    min_auc: f64,
    worst: String,
    secs: f64,
}

/// Mann-Whitney AUC, ties counted half.
fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(s, _)| *s)
        .collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn probe_runs() -> &'static ProbeRuns {
    static RUNS: OnceLock<ProbeRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let tmp = tempfile::tempdir().unwrap();
        let mut recoveries = Vec::new();
        let mut min_auc = f64::INFINITY;
        let mut worst = String::new();
        for seed in 0..20u64 {
            let mut cfg = RunConfig {
                seed,
                out_dir: tmp.path().join(format!("seed{seed}")),
                ..RunConfig::default()
            };
            cfg.corpus.size = 300;
            let run = Run::new(
                cfg,
                false,
                Logger {
                    json: false,
                    quiet: true,
                },
            )
            .unwrap();
            for stage in [
                Stage::GenCorpus,
                Stage::GenToyModel,
                Stage::Record,
                Stage::TrainProbe,
                Stage::Extract,
            ] {
                run.execute(stage).unwrap();
            }
            let summary: ExtractSummary =
                formats::read_json(&run.path("vectors/summary.json"), Some(&run.hash)).unwrap();
            recoveries.push(summary.mean_recovery.unwrap());

            let (model, vocab) = run.model().unwrap();
            let held = gen_corpus(&run.cfg.parties, 120, 5, stream_seed(seed, "held-out")).unwrap();
            let traces: Vec<_> = held
                .iter()
                .map(|r| model.forward(&vocab.encode(&r.prompt())).unwrap().trace)
                .collect();
            for (n, party) in run.cfg.parties.iter().enumerate() {
                let store = container::read(&run.path(&format!("probes/party_{n}.tensors"))).unwrap();
                let side: ProbeSidecar =
                    formats::read_json(&run.path(&format!("probes/party_{n}.json")), Some(&run.hash)).unwrap();
                let w = store.get("weights").unwrap().data().to_vec();
                let scores: Vec<f64> = traces
                    .iter()
                    .map(|t| {
                        let x = t.mean_post(side.layer).unwrap();
                        w.iter()
                            .zip(&x)
                            .map(|(a, b)| f64::from(*a) * f64::from(*b))
                            .sum::<f64>()
                            + side.bias
                    })
                    .collect();
                let labels: Vec<bool> = held.iter().map(|r| r.party == *party).collect();
                let a = auc_oracle(&scores, &labels);
                if a < min_auc {
                    min_auc = a;
                    worst = format!("seed {seed}, {party}");
                }
            }
        }
        ProbeRuns {
            recoveries,
            min_auc,
            worst,
            secs: start.elapsed().as_secs_f64(),
        }
    })
}

fn recovery() -> Verdict {
    let r = probe_runs();
    let mean = r.recoveries.iter().sum::<f64>() / r.recoveries.len() as f64;
    let min = r.recoveries.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        mean >= 0.8 && r.secs < 300.0,
        format!("mean recovery {mean:.3} over 20 seeds (min {min:.3}), {:.1}s", r.secs),
    )
}

fn probe_quality() -> Verdict {
    let r = probe_runs();
    verdict(
        r.min_auc >= 0.95,
        format!("min held-out AUC {:.4} ({})", r.min_auc, r.worst),
    )
}

// ---- 5 ----

fn entropy_oracle() -> Verdict {
    let uniform = entropy(&[1.0 / 6.0; 6]);
    let one_hot = entropy(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    let half = entropy(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
    let expect_half = 1.0 / 6f64.log2();
    let via_dist = PartyDistribution::uniform(parties(), Source::Latent).entropy();
    verdict(
        (uniform - 1.0).abs() <= 1e-12
            && one_hot == 0.0
            && (half - expect_half).abs() <= 1e-6
            && (via_dist - 1.0).abs() <= 1e-12,
        format!("uniform {uniform}, one-hot {one_hot}, half/half {half:.9} (expected {expect_half:.9})"),
    )
}

// ---- 6 ----

/// Min-cost transport by successive shortest paths (Bellman-Ford) on the
/// bipartite flow network; independent of any closed form.
fn transport_oracle(a: &[f64], b: &[f64], cost: impl Fn(usize, usize) -> f64) -> f64 {
    struct Edge {
        to: usize,
        cap: f64,
        cost: f64,
    }
    let n = a.len();
    let (src, sink) = (2 * n, 2 * n + 1);
    let nodes = 2 * n + 2;
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let mut add = |edges: &mut Vec<Edge>, from: usize, to: usize, cap: f64, cost: f64| {
        adj[from].push(edges.len());
        edges.push(Edge { to, cap, cost });
        adj[to].push(edges.len());
        edges.push(Edge {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    };
    for i in 0..n {
        add(&mut edges, src, i, a[i], 0.0);
        add(&mut edges, n + i, sink, b[i], 0.0);
        for j in 0..n {
            add(&mut edges, i, n + j, f64::INFINITY, cost(i, j));
        }
    }
    let eps = 1e-15;
    let mut total = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via: Vec<Option<usize>> = vec![None; nodes];
        dist[src] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &adj[u] {
                    let ed = &edges[e];
                    if ed.cap > eps && dist[u] + ed.cost < dist[ed.to] - 1e-15 {
                        dist[ed.to] = dist[u] + ed.cost;
                        via[ed.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            return total;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while let Some(e) = via[v] {
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while let Some(e) = via[v] {
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            total += push * edges[e].cost;
            v = edges[e ^ 1].to;
        }
    }
}

fn random_dist(rng: &mut ChaCha8Rng) -> PartyDistribution {
    let mass: Vec<f64> = (0..6)
        .map(|_| if rng.random_bool(0.15) { 0.0 } else { Exp1.sample(rng) })
        .collect();
    if mass.iter().all(|m| *m == 0.0) {
        return PartyDistribution::uniform(parties(), Source::Latent);
    }
    PartyDistribution::from_mass(parties(), &mass, Source::Latent).unwrap()
}

fn wasserstein_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let axis = RunConfig::default().analytics.axis;
    let ordered = GroundMetric::Ordered(axis.clone());
    let pos: Vec<usize> = parties()
        .iter()
        .map(|p| axis.iter().position(|a| a == p).unwrap())
        .collect();
    let mut worst_unit = 0.0f64;
    let mut worst_ordered = 0.0f64;
    for _ in 0..500 {
        let (a, b) = (random_dist(&mut rng), random_dist(&mut rng));
        let unit = wasserstein(&a, &b, &GroundMetric::Unit).unwrap();
        let flow = transport_oracle(&a.probs, &b.probs, |i, j| if i == j { 0.0 } else { 1.0 });
        worst_unit = worst_unit.max((unit - flow).abs());
        let ord = wasserstein(&a, &b, &ordered).unwrap();
        let flow = transport_oracle(&a.probs, &b.probs, |i, j| pos[i].abs_diff(pos[j]) as f64);
        worst_ordered = worst_ordered.max((ord - flow).abs());
    }
    let mut axiom_failures = 0;
    for _ in 0..100 {
        let (a, b, c) = (random_dist(&mut rng), random_dist(&mut rng), random_dist(&mut rng));
        for g in [&GroundMetric::Unit, &ordered] {
            let d = |x: &PartyDistribution, y: &PartyDistribution| wasserstein(x, y, g).unwrap();
            let ok = d(&a, &a) == 0.0
                && d(&a, &b) == d(&b, &a)
                && d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12
                && (a.probs == b.probs || d(&a, &b) > 0.0)
                && d(&a, &b) >= 0.0;
            axiom_failures += usize::from(!ok);
        }
    }
    verdict(
        worst_unit <= 1e-9 && axiom_failures == 0,
        format!(
            "unit vs transport LP {worst_unit:.2e} (ordered {worst_ordered:.2e}), axiom failures {axiom_failures}/200"
        ),
    )
}

// ---- 7 ----

/// Solves the normal equations `XᵀX β = Xᵀy` with partial pivoting.
fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, yi) in x.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * yi;
        }
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                let pivot_row = a[col].clone();
                for (x, y) in a[r].iter_mut().zip(pivot_row).skip(col) {
                    *x -= f * y;
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

/// Binomial(n, p) quantile: smallest k with P(X ≤ k) ≥ q.
fn binom_quantile(n: usize, p: f64, q: f64) -> usize {
    let mut cdf = 0.0;
    for k in 0..=n {
        let ln_pmf = ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln();
        cdf += ln_pmf.exp();
        if cdf >= q {
            return k;
        }
    }
    n
}

fn ln_choose(n: usize, k: usize) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

// mpmath reference values, 17 significant digits.
#[allow(clippy::excessive_precision)]
const T_TABLE: [(f64, f64, f64); 48] = [
    (1.0, -3.5, 0.088585532782904749),
    (1.0, -1.0, 0.25),
    (1.0, 0.25, 0.57797913037736933),
    (1.0, 1.96, 0.84982855411198343),
    (1.0, 2.5, 0.8788810584091566),
    (1.0, 6.0, 0.94743154328874657),
    (2.0, -3.5, 0.036413675027234668),
    (2.0, -1.0, 0.21132486540518712),
    (2.0, 0.25, 0.58703882797784892),
    (2.0, 1.96, 0.90547134519913387),
    (2.0, 2.5, 0.9351941398892446),
    (2.0, 6.0, 0.98666426339228761),
    (3.0, -3.5, 0.0197405188096414),
    (3.0, -1.0, 0.19550110947788532),
    (3.0, 0.25, 0.59063538878558521),
    (3.0, 1.96, 0.92757389571757317),
    (3.0, 2.5, 0.95614667649596723),
    (3.0, 6.0, 0.99536364255385767),
    (5.0, -3.5, 0.0086422158926466773),
    (5.0, -1.0, 0.18160873382456131),
    (5.0, 0.25, 0.59373293462793832),
    (5.0, 1.96, 0.94635602374735291),
    (5.0, 2.5, 0.97275495032881188),
    (5.0, 6.0, 0.99907693085520299),
    (10.0, -3.5, 0.0028632527149426079),
    (10.0, -1.0, 0.17044656615102994),
    (10.0, 0.25, 0.59617589713169299),
    (10.0, 1.96, 0.96078187987615014),
    (10.0, 2.5, 0.9842765778816956),
    (10.0, 6.0, 0.99993394556982261),
    (30.0, -3.5, 0.00073840371882212653),
    (30.0, -1.0, 0.16265430771301495),
    (30.0, 0.25, 0.59785429545971245),
    (30.0, 1.96, 0.97032884355197476),
    (30.0, 2.5, 0.99094217546596665),
    (30.0, 6.0, 0.99999930286156164),
    (100.0, -3.5, 0.00034821385867813446),
    (100.0, -1.0, 0.15986207789206168),
    (100.0, 0.25, 0.5984498939233898),
    (100.0, 1.96, 0.97361054931688517),
    (100.0, 2.5, 0.99297710543796141),
    (100.0, 6.0, 0.99999998413754249),
    (978.0, -3.5, 0.00024312116775594006),
    (978.0, -1.0, 0.15877892921802332),
    (978.0, 0.25, 0.59868007441738656),
    (978.0, 1.96, 0.97486028632788938),
    (978.0, 2.5, 0.99370892064846083),
    (978.0, 6.0, 0.99999999861217349),
];

fn ols_oracle() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let n = 30 + seed as usize;
        let names = ["intercept", "a", "b", "c", "d"].map(String::from).to_vec();
        let mut design = Design::new(names);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a = normal(&mut rng);
            let b = 0.5 * a + normal(&mut rng);
            let row = vec![1.0, a, b, normal(&mut rng) * 3.0, rng.random_range(0.0..10.0)];
            y.push(1.5 - 2.0 * row[1] + 0.3 * row[2] + 0.05 * row[3] + 0.7 * row[4] + normal(&mut rng));
            design.push_row(&row).unwrap();
            rows.push(row);
        }
        let fit = ols(&y, &design).unwrap();
        let reference = normal_equations(&rows, &y);
        for (c, r) in fit.coefficients.iter().zip(&reference) {
            worst = worst.max((c.estimate - r).abs());
        }
    }

    let mut exact = Design::new(vec!["intercept".into(), "x".into()]);
    let mut y = Vec::new();
    for i in 0..12 {
        exact.push_row(&[1.0, f64::from(i)]).unwrap();
        y.push(2.0 + 3.0 * f64::from(i));
    }
    let fit = ols(&y, &exact).unwrap();
    let exact_ok =
        fit.r_squared == 1.0 && fit.get("intercept").unwrap().estimate == 2.0 && fit.get("x").unwrap().estimate == 3.0;

    let worst_t = T_TABLE
        .iter()
        .map(|&(dof, t, p)| (t_cdf(t, dof) - p).abs())
        .fold(0.0f64, f64::max);

    let grid = PersonaGrid::german_election(true);
    let all = grid.enumerate();
    let (mut hits, mut tests) = (0usize, 0usize);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let sample = subsample(&all, 400, stream_seed(seed, "null"));
        let obs: Vec<_> = sample.iter().map(|p| (p, normal(&mut rng))).collect();
        let r = group_regression(&grid, &obs, 0.05).unwrap();
        hits += r.significant.len();
        tests += r.full.coefficients.len() - 1;
    }
    let (lo, hi) = (binom_quantile(tests, 0.05, 0.005), binom_quantile(tests, 0.05, 0.995));

    verdict(
        worst <= 1e-8 && exact_ok && worst_t <= 1e-6 && (lo..=hi).contains(&hits),
        format!(
            "coef vs normal equations {worst:.2e}; exact fit {}; t-CDF table {worst_t:.2e}; null hits {hits}/{tests} in [{lo}, {hi}]",
            if exact_ok { "exact" } else { "inexact" }
        ),
    )
}

// ---- 8 ----

fn persona_grid() -> Verdict {
    let cards = [7usize, 2, 5, 3, 3, 5, 2];
    let product: usize = cards.iter().product();
    let without = PersonaGrid::german_election(false);
    let with = PersonaGrid::german_election(true);
    let counts_ok = without.enumerate().len() == 6300
        && with.enumerate().len() == 12600
        && product == 6300
        && without.cardinalities() == cards
        && with.cardinalities()[..7] == cards
        && with.cardinalities()[7] == 2;

    let mut worst = 0.0f64;
    let shipped = formats::read_survey(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("data/survey_example.csv"),
        &with,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let random: Vec<SurveyRow> = (0..5000)
        .map(|_| SurveyRow {
            values: with
                .variables()
                .iter()
                .map(|(_, v)| v[rng.random_range(0..v.len())].clone())
                .collect(),
            weight: Exp1.sample(&mut rng),
            vote: None,
        })
        .collect();
    for rows in [&shipped, &random] {
        let mut personas = with.enumerate();
        let s = apply_weights(&with, &mut personas, rows).unwrap();
        let assigned: f64 = personas.iter().map(|p| p.weight).sum();
        let input: f64 = rows.iter().map(|r| r.weight).sum();
        worst = worst
            .max((assigned - s.matched_weight).abs())
            .max((assigned - input).abs());
    }
    verdict(
        counts_ok && worst <= 1e-9,
        format!(
            "{} / {} personas, weight drift {worst:.2e}",
            without.size(),
            with.size()
        ),
    )
}

// ---- 9, 10 ----

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

struct DeskRuns {
    _tmp: tempfile::TempDir,
    first: PathBuf,
    identical: bool,
    files: usize,
    slowest: Duration,
}

fn desk_runs() -> &'static DeskRuns {
    static RUNS: OnceLock<DeskRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/desk.toml");
        let mut slowest = Duration::ZERO;
        let dirs = [tmp.path().join("a"), tmp.path().join("b")];
        for dir in &dirs {
            let start = Instant::now();
            let out = Command::new(env!("CARGO_BIN_EXE_partylens"))
                .env("RAYON_NUM_THREADS", "1")
                .args(["run-all", "--config"])
                .arg(&config)
                .arg("--out")
                .arg(dir)
                .output()
                .unwrap();
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            slowest = slowest.max(start.elapsed());
        }
        let (a, b) = (snapshot(&dirs[0]), snapshot(&dirs[1]));
        DeskRuns {
            identical: a == b,
            files: a.len(),
            first: dirs[0].clone(),
            _tmp: tmp,
            slowest,
        }
    })
}

fn determinism() -> Verdict {
    let r = desk_runs();
    verdict(
        r.identical && r.slowest < Duration::from_secs(600),
        format!(
            "{} artifacts {}, slowest single-thread run {:.1}s",
            r.files,
            if r.identical { "byte-identical" } else { "DIFFER" },
            r.slowest.as_secs_f64()
        ),
    )
}

fn directional() -> Verdict {
    let r = desk_runs();
    let psi: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.first.join("psi.json")).unwrap()).unwrap();
    let latent = |group: &str| -> PartyDistribution {
        let entry = psi["data"]
            .as_array()
            .unwrap()
            .iter()
            .find(|e| e["group"] == group)
            .unwrap();
        serde_json::from_value(entry["latent"].clone()).unwrap()
    };
    let (all, left) = (latent("all"), latent("left_leaning=stark links"));
    let (m_all, m_left) = (all.prob("LINKE").unwrap(), left.prob("LINKE").unwrap());
    let (h_all, h_left) = (all.entropy(), left.entropy());
    verdict(
        m_left > m_all && h_left < h_all,
        format!("LINKE mass {m_left:.3} vs {m_all:.3} overall; entropy {h_left:.3} vs {h_all:.3}"),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("MLP decomposition", decomposition),
        ("sub-update logit linearity", linearity),
        ("planted-vector recovery", recovery),
        ("probe held-out AUC", probe_quality),
        ("entropy oracle", entropy_oracle),
        ("Wasserstein oracle", wasserstein_oracle),
        ("OLS oracle", ols_oracle),
        ("persona grid", persona_grid),
        ("end-to-end determinism", determinism),
        ("directional sanity", directional),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let v = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!(
            "criterion {:>2} {}: {} - {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            name,
            v.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
