//! Acceptance suite. Runs every criterion in order and prints one line each.
//!
//! `cargo test -p realm-core --test acceptance` runs all of them; extra
//! arguments select criteria by number, e.g. `-- 1 4`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use realm::config::RunConfig;
use realm::ehr::{generate_synthetic_cohort, CohortConfig};
use realm::embedding::{trigram_embed, TrigramEmbedder, DEFAULT_TRIGRAM_DIM};
use realm::entity::{normalize, Entity, EntitySet, Provenance};
use realm::experiment::{
    load_dataset, prepare_splits, rag_variants, run_cell, run_experiment, sparse_train_set, Backends, CellResult,
    ExperimentKind, PreparedSplits,
};
use realm::fixtures;
use realm::fusion::{FusionKind, InputDims, Model, ModelConfig, ModelInput};
use realm::importance::{entity_importance, ImportanceConfig};
use realm::kg::{build_index, cosine, match_entity};
use realm::metrics::{auprc, auroc, bce_loss, bootstrap_metrics, f1, min_p_se, Stat};
use realm::nn::{max_relative_error, numeric_grads};
use realm::par::Execution;
use realm::text_rag::{extract_entities_loop, parse_entities, ExtractionConfig, Extractor, LexiconExtractor};
use realm::ts_rag::zscore;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- criterion 1

fn brute_auroc(s: &[f64], y: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                den += 1.0;
                num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

/// Precision and recall of `score >= t` for every distinct threshold, highest first.
fn pr_curve(s: &[f64], y: &[u8]) -> Vec<(f64, f64)> {
    let mut thr: Vec<f64> = s.to_vec();
    thr.sort_by(|a, b| b.total_cmp(a));
    thr.dedup();
    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    thr.iter()
        .map(|&t| {
            let flagged: Vec<usize> = (0..s.len()).filter(|&i| s[i] >= t).collect();
            let tp = flagged.iter().filter(|&&i| y[i] == 1).count() as f64;
            (tp / flagged.len() as f64, tp / pos)
        })
        .collect()
}

fn brute_auprc(s: &[f64], y: &[u8]) -> f64 {
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (p, r) in pr_curve(s, y) {
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

fn brute_min_p_se(s: &[f64], y: &[u8]) -> f64 {
    pr_curve(s, y).into_iter().map(|(p, r)| p.min(r)).fold(0.0, f64::max)
}

fn brute_f1(s: &[f64], y: &[u8], t: f64) -> f64 {
    let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i] == 1).count() as f64;
    let fp = (0..s.len()).filter(|&i| s[i] >= t && y[i] == 0).count() as f64;
    let fn_ = (0..s.len()).filter(|&i| s[i] < t && y[i] == 1).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let (p, r) = (tp / (tp + fp), tp / (tp + fn_));
    2.0 * p * r / (p + r)
}

fn random_scored(rng: &mut ChaCha8Rng, ties: bool) -> (Vec<f64>, Vec<u8>) {
    loop {
        let n = rng.random_range(2..40);
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        if !(y.contains(&0) && y.contains(&1)) {
            continue;
        }
        let s = (0..n)
            .map(|i| {
                let v = rng.random_range(0.0..1.0) + 0.3 * f64::from(y[i]);
                if ties { (v * 4.0).round() / 4.0 } else { v }
            })
            .collect();
        return (s, y);
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let tol = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = [0usize; 7];

    let z_cases = [(10.0, 5.0, 2.5, 2.0), (5.0, 5.0, 2.5, 0.0), (12.0, 5.0, 2.5, 2.8), (60.0, 13.5, 3.25, 14.307_692_307_692_308)];
    for (v, m, s, want) in z_cases {
        ensure!(close(zscore(v, m, s).unwrap(), want, tol), "zscore({v},{m},{s})");
        counts[0] += 1;
    }
    for _ in 0..10 {
        let (v, m, s) = (rng.random_range(-100.0..100.0), rng.random_range(-50.0..50.0), rng.random_range(0.01..20.0));
        ensure!(close(zscore(v, m, s).unwrap(), (v - m) / s, tol), "zscore random");
        counts[0] += 1;
    }
    ensure!(zscore(1.0, 0.0, 0.0).is_err() && zscore(1.0, 0.0, -1.0).is_err(), "zscore accepts std <= 0");

    let cos_cases: [(&[f64], &[f64], f64); 4] = [
        (&[1.0, 1.0, 0.0], &[1.0, 0.0, 1.0], 0.5),
        (&[1.0, 0.0], &[0.0, 1.0], 0.0),
        (&[3.0, 4.0], &[3.0, 4.0], 1.0),
        (&[1.0, 2.0], &[-2.0, -4.0], -1.0),
    ];
    for (u, v, want) in cos_cases {
        ensure!(close(cosine(u, v).unwrap(), want, tol), "cosine({u:?},{v:?})");
        counts[1] += 1;
    }
    for _ in 0..10 {
        let d = rng.random_range(1..12);
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let want = dot / (u.iter().map(|a| a * a).sum::<f64>().sqrt() * v.iter().map(|a| a * a).sum::<f64>().sqrt());
        ensure!(close(cosine(&u, &v).unwrap(), want, tol), "cosine random");
        ensure!(close(cosine(&u, &v).unwrap(), cosine(&v, &u).unwrap(), 1e-15), "cosine asymmetric");
        counts[1] += 1;
    }
    ensure!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err(), "zero vector accepted");

    let bce_cases: [(&[f64], &[f64], f64); 3] = [
        (&[0.5], &[1.0], std::f64::consts::LN_2),
        (&[0.9, 0.1], &[1.0, 0.0], -0.5 * (0.9f64.ln() + 0.9f64.ln())),
        (&[0.2, 0.7, 0.6], &[0.0, 1.0, 0.0], -(0.8f64.ln() + 0.7f64.ln() + 0.4f64.ln()) / 3.0),
    ];
    for (p, y, want) in bce_cases {
        ensure!(close(bce_loss(p, y).unwrap(), want, tol), "bce({p:?},{y:?})");
        counts[2] += 1;
    }
    ensure!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 1e-6, "clamped exact predictions");
    counts[2] += 1;
    for _ in 0..10 {
        let n = rng.random_range(1..20);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        let want = -p.iter().zip(&y).map(|(p, y)| y * p.ln() + (1.0 - y) * (1.0 - p).ln()).sum::<f64>() / n as f64;
        ensure!(close(bce_loss(&p, &y).unwrap(), want, tol), "bce random");
        counts[2] += 1;
    }
    ensure!(bce_loss(&[0.5], &[1.0, 0.0]).is_err(), "bce length mismatch accepted");

    let hand: [(&[f64], &[u8]); 4] = [
        (&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]),
        (&[0.2, 0.9], &[1, 0]),
        (&[0.4, 0.6], &[1, 0]),
        (&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]),
    ];
    ensure!(auroc(hand[0].0, hand[0].1).unwrap() == 0.75, "auroc hand example");
    ensure!(close(auprc(hand[1].0, hand[1].1).unwrap(), 0.5, tol), "auprc hand example");
    ensure!(close(min_p_se(hand[2].0, hand[2].1).unwrap(), 0.5, tol), "min_p_se hand example");
    ensure!(close(min_p_se(hand[3].0, hand[3].1).unwrap(), 0.5, tol), "min_p_se ties example");
    ensure!(close(f1(&[1.0, 0.0, 0.0], &[1, 1, 0], 0.5).unwrap(), 2.0 / 3.0, tol), "f1 hand example");
    ensure!(f1(&[0.1, 0.2], &[1, 0], 0.5).unwrap() == 0.0, "f1 with no predicted positives");
    ensure!(auroc(&[0.1, 0.2], &[1, 1]).is_err() && auprc(&[0.1], &[0]).is_err(), "single class accepted");
    counts[3] += 1;
    counts[4] += 1;
    counts[5] += 2;
    counts[6] += 2;
    for (s, y) in hand {
        ensure!(close(auroc(s, y).unwrap(), brute_auroc(s, y), tol), "auroc vs oracle on {s:?}");
        ensure!(close(auprc(s, y).unwrap(), brute_auprc(s, y), tol), "auprc vs oracle on {s:?}");
        ensure!(close(min_p_se(s, y).unwrap(), brute_min_p_se(s, y), tol), "min_p_se vs oracle on {s:?}");
        counts[3] += 1;
        counts[4] += 1;
        counts[5] += 1;
    }
    for i in 0..40 {
        let (s, y) = random_scored(&mut rng, i % 2 == 0);
        let t = rng.random_range(0.2..1.0);
        ensure!(close(auroc(&s, &y).unwrap(), brute_auroc(&s, &y), tol), "auroc random {s:?}");
        ensure!(close(auprc(&s, &y).unwrap(), brute_auprc(&s, &y), tol), "auprc random {s:?}");
        ensure!(close(min_p_se(&s, &y).unwrap(), brute_min_p_se(&s, &y), tol), "min_p_se random {s:?}");
        ensure!(close(f1(&s, &y, t).unwrap(), brute_f1(&s, &y, t), tol), "f1 random {s:?} at {t}");
        counts[3] += 1;
        counts[4] += 1;
        counts[5] += 1;
        counts[6] += 1;
    }
    ensure!(counts.iter().all(|&c| c >= 10), "too few cases: {counts:?}");
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(1), "took {took:?}");
    Ok(format!("cases per formula {counts:?}, {took:.2?}"))
}

// ---------------------------------------------------------------- criterion 2

fn grad_input(rng: &mut ChaCha8Rng, t: usize, f: usize, dtext: usize) -> ModelInput {
    let mut m = |r: usize, c: usize| realm::nn::Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
    let ts = m(t, f);
    let notes = m(t, dtext);
    let rag = m(2, dtext);
    ModelInput {
        ts,
        times: (0..t).map(|i| 5.0 * i as f64).collect(),
        notes,
        note_present: vec![true; t],
        rag_ts: rag.row(0).to_vec(),
        rag_text: rag.row(1).to_vec(),
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let (f, dtext, t) = (3, 6, 4);
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let cfg = ModelConfig { d: 8, heads: 2, ff_mult: 2, time_freqs: 2, fusion: FusionKind::Attention, ..Default::default() };
        let mut model = Model::new(cfg, InputDims { n_features: f, text_dim: dtext }, &mut rng).unwrap();
        if let Some(a) = model.alpha_param() {
            model.params.value_mut(a)[[0, 0]] = rng.random_range(-1.0..1.0);
        }
        let xs = [grad_input(&mut rng, t, f, dtext), grad_input(&mut rng, t, f, dtext)];
        let batch: Vec<(&ModelInput, f64)> = vec![(&xs[0], 1.0), (&xs[1], 0.0)];
        let (_, analytic) = model.loss_and_grad(&batch, Execution::Sequential).unwrap();
        let numeric = numeric_grads(&model.params, 1e-5, |p| {
            let mut probe = model.clone();
            probe.params = p.clone();
            probe.loss(&batch).unwrap()
        });
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        worst = worst.max(err);
        ensure!(err < 1e-4, "seed {seed}: max relative error {err:.3e}");
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(60), "took {took:?}");
    Ok(format!("5 seeds, worst relative error {worst:.2e}, {took:.2?}"))
}

// ---------------------------------------------------------------- criterion 3

/// Answers honestly, then pads each answer with as many fabrications as real hits.
struct Fabricator {
    inner: LexiconExtractor,
    pool: Vec<String>,
    rng: Mutex<ChaCha8Rng>,
    injected: Mutex<usize>,
}

impl Extractor for Fabricator {
    fn complete(&self, prompt: &str, text: &str) -> realm::Result<String> {
        let mut out = parse_entities(&self.inner.complete(prompt, text)?);
        let mut rng = self.rng.lock().unwrap();
        let hay = normalize(text);
        let wanted = out.len().max(1);
        let mut added = 0;
        while added < wanted {
            let fake = match rng.random_range(0..3) {
                0 => self.pool.choose(&mut *rng).unwrap().clone(),
                1 => format!("acute {}", out.first().cloned().unwrap_or_else(|| "sepsis".into())),
                _ => (0..rng.random_range(4..12)).map(|_| char::from(rng.random_range(b'a'..=b'z'))).collect(),
            };
            if hay.contains(&normalize(&fake)) {
                continue;
            }
            out.push(fake);
            added += 1;
        }
        *self.injected.lock().unwrap() += added;
        Ok(serde_json::json!({ "entities": out }).to_string())
    }

    fn is_disease(&self, surfaces: &[String]) -> realm::Result<Vec<bool>> {
        Ok(vec![true; surfaces.len()])
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let ds = generate_synthetic_cohort(&CohortConfig { n_patients: 400, t_min: 2, t_max: 6, seed: 3, ..Default::default() }).unwrap();
    let notes: Vec<String> = ds.patients.iter().flat_map(|p| p.notes.iter().flatten().cloned()).take(100).collect();
    ensure!(notes.len() == 100, "only {} notes generated", notes.len());
    let vocab = fixtures::note_vocabulary();
    let pool: Vec<String> = vocab.dangerous.iter().chain(&vocab.benign).map(|s| s.to_string()).collect();
    let ex = Fabricator {
        inner: LexiconExtractor::new(fixtures::lexicon()),
        pool,
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(3)),
        injected: Mutex::new(0),
    };
    let emb = TrigramEmbedder::new(DEFAULT_TRIGRAM_DIM).unwrap();
    let cfg = ExtractionConfig::default();
    let (mut kept, mut bad) = (0, Vec::new());
    for note in &notes {
        let out = extract_entities_loop(&ex, &emb, &cfg, note).unwrap();
        let hay = normalize(note);
        for e in out.entities.iter() {
            kept += 1;
            if !hay.contains(&normalize(&e.surface)) {
                bad.push(e.surface.clone());
            }
        }
    }
    let injected = *ex.injected.lock().unwrap();
    ensure!(bad.is_empty(), "{} fabricated entities survived: {:?}", bad.len(), &bad[..bad.len().min(5)]);
    ensure!(injected >= 100 && kept > 0, "vacuous run: injected {injected}, kept {kept}");
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(10), "took {took:?}");
    Ok(format!("100 notes, {injected} fabrications injected, 0 survived, {kept} genuine kept, {took:.2?}"))
}

// ---------------------------------------------------------------- criterion 4

fn random_query(rng: &mut ChaCha8Rng, names: &[String]) -> String {
    let letters = b"abcdefghijklmnopqrstuvwxyz ";
    match rng.random_range(0..4) {
        0 => (0..rng.random_range(1..25)).map(|_| char::from(*letters.choose(rng).unwrap())).collect(),
        1 => names.choose(rng).unwrap().clone(),
        _ => {
            let mut s: Vec<u8> = names.choose(rng).unwrap().bytes().collect();
            for _ in 0..rng.random_range(1..4) {
                let i = rng.random_range(0..s.len());
                match rng.random_range(0..3) {
                    0 => s[i] = *letters.choose(rng).unwrap(),
                    1 if s.len() > 1 => {
                        s.remove(i);
                    }
                    _ => s.insert(i, *letters.choose(rng).unwrap()),
                }
            }
            String::from_utf8(s).unwrap()
        }
    }
}

fn criterion_4() -> Outcome {
    let kg = fixtures::mini_kg();
    ensure!(kg.len() == 50, "toy KG has {} nodes", kg.len());
    let emb = TrigramEmbedder::new(DEFAULT_TRIGRAM_DIM).unwrap();
    let index = build_index(&kg, &emb).unwrap();
    let names: Vec<String> = kg.nodes().iter().map(|n| n.name.clone()).collect();
    let node_vecs: Vec<(String, Vec<f32>)> =
        kg.nodes().iter().map(|n| (n.id.clone(), trigram_embed(&n.name, DEFAULT_TRIGRAM_DIM))).collect();
    let etas = [0.5, 0.7, 0.85, 0.95];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = [0usize; 4];
    for _ in 0..1000 {
        let q = random_query(&mut rng, &names);
        let qv = trigram_embed(&q, DEFAULT_TRIGRAM_DIM);
        // Exhaustive scan with its own dot products.
        let sims: Vec<(f64, &str)> = node_vecs
            .iter()
            .map(|(id, v)| {
                let dot: f64 = v.iter().zip(&qv).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                let n = |x: &[f32]| x.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
                (dot / (n(v) * n(&qv)), id.as_str())
            })
            .collect();
        let top = sims.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let best_id = sims.iter().filter(|s| s.0 == top).map(|s| s.1).min().unwrap();
        let mut prev: Option<bool> = None;
        for (k, &eta) in etas.iter().enumerate() {
            let got = match_entity(&q, &index, &emb, eta).unwrap();
            let near_eta = (top - eta).abs() < 1e-9;
            match &got {
                Some(m) => {
                    ensure!(top >= eta || near_eta, "{q:?} at {eta}: matched {} below threshold", m.node_id);
                    let their = sims.iter().find(|s| s.1 == m.node_id).unwrap().0;
                    ensure!(m.node_id == best_id || (top - their).abs() < 1e-9, "{q:?} at {eta}: {} vs oracle {best_id}", m.node_id);
                    ensure!(close(m.similarity, top, 1e-9), "{q:?}: similarity {} vs {top}", m.similarity);
                    counts[k] += 1;
                }
                None => ensure!(top < eta || near_eta, "{q:?} at {eta}: oracle matches {best_id} at {top}"),
            }
            if let Some(false) = prev {
                ensure!(got.is_none(), "{q:?}: matched at {eta} but not at a lower threshold");
            }
            prev = Some(got.is_some());
        }
    }
    ensure!(counts.windows(2).all(|w| w[0] >= w[1]), "match counts not monotone: {counts:?}");
    ensure!(counts[3] > 0, "no matches at the strictest threshold");
    Ok(format!("1000 queries agree with the exhaustive scan; matches per eta {counts:?}"))
}

// ------------------------------------------------------------ criteria 5 to 7

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn cohort_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig { seed, ..Default::default() };
    cfg.data.generate.n_patients = 2000;
    cfg.data.generate.t_max = 16;
    cfg.data.generate.seed = seed;
    cfg.embedder.dim = 64;
    cfg.model.d = 16;
    cfg.model.heads = 2;
    cfg.model.ff_mult = 2;
    cfg.train.batch_size = 32;
    cfg.train.lr = 2e-3;
    cfg
}

struct SeedRun {
    cfg: RunConfig,
    splits: PreparedSplits,
    /// TS, TS+RAG_TS, Text, Text+RAG_Text, full.
    cells: Vec<CellResult>,
}

fn seed_runs() -> &'static [SeedRun] {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                let cfg = cohort_config(seed);
                let ds = load_dataset(&cfg).unwrap();
                let backends = Backends::from_config(&cfg).unwrap();
                let splits = prepare_splits(&cfg, &ds, &backends).unwrap();
                let cells = rag_variants(&cfg.model)
                    .iter()
                    .map(|v| run_cell(&cfg, v, &splits.train, &splits, None).unwrap())
                    .collect();
                SeedRun { cfg, splits, cells }
            })
            .collect()
    })
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_auroc(label: &str) -> f64 {
    mean(seed_runs().iter().map(|r| r.cells.iter().find(|c| c.label == label).unwrap().report.auroc.mean))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let runs = seed_runs();
    let per_seed: Vec<String> = runs.iter().map(|r| format!("{:.3}", r.cells[4].report.auroc.mean)).collect();
    let (full, ts) = (mean_auroc("REALM"), mean_auroc("TS"));
    let took = start.elapsed();
    let detail = format!("full {full:.4} (seeds {}), TS only {ts:.4}, gap {:.4}, {took:.0?}", per_seed.join(" "), full - ts);
    ensure!(full >= 0.90, "full AUROC below 0.90: {detail}");
    ensure!(full - ts >= 0.02, "gap over TS only below 0.02: {detail}");
    Ok(detail)
}

fn criterion_6() -> Outcome {
    let m: Vec<(&str, f64)> =
        ["TS", "Text", "TS+RAG_TS", "Text+RAG_Text", "REALM"].iter().map(|&l| (l, mean_auroc(l))).collect();
    let detail = m.iter().map(|(l, v)| format!("{l} {v:.4}")).collect::<Vec<_>>().join(", ");
    let (plain, rag, full) = (m[0].1.max(m[1].1), m[2].1.min(m[3].1), m[4].1);
    ensure!(full >= m[2].1.max(m[3].1), "full below a RAG variant: {detail}");
    ensure!(rag >= plain, "a RAG variant below a plain variant: {detail}");
    Ok(detail)
}

fn criterion_7() -> Outcome {
    let fractions = [0.0, 0.2, 0.4, 0.6, 0.8];
    let runs = seed_runs();
    let mut auprcs = vec![Vec::new(); fractions.len()];
    let mut stds = vec![Vec::new(); fractions.len()];
    let mut prevalence = Vec::new();
    for r in runs {
        let full = &r.cells[4];
        let variant = &rag_variants(&r.cfg.model)[4];
        for (k, &f) in fractions.iter().enumerate() {
            let report = if f == 0.0 {
                full.report.clone()
            } else {
                let set = sparse_train_set(&r.cfg, &r.splits, f).unwrap();
                run_cell(&r.cfg, variant, &set, &r.splits, Some(f)).unwrap().report
            };
            auprcs[k].push(report.auprc.mean);
            stds[k].push(report.auprc.std);
        }
        let pos = r.splits.test.iter().filter(|p| p.label_mortality == 1).count();
        prevalence.push(pos as f64 / r.splits.test.len() as f64);
    }
    let m: Vec<f64> = auprcs.iter().map(|v| mean(v.iter().copied())).collect();
    let s: Vec<f64> = stds.iter().map(|v| mean(v.iter().copied())).collect();
    let floor = mean(prevalence);
    let detail = format!(
        "AUPRC by drop fraction {}, prevalence {floor:.3}",
        fractions.iter().zip(m.iter().zip(&s)).map(|(f, (m, s))| format!("{f}:{m:.3}±{s:.3}")).collect::<Vec<_>>().join(" ")
    );
    for i in 0..m.len() - 1 {
        ensure!(m[i + 1] <= m[i] + s[i].max(s[i + 1]), "rise beyond noise at {}: {detail}", fractions[i + 1]);
    }
    ensure!(m[4] >= floor + 0.1, "80% dropped is within 0.1 of prevalence: {detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Outcome {
    let train = &seed_runs()[0].splits.train;
    let planted = |name: &str| Entity { surface: name.into(), provenance: Provenance::Text { visit_index: None, round: 1 } };
    let (mut firsts, mut noise_ranks) = (0, Vec::new());
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sets = Vec::with_capacity(train.len());
        let mut labels = Vec::with_capacity(train.len());
        for p in train {
            let mut e: EntitySet = p.artifacts.ts_entities.clone();
            for x in p.artifacts.text_entities.iter() {
                e.insert(x.clone());
            }
            let y = p.label_mortality;
            if y == 1 && rng.random_bool(0.6) {
                e.insert(planted("planted predictive"));
            }
            if rng.random_bool(0.5) {
                e.insert(planted("planted noise"));
            }
            sets.push(e);
            labels.push(y);
        }
        let ranked = entity_importance(&sets, &labels, seed, &ImportanceConfig::default()).unwrap();
        firsts += usize::from(ranked[0].entity == "planted predictive");
        noise_ranks.push(ranked.iter().position(|r| r.entity == "planted noise").unwrap() + 1);
    }
    let detail = format!("predictive ranked first in {firsts}/10, noise ranks {noise_ranks:?}");
    ensure!(firsts >= 9, "{detail}");
    ensure!(noise_ranks.iter().all(|&r| r > 3), "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let run = |dir: &str, exec: Execution| {
        let mut cfg = RunConfig { seed: 11, name: "repro".into(), output_dir: root.path().join(dir), ..Default::default() };
        cfg.data.generate.n_patients = 200;
        cfg.embedder.dim = 64;
        cfg.model.d = 8;
        cfg.train.batch_size = 32;
        cfg.train.max_epochs = 4;
        cfg.train.patience = 2;
        cfg.experiment.execution = exec;
        let out = run_experiment(ExperimentKind::Main, &cfg).unwrap();
        let read = |f: &str| std::fs::read(out.dir.join(f)).unwrap();
        (read("metrics.json"), read("model.ckpt"))
    };
    let a = run("a", Execution::default());
    let b = run("b", Execution::default());
    ensure!(a.0 == b.0, "metrics.json differs between identical runs");
    ensure!(a.1 == b.1, "model.ckpt differs between identical runs");
    let c = run("c", Execution::Sequential);
    ensure!(a.0 == c.0 && a.1 == c.1, "sequential execution changes the outputs");
    Ok(format!("metrics.json ({} B) and model.ckpt ({} B) byte-identical, also under sequential execution", a.0.len(), a.1.len()))
}

// --------------------------------------------------------------- criterion 10

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let y: Vec<u8> = (0..1000).map(|_| u8::from(rng.random_bool(0.3))).collect();
    let s: Vec<f64> = y
        .iter()
        .map(|&l| 1.0 / (1.0 + (-(rng.random_range(-2.0..2.0) + 1.5 * f64::from(l))).exp()))
        .collect();
    let report = bootstrap_metrics(&s, &y, 10, 10).unwrap();
    ensure!(report.b == 10, "B = {}", report.b);
    let full = [auroc(&s, &y).unwrap(), auprc(&s, &y).unwrap(), min_p_se(&s, &y).unwrap(), f1(&s, &y, 0.5).unwrap()];
    let stats = [report.auroc, report.auprc, report.min_p_se, report.f1];
    let names = ["AUROC", "AUPRC", "min(+P,Se)", "F1"];
    let mut parts = Vec::new();
    for ((name, st), full) in names.iter().zip(stats).zip(full) {
        let se = st.std / 10f64.sqrt();
        ensure!((st.mean - full).abs() <= 3.0 * se, "{name}: bootstrap {} vs full-set {full:.4} (se {se:.4})", st.percent());
        parts.push(format!("{name} {} vs {:.2}", st.percent(), full * 100.0));
    }
    let shape = |text: &str| {
        let (m, s) = text.split_once('±').unwrap_or(("", ""));
        let two = |x: &str| x.split_once('.').is_some_and(|(i, d)| !i.is_empty() && d.len() == 2 && x.parse::<f64>().is_ok());
        two(m) && two(s)
    };
    let st = Stat { mean: 0.73456, std: 0.01234 };
    ensure!(st.percent() == "73.46±1.23", "rendered {}", st.percent());
    let row = report.table_row("REALM");
    let cols: Vec<&str> = row.trim_matches('|').split('|').map(str::trim).collect();
    ensure!(cols.len() == 5 && cols[1..].iter().all(|c| shape(c)), "table row {row}");
    ensure!(close(report.to_json()["percent"]["auroc"]["mean"].as_f64().unwrap(), report.auroc.mean * 100.0, 1e-9), "json percent");
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------------- main

fn main() {
    let criteria: [Criterion; 10] = [
        ("formula oracles", criterion_1),
        ("gradient check", criterion_2),
        ("hallucination guard", criterion_3),
        ("matcher vs exhaustive scan", criterion_4),
        ("end-to-end learnability", criterion_5),
        ("retrieval ablation ordering", criterion_6),
        ("sparsity robustness", criterion_7),
        ("entity importance", criterion_8),
        ("reproducibility", criterion_9),
        ("bootstrap contract", criterion_10),
    ];
    let picked: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    // Failures are reported through the outcome line instead.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !picked.is_empty() && !picked.contains(&n) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
