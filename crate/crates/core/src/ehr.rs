//! Multimodal EHR records, synthetic cohorts and dataset splitting.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures;
use crate::rng::{stream, substream};

/// One lab or demographic column of the time-series matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub ref_low: f64,
    pub ref_high: f64,
    pub unit: String,
    pub is_categorical: bool,
}

impl FeatureSpec {
    pub fn numeric(name: &str, ref_low: f64, ref_high: f64, unit: &str) -> Self {
        FeatureSpec {
            name: name.to_string(),
            ref_low,
            ref_high,
            unit: unit.to_string(),
            is_categorical: false,
        }
    }

    pub fn categorical(name: &str, ref_low: f64, ref_high: f64) -> Self {
        FeatureSpec {
            name: name.to_string(),
            ref_low,
            ref_high,
            unit: String::new(),
            is_categorical: true,
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.ref_low + self.ref_high)
    }
}

/// Which binary outcome a model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Mortality,
    Readmission,
}

/// One patient's stay: a `T x F` lab matrix, per-visit notes and timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    /// Row-major `T x F`; `None` marks a missing cell.
    pub ts: Vec<Vec<Option<f64>>>,
    pub notes: Vec<Option<String>>,
    /// Hours since admission, strictly increasing.
    pub times: Vec<f64>,
    pub label_mortality: u8,
    pub label_readmission: u8,
}

impl PatientRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn label(&self, task: Task) -> u8 {
        match task {
            Task::Mortality => self.label_mortality,
            Task::Readmission => self.label_readmission,
        }
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("patient {}: {msg}", self.id)));
        let t = self.times.len();
        if t == 0 {
            return bad("no visits".into());
        }
        if self.ts.len() != t || self.notes.len() != t {
            return bad(format!(
                "row counts disagree (ts {}, notes {}, times {t})",
                self.ts.len(),
                self.notes.len()
            ));
        }
        if self.times.iter().any(|x| !x.is_finite()) {
            return bad("non-finite timestamp".into());
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return bad("times not strictly increasing".into());
        }
        if let Some(row) = self.ts.iter().find(|r| r.len() != n_features) {
            return bad(format!("row has {} features, expected {n_features}", row.len()));
        }
        if self.ts.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite lab value".into());
        }
        if self.label_mortality > 1 || self.label_readmission > 1 {
            return bad("labels must be 0 or 1".into());
        }
        Ok(())
    }

    /// Forward-fills each column, then fills leading gaps with the reference midpoint.
    pub fn imputed(&self, features: &[FeatureSpec]) -> Array2<f64> {
        let t = self.len();
        let f = features.len();
        let mut out = Array2::zeros((t, f));
        for (j, spec) in features.iter().enumerate() {
            let mut last = None;
            for i in 0..t {
                if let Some(v) = self.ts[i][j] {
                    last = Some(v);
                }
                out[[i, j]] = last.unwrap_or_else(|| spec.midpoint());
            }
        }
        out
    }

    /// Per-cell observation mask, `true` where a value was recorded.
    pub fn observed_mask(&self) -> Vec<Vec<bool>> {
        self.ts
            .iter()
            .map(|r| r.iter().map(Option::is_some).collect())
            .collect()
    }
}

/// A cohort plus its feature schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub patients: Vec<PatientRecord>,
    pub features: Vec<FeatureSpec>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for spec in &self.features {
            if !names.insert(spec.name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate feature `{}`", spec.name)));
            }
            if !spec.is_categorical && !(spec.ref_low < spec.ref_high) {
                return Err(Error::ZeroWidthRange(spec.name.clone()));
            }
        }
        let mut ids = HashSet::new();
        for p in &self.patients {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate patient id `{}`", p.id)));
            }
            p.validate(self.features.len())?;
        }
        Ok(())
    }

    fn with_patients(&self, patients: Vec<PatientRecord>) -> Dataset {
        Dataset {
            patients,
            features: self.features.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Writes `features.json` and `patients.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let fpath = dir.join("features.json");
        let features = serde_json::to_string_pretty(&self.features)
            .map_err(|e| Error::json("serializing features", e))?;
        fs::write(&fpath, features + "\n")
            .map_err(|e| Error::io(format!("writing {}", fpath.display()), e))?;

        let ppath = dir.join("patients.jsonl");
        let file = fs::File::create(&ppath)
            .map_err(|e| Error::io(format!("writing {}", ppath.display()), e))?;
        let mut w = BufWriter::new(file);
        for p in &self.patients {
            let line = serde_json::to_string(p).map_err(|e| Error::json("serializing patient", e))?;
            writeln!(w, "{line}").map_err(|e| Error::io("writing patients.jsonl", e))?;
        }
        w.flush().map_err(|e| Error::io("writing patients.jsonl", e))?;
        if !self.meta.is_empty() {
            let mpath = dir.join("meta.json");
            let meta = serde_json::to_string_pretty(&self.meta)
                .map_err(|e| Error::json("serializing meta", e))?;
            fs::write(&mpath, meta + "\n")
                .map_err(|e| Error::io(format!("writing {}", mpath.display()), e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let fpath = dir.join("features.json");
        let text = fs::read_to_string(&fpath)
            .map_err(|e| Error::io(format!("reading {}", fpath.display()), e))?;
        let features: Vec<FeatureSpec> =
            serde_json::from_str(&text).map_err(|e| Error::json(fpath.display().to_string(), e))?;

        let ppath = dir.join("patients.jsonl");
        let file = fs::File::open(&ppath)
            .map_err(|e| Error::io(format!("reading {}", ppath.display()), e))?;
        let mut patients = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io("reading patients.jsonl", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let p: PatientRecord = serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("patients.jsonl line {}", i + 1), e))?;
            patients.push(p);
        }
        let mpath = dir.join("meta.json");
        let meta = if mpath.exists() {
            let text = fs::read_to_string(&mpath)
                .map_err(|e| Error::io(format!("reading {}", mpath.display()), e))?;
            serde_json::from_str(&text).map_err(|e| Error::json("meta.json", e))?
        } else {
            BTreeMap::new()
        };
        let ds = Dataset {
            patients,
            features,
            meta,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// A raw charted observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub feature: usize,
    pub value: f64,
}

/// Time-series rows plus their window start times.
pub type Consolidated = (Vec<Vec<Option<f64>>>, Vec<f64>);

/// Buckets sorted events into fixed windows anchored at the first event.
///
/// The last observation of a feature within a window wins. Windows without any
/// event produce no row. Row times are window start times. At most
/// `max_records` rows are kept, earliest first.
pub fn consolidate_segments(
    events: &[Event],
    n_features: usize,
    window_hours: f64,
    max_records: usize,
) -> Result<Consolidated> {
    if !(window_hours > 0.0) || !window_hours.is_finite() {
        return Err(Error::InvalidInput("window_hours must be positive".into()));
    }
    let first = events.first().ok_or(Error::NoEvents)?;
    if events.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(Error::InvalidInput("events must be sorted by time".into()));
    }
    let t0 = first.time;
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    let mut current: Option<i64> = None;
    for ev in events {
        if ev.feature >= n_features {
            return Err(Error::InvalidInput(format!(
                "event feature index {} out of range ({n_features} features)",
                ev.feature
            )));
        }
        if !ev.time.is_finite() || !ev.value.is_finite() {
            return Err(Error::NonFinite("event".into()));
        }
        let k = ((ev.time - t0) / window_hours).floor() as i64;
        if current != Some(k) {
            if rows.len() == max_records {
                break;
            }
            current = Some(k);
            rows.push(vec![None; n_features]);
            times.push(t0 + k as f64 * window_hours);
        }
        rows.last_mut().expect("row pushed above")[ev.feature] = Some(ev.value);
    }
    Ok((rows, times))
}

/// Flattens rows back to events at their row times, in feature order.
pub fn events_from_rows(rows: &[Vec<Option<f64>>], times: &[f64]) -> Vec<Event> {
    rows.iter()
        .zip(times)
        .flat_map(|(row, &time)| {
            row.iter()
                .enumerate()
                .filter_map(move |(feature, v)| v.map(|value| Event { time, feature, value }))
        })
        .collect()
}

/// Synthetic cohort parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n_patients: usize,
    /// Feature count: the two demographic columns plus `n_features - 2` labs.
    pub n_features: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub prevalence: f64,
    pub seed: u64,
    /// Logit increment per planted lab anomaly.
    pub anomaly_weight: f64,
    /// Logit increment per dangerous disease mentioned in the notes.
    pub mention_weight: f64,
    pub note_rate: f64,
    pub observe_rate: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_patients: 1000,
            n_features: 19,
            t_min: 4,
            t_max: 48,
            prevalence: 0.3,
            seed: 7,
            anomaly_weight: 3.0,
            mention_weight: 3.0,
            note_rate: 0.8,
            observe_rate: 0.75,
        }
    }
}

/// Distribution of planted anomaly counts (index = count).
const ANOMALY_COUNT_PROBS: [f64; 5] = [0.35, 0.3, 0.2, 0.1, 0.05];
/// Distribution of dangerous-mention counts (index = count).
const MENTION_COUNT_PROBS: [f64; 5] = [0.35, 0.3, 0.2, 0.1, 0.05];
/// Readmission uses the same planted drivers at half strength.
const READMISSION_SCALE: f64 = 0.5;

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 1 {
            return Err(Error::config("n_patients", "must be at least 1"));
        }
        let max_f = fixtures::default_features().len();
        if self.n_features < 7 || self.n_features > max_f {
            return Err(Error::config(
                "n_features",
                format!("must be between 7 and {max_f}"),
            ));
        }
        if self.t_min < 1 || self.t_max < self.t_min {
            return Err(Error::config("t_max", "need 1 <= t_min <= t_max"));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::config("prevalence", "must lie strictly between 0 and 1"));
        }
        for (name, v) in [("note_rate", self.note_rate), ("observe_rate", self.observe_rate)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(name, "must lie in (0, 1]"));
            }
        }
        for (name, v) in [
            ("anomaly_weight", self.anomaly_weight),
            ("mention_weight", self.mention_weight),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn features(&self) -> Vec<FeatureSpec> {
        let all = fixtures::default_features();
        let labs = self.n_features - 2;
        let mut out: Vec<FeatureSpec> = all[..labs].to_vec();
        out.extend_from_slice(&all[all.len() - 2..]);
        out
    }
}

/// Ground truth planted into one synthetic patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub id: String,
    /// Feature names pushed beyond the anomaly threshold.
    pub anomalies: Vec<String>,
    /// Dangerous diseases mentioned in the notes.
    pub mentions: Vec<String>,
    pub mortality_probability: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Label model shared by the generator and its tests.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelModel {
    pub intercept: f64,
    pub anomaly_weight: f64,
    pub mention_weight: f64,
}

impl LabelModel {
    /// Solves for the intercept that makes the expected positive rate equal `prevalence`.
    pub fn calibrated(prevalence: f64, anomaly_weight: f64, mention_weight: f64) -> Self {
        let expected = |b0: f64| -> f64 {
            let mut e = 0.0;
            for (a, pa) in ANOMALY_COUNT_PROBS.iter().enumerate() {
                for (m, pm) in MENTION_COUNT_PROBS.iter().enumerate() {
                    e += pa * pm * sigmoid(b0 + anomaly_weight * a as f64 + mention_weight * m as f64);
                }
            }
            e
        };
        let (mut lo, mut hi) = (-60.0, 60.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if expected(mid) < prevalence {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        LabelModel {
            intercept: 0.5 * (lo + hi),
            anomaly_weight,
            mention_weight,
        }
    }

    pub fn probability(&self, anomalies: usize, mentions: usize) -> f64 {
        sigmoid(
            self.intercept
                + self.anomaly_weight * anomalies as f64
                + self.mention_weight * mentions as f64,
        )
    }

    /// Probability for a patient with nothing planted.
    pub fn base_rate(&self) -> f64 {
        self.probability(0, 0)
    }
}

fn draw_count<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

const OPENERS: [&str; 4] = [
    "Progress note.",
    "ICU nursing note.",
    "Attending note.",
    "Overnight events reviewed.",
];
const FILLERS: [&str; 10] = [
    "Chest x-ray reviewed.",
    "Renal function trended.",
    "Abdomen soft, non tender.",
    "Plan discussed with family.",
    "Central line in place.",
    "Tolerating diet, ambulating with assistance.",
    "Vitals reviewed with nursing staff.",
    "Labs pending from this morning.",
    "Pain controlled on current regimen.",
    "Physical therapy consulted.",
];
/// Mention templates shared by every disease, so phrasing carries no label information.
const MENTION_TEMPLATES: [&str; 4] = ["Assessment: concern for {}.", "History of {}.", "Evaluated for {}.", "Known {}."];

/// Generates a cohort and returns the planted ground truth alongside it.
pub fn generate_cohort_with_truth(cfg: &CohortConfig) -> Result<(Dataset, Vec<PlantedTruth>)> {
    cfg.validate()?;
    let features = cfg.features();
    let mut rng = substream(cfg.seed, stream::DATA);
    let mortality = LabelModel::calibrated(cfg.prevalence, cfg.anomaly_weight, cfg.mention_weight);
    let readmission = LabelModel::calibrated(
        cfg.prevalence,
        cfg.anomaly_weight * READMISSION_SCALE,
        cfg.mention_weight * READMISSION_SCALE,
    );
    let lexicon = fixtures::note_vocabulary();
    let anomaly_candidates: Vec<usize> = features
        .iter()
        .enumerate()
        .filter(|(_, f)| !f.is_categorical && fixtures::anomaly_direction(&f.name).is_some())
        .map(|(i, _)| i)
        .collect();
    let noise = Normal::new(0.0, 0.7).expect("valid normal");
    let width = cfg.n_patients.to_string().len().max(5);

    let mut patients = Vec::with_capacity(cfg.n_patients);
    let mut truths = Vec::with_capacity(cfg.n_patients);
    for idx in 0..cfg.n_patients {
        let id = format!("P{idx:0width$}");
        let t = rng.random_range(cfg.t_min..=cfg.t_max);
        let times: Vec<f64> = (0..t).map(|k| 12.0 * k as f64).collect();
        let age = rng.random_range(18..=90) as f64;
        let female = rng.random_bool(0.5);

        let mut ts = vec![vec![None; features.len()]; t];
        for row in ts.iter_mut() {
            for (j, spec) in features.iter().enumerate() {
                let value = match spec.name.as_str() {
                    "age" => Some(age),
                    "gender" => Some(if female { 1.0 } else { 0.0 }),
                    _ if !rng.random_bool(cfg.observe_rate) => None,
                    _ if spec.is_categorical => Some(if rng.random_bool(0.1) { 1.0 } else { 0.0 }),
                    _ => {
                        let mean = spec.midpoint();
                        let std = (spec.ref_high - spec.ref_low) / 4.0;
                        let z: f64 = noise.sample(&mut rng);
                        Some(round_to(mean + std * z.clamp(-2.5, 2.5), 2))
                    }
                };
                row[j] = value;
            }
        }

        let n_anom = draw_count(&mut rng, &ANOMALY_COUNT_PROBS).min(anomaly_candidates.len());
        let chosen: Vec<usize> = anomaly_candidates
            .choose_multiple(&mut rng, n_anom)
            .copied()
            .collect();
        let mut anomalies = Vec::with_capacity(n_anom);
        for &j in &chosen {
            let spec = &features[j];
            let mean = spec.midpoint();
            let std = (spec.ref_high - spec.ref_low) / 4.0;
            let high = fixtures::anomaly_direction(&spec.name) == Some(true);
            let cap = if high { 6.0 } else { (0.9 * mean / std).min(6.0) };
            let k = rng.random_range(3.5..cap.max(3.6));
            let value = if high { mean + k * std } else { mean - k * std };
            let visit = rng.random_range(0..t);
            ts[visit][j] = Some(round_to(value, 2));
            anomalies.push(spec.name.clone());
        }

        let n_mention = draw_count(&mut rng, &MENTION_COUNT_PROBS).min(lexicon.dangerous.len());
        let mentions: Vec<&str> = lexicon
            .dangerous
            .choose_multiple(&mut rng, n_mention)
            .copied()
            .collect();
        let n_benign = rng.random_range(0..=3);
        let benign: Vec<&str> = lexicon
            .benign
            .choose_multiple(&mut rng, n_benign)
            .copied()
            .collect();

        let mut note_present: Vec<bool> = (0..t).map(|_| rng.random_bool(cfg.note_rate)).collect();
        let mut extra: Vec<Vec<String>> = vec![Vec::new(); t];
        for name in mentions.iter().chain(&benign) {
            let v = rng.random_range(0..t);
            note_present[v] = true;
            let template = MENTION_TEMPLATES.choose(&mut rng).expect("non-empty");
            extra[v].push(template.replace("{}", name));
        }
        if !note_present.iter().any(|&p| p) {
            note_present[0] = true;
        }
        let sex = if female { "woman" } else { "man" };
        let notes: Vec<Option<String>> = (0..t)
            .map(|v| {
                if !note_present[v] {
                    return None;
                }
                let mut parts = vec![
                    OPENERS.choose(&mut rng).expect("non-empty").to_string(),
                    format!("{} year old {sex} followed on the ward.", age as u32),
                ];
                parts.extend(extra[v].iter().cloned());
                let n_fill = rng.random_range(1..=3);
                parts.extend(FILLERS.choose_multiple(&mut rng, n_fill).map(|f| f.to_string()));
                parts.push(format!(
                    "Continue {}.",
                    lexicon.drugs.choose(&mut rng).expect("non-empty")
                ));
                Some(parts.join(" "))
            })
            .collect();

        let p_mort = mortality.probability(n_anom, n_mention);
        let p_read = readmission.probability(n_anom, n_mention);
        let label_mortality = u8::from(rng.random_bool(p_mort));
        let label_readmission = u8::from(rng.random_bool(p_read));
        patients.push(PatientRecord {
            id: id.clone(),
            ts,
            notes,
            times,
            label_mortality,
            label_readmission,
        });
        truths.push(PlantedTruth {
            id,
            anomalies,
            mentions: mentions.iter().map(|s| s.to_string()).collect(),
            mortality_probability: p_mort,
        });
    }

    let mut meta = BTreeMap::new();
    meta.insert("generator".to_string(), serde_json::json!("synthetic-cohort-v1"));
    meta.insert(
        "config".to_string(),
        serde_json::to_value(cfg).map_err(|e| Error::json("cohort config", e))?,
    );
    meta.insert("base_rate".to_string(), serde_json::json!(mortality.base_rate()));
    Ok((
        Dataset {
            patients,
            features,
            meta,
        },
        truths,
    ))
}

/// Generates a deterministic synthetic cohort with planted signal.
pub fn generate_synthetic_cohort(cfg: &CohortConfig) -> Result<Dataset> {
    generate_cohort_with_truth(cfg).map(|(ds, _)| ds)
}

fn round_to(x: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (x * s).round() / s
}

/// Split sizes by largest remainder; every part gets at least one item.
pub fn split_sizes(n: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    if ratios.is_empty() || ratios.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidInput("split ratios must be positive".into()));
    }
    if n < ratios.len() {
        return Err(Error::InvalidInput(format!(
            "cannot split {n} patients into {} parts",
            ratios.len()
        )));
    }
    let total: f64 = ratios.iter().sum();
    let exact: Vec<f64> = ratios.iter().map(|r| n as f64 * r / total).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let largest = (0..sizes.len()).max_by_key(|&i| (sizes[i], usize::MAX - i)).expect("non-empty");
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }
    Ok(sizes)
}

/// Shuffled train/validation/test partition. Each part keeps the original order.
pub fn split_dataset(ds: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let sizes = split_sizes(ds.len(), &[ratios.0, ratios.1, ratios.2])?;
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut substream(seed, stream::SPLIT));
    let mut parts = Vec::with_capacity(3);
    let mut start = 0;
    for s in sizes {
        let mut chosen = idx[start..start + s].to_vec();
        chosen.sort_unstable();
        parts.push(ds.with_patients(chosen.into_iter().map(|i| ds.patients[i].clone()).collect()));
        start += s;
    }
    let test = parts.pop().expect("three parts");
    let val = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    Ok((train, val, test))
}

/// Removes `floor(drop_fraction * N)` patients uniformly at random.
pub fn sparsify_training_set(train: &Dataset, drop_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::InvalidInput(format!(
            "drop_fraction must lie in [0, 1), got {drop_fraction}"
        )));
    }
    let n = train.len();
    let drop = (drop_fraction * n as f64).floor() as usize;
    if drop == 0 {
        return Ok(train.clone());
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, stream::SPARSIFY));
    let mut keep = idx[drop..].to_vec();
    keep.sort_unstable();
    Ok(train.with_patients(keep.into_iter().map(|i| train.patients[i].clone()).collect()))
}
