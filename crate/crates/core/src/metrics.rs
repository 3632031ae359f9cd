//! Binary classification metrics and bootstrap reporting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::clamp_probability;

pub const DEFAULT_BOOTSTRAP: usize = 10;
pub const BOOTSTRAP_RETRIES: usize = 100;
pub const F1_THRESHOLD: f64 = 0.5;

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: scores.len(), actual: labels.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Mean binary cross-entropy over clamped probabilities.
pub fn bce_loss(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: y_hat.len(), actual: y.len() });
    }
    if y_hat.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let total: f64 = y_hat
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = clamp_probability(p);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / y_hat.len() as f64)
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Probability a random positive outranks a random negative; ties count one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric { metric: "AUROC", reason: "labels contain a single class".into() });
    }
    // Walk from the lowest scores up, counting negatives already passed.
    let mut below = 0.0;
    let mut concordant = 0.0;
    for g in tie_groups(scores).iter().rev() {
        let p = g.iter().filter(|&&i| labels[i] == 1).count() as f64;
        let n = g.len() as f64 - p;
        concordant += p * below + 0.5 * p * n;
        below += n;
    }
    Ok(concordant / (pos as f64 * neg as f64))
}

/// Step-wise average precision: `Σ (R_k − R_{k−1}) · P_k` over distinct thresholds.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric { metric: "AUPRC", reason: "no positive labels".into() });
    }
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    for g in tie_groups(scores) {
        tp += g.iter().filter(|&&i| labels[i] == 1).count();
        seen += g.len();
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

/// Best `min(precision, sensitivity)` over thresholds `score ≥ thr`.
pub fn min_p_se(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric { metric: "min(+P,Se)", reason: "labels contain a single class".into() });
    }
    let (mut tp, mut seen, mut best) = (0usize, 0usize, 0.0f64);
    for g in tie_groups(scores) {
        tp += g.iter().filter(|&&i| labels[i] == 1).count();
        seen += g.len();
        let p = tp as f64 / seen as f64;
        let se = tp as f64 / pos as f64;
        best = best.max(p.min(se));
    }
    Ok(best)
}

/// F1 of `score ≥ threshold`; zero when precision + recall is zero.
pub fn f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check(scores, labels)?;
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    Ok(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Population mean and standard deviation.
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }

    pub fn scaled(&self, k: f64) -> Stat {
        Stat { mean: self.mean * k, std: self.std * k }
    }

    /// `mean±std` after scaling by 100, two decimals.
    pub fn percent(&self) -> String {
        format!("{:.2}±{:.2}", self.mean * 100.0, self.std * 100.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub auroc: f64,
    pub auprc: f64,
    pub min_p_se: f64,
    pub f1: f64,
}

pub fn all_metrics(scores: &[f64], labels: &[u8]) -> Result<MetricValues> {
    Ok(MetricValues {
        auroc: auroc(scores, labels)?,
        auprc: auprc(scores, labels)?,
        min_p_se: min_p_se(scores, labels)?,
        f1: f1(scores, labels, F1_THRESHOLD)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: Stat,
    pub auprc: Stat,
    pub min_p_se: Stat,
    pub f1: Stat,
    pub b: usize,
    pub seed: u64,
}

pub const TABLE_HEADER: &str = "| Model | AUROC | AUPRC | min(+P,Se) | F1 |\n|---|---|---|---|---|";

impl MetricReport {
    /// Report with a `percent` mirror (values ×100) for rendered output.
    pub fn to_json(&self) -> serde_json::Value {
        let pct = |s: &Stat| s.scaled(100.0);
        serde_json::json!({
            "auroc": self.auroc,
            "auprc": self.auprc,
            "min_p_se": self.min_p_se,
            "f1": self.f1,
            "b": self.b,
            "seed": self.seed,
            "percent": {
                "auroc": pct(&self.auroc),
                "auprc": pct(&self.auprc),
                "min_p_se": pct(&self.min_p_se),
                "f1": pct(&self.f1),
            },
        })
    }

    pub fn table_row(&self, label: &str) -> String {
        format!(
            "| {label} | {} | {} | {} | {} |",
            self.auroc.percent(),
            self.auprc.percent(),
            self.min_p_se.percent(),
            self.f1.percent()
        )
    }
}

/// Builds a report from explicit resample index sets.
pub fn report_from_resamples(scores: &[f64], labels: &[u8], resamples: &[Vec<usize>], seed: u64) -> Result<MetricReport> {
    if resamples.is_empty() {
        return Err(Error::InvalidInput("need at least one resample".into()));
    }
    let mut vals = Vec::with_capacity(resamples.len());
    for idx in resamples {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        vals.push(all_metrics(&s, &l)?);
    }
    let col = |f: fn(&MetricValues) -> f64| Stat::of(&vals.iter().map(f).collect::<Vec<_>>());
    Ok(MetricReport {
        auroc: col(|v| v.auroc),
        auprc: col(|v| v.auprc),
        min_p_se: col(|v| v.min_p_se),
        f1: col(|v| v.f1),
        b: resamples.len(),
        seed,
    })
}

/// Draws `b` same-size resamples with replacement; single-class draws are redrawn.
pub fn bootstrap_indices(labels: &[u8], b: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if b == 0 {
        return Err(Error::InvalidInput("bootstrap count must be at least 1".into()));
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::InvalidInput("cannot bootstrap an empty set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(b);
    for _ in 0..b {
        let mut tries = 0;
        loop {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
            if pos > 0 && pos < n {
                out.push(idx);
                break;
            }
            tries += 1;
            if tries >= BOOTSTRAP_RETRIES {
                return Err(Error::BootstrapExhausted(BOOTSTRAP_RETRIES));
            }
        }
    }
    Ok(out)
}

pub fn bootstrap_metrics(scores: &[f64], labels: &[u8], b: usize, seed: u64) -> Result<MetricReport> {
    check(scores, labels)?;
    let resamples = bootstrap_indices(labels, b, seed)?;
    report_from_resamples(scores, labels, &resamples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap() - 0.105_360_515_657_826_3).abs() < 1e-12);
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 2e-7);
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric { .. })));
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.2, 0.9], &[1, 0]).unwrap(), 0.5);
        assert_eq!(auprc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.9, 0.5, 0.4, 0.1], &[1, 0, 0, 0]).unwrap(), 1.0);
        assert!(auprc(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn min_p_se_examples() {
        assert_eq!(min_p_se(&[0.4, 0.6], &[1, 0]).unwrap(), 0.5);
        assert_eq!(min_p_se(&[0.5; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(min_p_se(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn f1_examples() {
        assert!((f1(&[1.0, 0.0, 0.0], &[1, 1, 0], 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1(&[0.9, 0.1], &[1, 0], 0.5).unwrap(), 1.0);
        assert_eq!(f1(&[0.1, 0.2], &[1, 0], 0.5).unwrap(), 0.0);
        assert_eq!(f1(&[0.5], &[1], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn identity_resample_has_zero_spread() {
        let s = [0.1, 0.7, 0.3, 0.9];
        let l = [0, 1, 0, 1];
        let r = report_from_resamples(&s, &l, &[vec![0, 1, 2, 3]], 0).unwrap();
        assert_eq!(r.auroc.std, 0.0);
        assert_eq!(r.auroc.mean, 1.0);
    }

    #[test]
    fn bootstrap_is_deterministic_and_retries_exhaust() {
        let s: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let l: Vec<u8> = (0..50).map(|i| (i % 3 == 0) as u8).collect();
        assert_eq!(bootstrap_metrics(&s, &l, 10, 5).unwrap(), bootstrap_metrics(&s, &l, 10, 5).unwrap());
        // A single point can never yield both classes.
        assert!(matches!(bootstrap_metrics(&[0.2], &[1], 1, 0), Err(Error::BootstrapExhausted(100))));
    }

    #[test]
    fn table_row_uses_percent() {
        let st = Stat { mean: 0.6543, std: 0.0219 };
        assert_eq!(st.percent(), "65.43±2.19");
    }
}
