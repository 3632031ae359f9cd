//! Permutation importance of extracted entities for a linear presence model.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::entity::EntitySet;
use crate::error::{Error, Result};
use crate::fusion::logistic;
use crate::metrics::auroc;
use crate::nn::Mat;
use crate::rng::{stream, substream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportanceConfig {
    pub l2: f64,
    pub lr: f64,
    pub iters: usize,
    pub permutations: usize,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            l2: 1e-3,
            lr: 1.0,
            iters: 300,
            permutations: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityImportance {
    pub entity: String,
    pub importance: f64,
    /// Fraction of patients carrying the entity.
    pub support: f64,
}

/// Binary presence matrix over the sorted union of entity surfaces.
pub fn presence_matrix(sets: &[EntitySet]) -> (Vec<String>, Mat) {
    let names: Vec<String> = sets
        .iter()
        .flat_map(|s| s.iter().map(|e| e.surface.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut x = Mat::zeros((sets.len(), names.len()));
    for (i, s) in sets.iter().enumerate() {
        for e in s.iter() {
            let j = names.binary_search(&e.surface).expect("name collected above");
            x[[i, j]] = 1.0;
        }
    }
    (names, x)
}

/// L2-regularized logistic regression by full-batch gradient descent from zero.
pub fn fit_logistic(x: &Mat, y: &[u8], cfg: &ImportanceConfig) -> (Vec<f64>, f64) {
    let (n, p) = x.dim();
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let mut w = ndarray::Array1::<f64>::zeros(p);
    let mut b = 0.0;
    for _ in 0..cfg.iters {
        let z = x.dot(&w) + b;
        let r: ndarray::Array1<f64> = z.iter().zip(&yf).map(|(&z, &y)| logistic(z) - y).collect();
        let gw = x.t().dot(&r) / n as f64 + cfg.l2 * &w;
        let gb = r.sum() / n as f64;
        w.scaled_add(-cfg.lr, &gw);
        b -= cfg.lr * gb;
    }
    (w.to_vec(), b)
}

fn scores(x: &Mat, w: &[f64], b: f64) -> Vec<f64> {
    x.rows().into_iter().map(|r| r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b).collect()
}

/// Entities ranked by mean AUROC drop when their presence column is permuted.
pub fn entity_importance(sets: &[EntitySet], labels: &[u8], seed: u64, cfg: &ImportanceConfig) -> Result<Vec<EntityImportance>> {
    if sets.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: sets.len(), actual: labels.len() });
    }
    if cfg.permutations == 0 || cfg.iters == 0 || !(cfg.lr > 0.0) || !(cfg.l2 >= 0.0) {
        return Err(Error::config("importance", "permutations and iters must be positive, lr > 0, l2 >= 0"));
    }
    let (names, x) = presence_matrix(sets);
    if names.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 distinct entities, found {}", names.len())));
    }
    let varying = x.columns().into_iter().any(|c| c.iter().any(|&v| v != c[0]));
    if !varying {
        return Err(Error::InvalidInput("entity presence matrix is constant".into()));
    }
    let (w, b) = fit_logistic(&x, labels, cfg);
    let base = auroc(&scores(&x, &w, b), labels)?;

    let mut rng = substream(seed, stream::IMPORTANCE);
    let n = x.nrows();
    let mut out = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let col: Vec<f64> = x.column(j).to_vec();
        let mut perm_x = x.clone();
        let mut drop = 0.0;
        for _ in 0..cfg.permutations {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for (i, &src) in order.iter().enumerate() {
                perm_x[[i, j]] = col[src];
            }
            drop += base - auroc(&scores(&perm_x, &w, b), labels)?;
        }
        out.push(EntityImportance {
            entity: name.clone(),
            importance: drop / cfg.permutations as f64,
            support: col.iter().sum::<f64>() / n as f64,
        });
    }
    out.sort_by(|a, c| c.importance.total_cmp(&a.importance).then_with(|| a.entity.cmp(&c.entity)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::{Entity, Provenance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(names: &[&str]) -> EntitySet {
        names
            .iter()
            .map(|n| Entity { surface: n.to_string(), provenance: Provenance::Text { visit_index: None, round: 1 } })
            .collect()
    }

    fn cohort(n: usize, seed: u64) -> (Vec<EntitySet>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sets = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let y = rng.random_bool(0.3) as u8;
            let mut names = vec![];
            if y == 1 {
                names.push("signal");
            }
            if rng.random_bool(0.5) {
                names.push("noise");
            }
            if rng.random_bool(if y == 1 { 0.6 } else { 0.3 }) {
                names.push("weak");
            }
            sets.push(set(&names));
            ys.push(y);
        }
        (sets, ys)
    }

    #[test]
    fn perfect_predictor_ranks_first_and_noise_is_near_zero() {
        let (sets, ys) = cohort(1000, 1);
        let ranked = entity_importance(&sets, &ys, 3, &ImportanceConfig::default()).unwrap();
        assert_eq!(ranked[0].entity, "signal");
        assert!(ranked[0].importance > 0.0);
        let noise = ranked.iter().find(|r| r.entity == "noise").unwrap();
        assert!(noise.importance.abs() < 0.05, "{}", noise.importance);
    }

    #[test]
    fn duplicated_columns_share_credit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sets = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..500 {
            let present = rng.random_bool(0.4);
            let y = if present { rng.random_bool(0.8) } else { rng.random_bool(0.2) } as u8;
            let mut names = vec![];
            if present {
                names.extend(["dup a", "dup b"]);
            }
            if rng.random_bool(0.5) {
                names.push("other");
            }
            sets.push(set(&names));
            ys.push(y);
        }
        let ranked = entity_importance(&sets, &ys, 1, &ImportanceConfig::default()).unwrap();
        let get = |n: &str| ranked.iter().find(|r| r.entity == n).unwrap().importance;
        let (a, b) = (get("dup a"), get("dup b"));
        assert!(a > 0.0 && b > 0.0);
        assert!(a / b <= 2.0 && b / a <= 2.0, "{a} {b}");
    }

    #[test]
    fn deterministic_under_seed() {
        let (sets, ys) = cohort(200, 2);
        let cfg = ImportanceConfig::default();
        assert_eq!(entity_importance(&sets, &ys, 9, &cfg).unwrap(), entity_importance(&sets, &ys, 9, &cfg).unwrap());
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let ys = vec![0, 1, 0, 1];
        let same = vec![set(&["a", "b"]); 4];
        assert!(entity_importance(&same, &ys, 1, &ImportanceConfig::default()).is_err());
        let single = vec![set(&["a"]), set(&[]), set(&["a"]), set(&[])];
        assert!(entity_importance(&single, &ys, 1, &ImportanceConfig::default()).is_err());
    }

    #[test]
    fn presence_matrix_is_sorted() {
        let (names, x) = presence_matrix(&[set(&["b", "a"]), set(&["c"])]);
        assert_eq!(names, vec!["a", "b", "c"]);
        assert_eq!(x, ndarray::array![[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }
}
