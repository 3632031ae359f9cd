//! Abnormal-feature entities from reference-range z-scores.

use crate::ehr::{FeatureSpec, PatientRecord};
use crate::entity::{Direction, Entity, EntitySet, Provenance, TsAnomaly};
use crate::error::{Error, Result};

/// Default anomaly threshold in reference standard deviations.
pub const DEFAULT_TS_THRESHOLD: f64 = 3.0;

/// Mean and standard deviation implied by a reference range.
///
/// The range is taken to span four standard deviations around its midpoint.
pub fn reference_stats(spec: &FeatureSpec) -> Result<(f64, f64)> {
    if !(spec.ref_low < spec.ref_high) {
        return Err(Error::ZeroWidthRange(spec.name.clone()));
    }
    Ok((
        (spec.ref_low + spec.ref_high) / 2.0,
        (spec.ref_high - spec.ref_low) / 4.0,
    ))
}

pub fn zscore(value: f64, mean: f64, std: f64) -> Result<f64> {
    if !(std > 0.0) {
        return Err(Error::InvalidInput(format!("standard deviation must be positive, got {std}")));
    }
    Ok((value - mean) / std)
}

/// One entity per numeric feature whose largest observed |z| exceeds `eps`.
///
/// Missing cells are ignored and categorical features skipped. The provenance
/// records the first visit attaining the maximum.
pub fn extract_ts_entities(rec: &PatientRecord, features: &[FeatureSpec], eps: f64) -> Result<EntitySet> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("ts threshold must be positive, got {eps}")));
    }
    let mut out = EntitySet::new();
    for (j, spec) in features.iter().enumerate() {
        if spec.is_categorical {
            continue;
        }
        let (mean, std) = reference_stats(spec)?;
        let mut best: Option<(usize, f64, f64)> = None;
        for (visit, row) in rec.ts.iter().enumerate() {
            let Some(value) = row.get(j).copied().flatten() else {
                continue;
            };
            let z = zscore(value, mean, std)?;
            if best.is_none_or(|(_, _, bz)| z.abs() > bz.abs()) {
                best = Some((visit, value, z));
            }
        }
        if let Some((visit_index, value, z)) = best {
            if z.abs() > eps {
                out.insert(Entity {
                    surface: spec.name.to_lowercase(),
                    provenance: Provenance::Ts(TsAnomaly {
                        feature_name: spec.name.clone(),
                        visit_index,
                        value,
                        zscore: z,
                        direction: if z > 0.0 { Direction::High } else { Direction::Low },
                    }),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(lo: f64, hi: f64) -> FeatureSpec {
        FeatureSpec::numeric("x", lo, hi, "")
    }

    #[test]
    fn reference_stats_examples() {
        assert_eq!(reference_stats(&spec(0.0, 10.0)).unwrap(), (5.0, 2.5));
        assert_eq!(reference_stats(&spec(70.0, 110.0)).unwrap(), (90.0, 10.0));
        assert_eq!(reference_stats(&spec(-2.0, 2.0)).unwrap(), (0.0, 1.0));
        assert!(matches!(reference_stats(&spec(3.0, 3.0)), Err(Error::ZeroWidthRange(_))));
    }

    #[test]
    fn zscore_examples() {
        assert_eq!(zscore(10.0, 5.0, 2.5).unwrap(), 2.0);
        assert_eq!(zscore(5.0, 5.0, 2.5).unwrap(), 0.0);
        assert!((zscore(12.0, 5.0, 2.5).unwrap() - 2.8).abs() < 1e-12);
        assert!(zscore(1.0, 0.0, 0.0).is_err());
        assert!(zscore(1.0, 0.0, -1.0).is_err());
    }

    fn record(ts: Vec<Vec<Option<f64>>>) -> PatientRecord {
        let t = ts.len();
        PatientRecord {
            id: "p".into(),
            ts,
            notes: vec![None; t],
            times: (0..t).map(|k| k as f64 * 12.0).collect(),
            label_mortality: 0,
            label_readmission: 0,
        }
    }

    #[test]
    fn all_missing_yields_nothing() {
        let features = vec![spec(0.0, 1.0), spec(0.0, 1.0)];
        let rec = record(vec![vec![None, None]; 3]);
        assert!(extract_ts_entities(&rec, &features, 3.0).unwrap().is_empty());
    }

    #[test]
    fn blood_urea_nitrogen_spike() {
        let features = vec![
            FeatureSpec::numeric("blood urea nitrogen", 7.0, 20.0, "mg/dL"),
            FeatureSpec::numeric("sodium", 135.0, 145.0, "mmol/L"),
            FeatureSpec::categorical("capillary refill rate", 0.0, 1.0),
        ];
        let rec = record(vec![
            vec![Some(12.0), Some(140.0), Some(1.0)],
            vec![None, Some(141.0), None],
            vec![Some(60.0), None, Some(0.0)],
        ]);
        let set = extract_ts_entities(&rec, &features, 3.0).unwrap();
        assert_eq!(set.surfaces(), vec!["blood urea nitrogen"]);
        let e = set.iter().next().unwrap();
        match &e.provenance {
            Provenance::Ts(a) => {
                assert_eq!(a.visit_index, 2);
                assert!((a.zscore - 14.307_692_307_692_308).abs() < 1e-9);
                assert_eq!(a.direction, Direction::High);
            }
            p => panic!("unexpected provenance {p:?}"),
        }
    }

    #[test]
    fn threshold_is_strict_and_low_side_counts() {
        let features = vec![spec(-2.0, 2.0)];
        // z = -3 exactly is not over the threshold, -3.5 is.
        assert!(extract_ts_entities(&record(vec![vec![Some(-3.0)]]), &features, 3.0).unwrap().is_empty());
        let set = extract_ts_entities(&record(vec![vec![Some(-3.5)]]), &features, 3.0).unwrap();
        assert_eq!(set.len(), 1);
        assert!(extract_ts_entities(&record(vec![vec![Some(1.0)]]), &features, 0.0).is_err());
    }
}
