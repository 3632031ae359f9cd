use proptest::prelude::*;

use realm::config::{parse_override, resolve_config};
use realm::metrics::{auprc, auroc, bootstrap_metrics, f1, min_p_se};

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..80)
        .prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(0u8..2, n)))
        .prop_filter("both classes", |(_, y)| y.contains(&0) && y.contains(&1))
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_interval((s, y) in scored(), thr in 0.0f64..1.0) {
        for v in [auroc(&s, &y).unwrap(), auprc(&s, &y).unwrap(), min_p_se(&s, &y).unwrap(), f1(&s, &y, thr).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn ranking_metrics_ignore_monotone_transforms((s, y) in scored(), k in 0.1f64..10.0, c in -3.0f64..3.0) {
        // Rounding keeps distinct scores distinct under every transform below.
        let s: Vec<f64> = s.iter().map(|v| (v * 64.0).round() / 64.0).collect();
        let transforms: [&dyn Fn(f64) -> f64; 3] = [&|v| k * v + c, &|v| v.powi(3), &|v| 1.0 / (1.0 + (-v).exp())];
        for t in transforms {
            let ts: Vec<f64> = s.iter().map(|&v| t(v)).collect();
            prop_assert!((auroc(&ts, &y).unwrap() - auroc(&s, &y).unwrap()).abs() < 1e-12);
            prop_assert!((auprc(&ts, &y).unwrap() - auprc(&s, &y).unwrap()).abs() < 1e-12);
            prop_assert!((min_p_se(&ts, &y).unwrap() - min_p_se(&s, &y).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn bootstrap_report_is_bounded((s, y) in scored(), seed in any::<u64>(), b in 1usize..12) {
        let p: Vec<f64> = s.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let r = bootstrap_metrics(&p, &y, b, seed).unwrap();
        for st in [r.auroc, r.auprc, r.min_p_se, r.f1] {
            prop_assert!((0.0..=1.0).contains(&st.mean) && st.std >= 0.0);
        }
        prop_assert_eq!(r.b, b);
    }

    #[test]
    fn resolved_config_round_trips(
        seed in any::<u64>(),
        eps in 0.1f64..8.0,
        eta in 0.01f64..1.0,
        heads in 1usize..5,
        lr in 1e-5f64..1e-1,
        fusion in prop::sample::select(vec!["attention", "add", "concat"]),
        task in prop::sample::select(vec!["mortality", "readmission"]),
    ) {
        let ov: Vec<_> = [
            format!("seed={seed}"),
            format!("thresholds.eps={eps}"),
            format!("thresholds.eta={eta}"),
            format!("model.heads={heads}"),
            format!("model.d={}", heads * 8),
            format!("train.lr={lr}"),
            format!("model.fusion={fusion}"),
            format!("train.task={task}"),
        ]
        .iter()
        .map(|s| parse_override(s).unwrap())
        .collect();
        let cfg = resolve_config(None, &ov).unwrap();
        let text = cfg.to_json_pretty();
        let back = resolve_config(Some(&text), &[]).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_json_pretty(), text);
    }
}
