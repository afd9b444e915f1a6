//! Plain DNN against the three gated variants on eight long-tail domains
//! whose ground-truth rules disagree in sign on half of their features.
//!
//! cargo run --release --example baseline_vs_adasparse -- [seeds] [epochs]

use std::time::Instant;

use adasparse::data::{generate_synthetic, split_by_timestamp, DatasetSpec, RuleStyle};
use adasparse::metrics::{auc, evaluate};
use adasparse::training::{train, Method, TrainConfig, TrainData};

fn main() -> adasparse::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let methods = [Method::None, Method::Scaling, Method::Binarization, Method::Fusion];

    let mut totals = [0.0; 4];
    for seed in 0..seeds {
        let spec = DatasetSpec {
            domain_field_cardinalities: vec![8],
            total_samples: 200_000,
            rule_style: RuleStyle::Conflicting,
            rule_seed: seed + 1,
            ..DatasetSpec::default()
        };
        let split = split_by_timestamp(generate_synthetic(&spec, seed)?);
        let rules = spec.rules();
        let truth: Vec<f64> = split.test.iter().map(|s| spec.click_probability(&rules, s)).collect();
        let labels: Vec<u8> = split.test.iter().map(|s| s.label).collect();
        println!("seed {seed} oracle       test auc {:.4}", auc(&truth, &labels)?);
        let data = TrainData {
            schema: spec.schema(),
            vocab: spec.vocabulary(),
            train: split.train,
            dev: split.dev,
        };
        for (k, method) in methods.into_iter().enumerate() {
            let config = TrainConfig {
                method,
                hidden: vec![64, 32, 16],
                epochs,
                seed,
                ..TrainConfig::default()
            };
            let start = Instant::now();
            let out = train(&config, &data)?;
            let report = evaluate(&out.checkpoint, &split.test)?;
            totals[k] += report.auc;
            println!(
                "seed {seed} {method:<12} test auc {:.4} gauc {:.4} ({:.1?})",
                report.auc,
                report.gauc,
                start.elapsed()
            );
        }
    }
    for (method, total) in methods.iter().zip(totals) {
        println!("mean {method:<12} {:.4}", total / seeds as f64);
    }
    Ok(())
}
