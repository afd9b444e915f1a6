//! Train fusion gating on five synthetic domains and watch the per-layer
//! zero fraction settle into the target band.
//!
//! cargo run --release --example sparsity_control -- [epochs] [seed]

use std::time::Instant;

use adasparse::data::{generate_synthetic, split_by_timestamp, DatasetSpec};
use adasparse::metrics::{evaluate, layer_ratios};
use adasparse::pruner::sparsity_loss;
use adasparse::training::{train, Method, TrainConfig, TrainData};

fn main() -> adasparse::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let spec = DatasetSpec {
        domain_field_cardinalities: vec![5],
        total_samples: 50_000,
        ..DatasetSpec::default()
    };
    let split = split_by_timestamp(generate_synthetic(&spec, seed)?);
    let data = TrainData {
        schema: spec.schema(),
        vocab: spec.vocabulary(),
        train: split.train,
        dev: split.dev,
    };
    let config = TrainConfig {
        method: Method::Fusion,
        hidden: vec![64, 32, 16],
        epochs,
        seed,
        ..TrainConfig::default()
    };

    let start = Instant::now();
    let out = train(&config, &data)?;
    println!("trained {} steps in {:.1?}", out.history.steps.len(), start.elapsed());
    for e in &out.history.epochs {
        println!("epoch {} loss {:.4} dev auc {:?} r {:?}", e.epoch, e.train_loss, e.dev_auc, e.dev_ratios);
    }

    let ratios = layer_ratios(&out.last, &split.test)?;
    let boundary = config.boundary()?;
    println!("test ratios per layer: {ratios:?}");
    println!("R_s at lambda 1: {}", sparsity_loss(&ratios, &boundary, 1.0));
    let report = evaluate(&out.last, &split.test)?;
    println!("test auc {:.4} gauc {:.4}", report.auc, report.gauc);
    Ok(())
}
