//! Two domains generated by the same rule and one by a disjoint rule:
//! compare their majority-vote masks on the last hidden layer.
//!
//! cargo run --release --example mask_overlap -- [seeds]

use adasparse::data::{generate_synthetic, partition_by_domain, split_by_timestamp, DatasetSpec, RuleStyle, Sample};
use adasparse::metrics::{domain_mask, mask_jaccard};
use adasparse::training::{train, Method, TrainConfig, TrainData};

fn main() -> adasparse::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    for seed in 0..seeds {
        let spec = DatasetSpec {
            domain_field_cardinalities: vec![3],
            total_samples: 60_000,
            tail_exponent: 0.0,
            rule_style: RuleStyle::Disjoint,
            rule_groups: vec![0, 0, 1],
            rule_seed: seed + 1,
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
            epochs: 5,
            seed,
            ..TrainConfig::default()
        };
        let out = train(&config, &data)?;

        let parts = partition_by_domain(&split.test);
        let masks = parts
            .values()
            .map(|idx| {
                let samples: Vec<Sample> = idx.iter().map(|&i| split.test[i].clone()).collect();
                domain_mask(&out.checkpoint, &samples)
            })
            .collect::<adasparse::Result<Vec<_>>>()?;
        let layer = config.hidden.len();
        let j = |a: usize, b: usize| mask_jaccard(&masks[a], &masks[b], layer);
        let (same, cross_a, cross_b) = (j(0, 1)?, j(0, 2)?, j(1, 2)?);
        println!(
            "seed {seed}: jaccard(Da, Da') {same:.3}  jaccard(Da, Db) {cross_a:.3}  jaccard(Da', Db) {cross_b:.3}  {}",
            if same > cross_a.max(cross_b) { "similar pair overlaps most" } else { "no separation" }
        );
        for (d, m) in parts.keys().zip(&masks) {
            let bits: String = m.layers[layer].iter().map(|b| char::from(b'0' + b)).collect();
            println!("  domain {d}: {bits}");
        }
    }
    Ok(())
}
