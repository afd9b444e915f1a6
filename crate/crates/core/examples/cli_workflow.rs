//! The gen-data, train, eval and inspect-masks steps of the command line
//! tool, driven through the library into a temporary directory.
//!
//! cargo run --release --example cli_workflow -- [out_dir]

use std::path::PathBuf;

use adasparse::cli;
use adasparse::data::DatasetSpec;
use adasparse::training::{Method, TrainConfig};

fn main() -> adasparse::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("adasparse_workflow"));
    let data = root.join("data");
    let spec = DatasetSpec {
        domain_field_cardinalities: vec![4],
        total_samples: 12_000,
        ..DatasetSpec::default()
    };
    let s = cli::gen_data(&spec, 7, &data)?;
    println!("gen-data: {} / {} / {} rows over {} domains", s.train, s.dev, s.test, s.domains);

    let config = TrainConfig {
        method: Method::Fusion,
        hidden: vec![32, 16],
        epochs: 3,
        seed: 7,
        ..TrainConfig::default()
    };
    let run = root.join("run");
    let out = cli::train_cmd(&config, &data, &run)?;
    println!("train: {} steps, files in {}", out.history.steps.len(), run.display());

    let ckpt = run.join(cli::CHECKPOINT_FILE);
    let report = cli::eval_cmd(&ckpt, &data.join("test.csv"), &root.join("eval"))?;
    print!("eval:\n{}", report.to_text());

    let domains: Vec<String> = (0..4).map(|d| d.to_string()).collect();
    let masks = cli::inspect_masks(&ckpt, &data.join("test.csv"), &domains, &root.join("masks"))?;
    let last = config.hidden.len();
    for (a, b, l, j) in masks.jaccard.iter().filter(|t| t.2 == last) {
        println!("jaccard {a} vs {b} at layer {l}: {j:.3}");
    }
    Ok(())
}
