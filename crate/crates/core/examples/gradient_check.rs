//! Finite-difference check of the full model gradient (embeddings,
//! backbone, pruner and sparsity term) on a tiny model.
//!
//! cargo run --example gradient_check -- [seeds]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adasparse::data::{Sample, Schema};
use adasparse::embedding::Vocabulary;
use adasparse::numerics::grad_check;
use adasparse::pruner::{FactorKind, FactorMethod, SparsityBoundary};
use adasparse::training::{Model, Regularizer};

fn main() -> adasparse::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let schema = Schema::new(vec!["domain".into()], vec!["a".into(), "b".into()])?;
    let mut vocab = Vocabulary::new(&schema);
    for f in 0..3 {
        for v in 0..3 {
            vocab.encode(f, &v.to_string());
        }
    }
    let method = FactorMethod::new(FactorKind::Scaling, 1.0, 2.0, 0.25)?;
    let reg = Regularizer {
        boundary: SparsityBoundary::new(0.15, 0.25)?,
        lambda_hat: 1.0,
    };

    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(&vocab, 1, 4, 0.5, &[8, 4], true, &mut rng);
        let samples: Vec<Sample> = (0..6)
            .map(|i| Sample {
                domain: vec![i % 3],
                agnostic: vec![rng.random_range(0..3), rng.random_range(0..3)],
                label: (i % 2) as u8,
                timestamp: i.into(),
            })
            .collect();
        let batch: Vec<&Sample> = samples.iter().collect();
        let layers = model.backbone.layer_count();
        let err = grad_check(&model.to_matrices(), 1e-6, |mats| {
            let m = Model::from_matrices(mats.to_vec(), 3, 1, layers, true)?;
            let out = m.batch_grads(&batch, Some(&method), Some(reg))?;
            Ok((out.loss(), m.grads_to_matrices(&out.grads)))
        })?;
        println!("seed {seed:>2}: max relative error {err:.2e}");
    }
    Ok(())
}
