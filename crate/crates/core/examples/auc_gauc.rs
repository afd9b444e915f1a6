//! AUC and impression-weighted GAUC on a small hand-built score table.
//!
//! cargo run --example auc_gauc

use adasparse::data::DomainId;
use adasparse::metrics::{auc, gauc, logloss};

fn main() -> adasparse::Result<()> {
    let scores = [0.9, 0.8, 0.3, 0.6, 0.2, 0.7, 0.4, 0.4, 0.1, 0.5];
    let labels = [1, 0, 0, 1, 0, 1, 1, 0, 0, 0];
    // Domain 2 has only negatives and drops out of GAUC.
    let domains: Vec<DomainId> = [0, 0, 0, 1, 1, 1, 1, 1, 2, 2].iter().map(|&d| DomainId(vec![d])).collect();

    println!("logloss {:.4}", logloss(&scores, &labels)?);
    println!("auc     {:.4}", auc(&scores, &labels)?);
    let g = gauc(&scores, &labels, &domains)?;
    println!("gauc    {:.4} ({} group skipped)", g.value, g.skipped);
    for d in &g.per_domain {
        println!("  domain {} impressions {} auc {:?}", d.domain, d.impressions, d.auc);
    }
    Ok(())
}
