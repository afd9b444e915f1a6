//! Print the three factor functions over a sweep of pre-activations at a
//! few slopes, so the shapes can be compared side by side.
//!
//! cargo run --example factor_methods

use adasparse::pruner::{FactorKind, FactorMethod};

fn main() -> adasparse::Result<()> {
    let (beta, epsilon) = (2.0, 0.25);
    for alpha in [0.1, 1.0, 5.0] {
        println!("alpha = {alpha}");
        println!("{:>6} {:>13} {:>8} {:>8}", "v", "binarization", "scaling", "fusion");
        for i in -6..=6 {
            let v = f64::from(i) * 0.5;
            let mut row = format!("{v:>6.1}");
            for (kind, width) in [(FactorKind::Binarization, 13), (FactorKind::Scaling, 8), (FactorKind::Fusion, 8)] {
                let (_, pi, _) = FactorMethod::new(kind, alpha, beta, epsilon)?.apply(v);
                row.push_str(&format!(" {pi:>width$.4}"));
            }
            println!("{row}");
        }
        println!();
    }
    Ok(())
}
