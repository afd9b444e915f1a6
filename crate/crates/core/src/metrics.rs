//! LogLoss, AUC, GAUC, and per-domain factor masks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{DomainId, Sample};
use crate::error::{Error, Result};
use crate::training::{cross_entropy, Checkpoint};

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Rank-sum form with average ranks for tied scores.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!("AUC needs both classes ({pos} positive, {neg} negative)")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps tied average ranks integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let positives = idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        // ranks i+1 ..= j+1, average (i + j + 2) / 2
        rank_sum2 += positives * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Mean cross-entropy.
pub fn logloss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("logloss of an empty set".into()));
    }
    Ok(labels.iter().zip(scores).map(|(&y, &p)| cross_entropy(y, p)).sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainAuc {
    pub domain: String,
    pub impressions: usize,
    /// `None` when the domain holds a single class.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gauc {
    pub value: f64,
    /// Domains excluded for holding a single class.
    pub skipped: usize,
    pub per_domain: Vec<DomainAuc>,
}

/// Impression-weighted mean of per-domain AUC over domains with both classes.
pub fn gauc(scores: &[f64], labels: &[u8], domains: &[DomainId]) -> Result<Gauc> {
    if scores.len() != labels.len() || scores.len() != domains.len() {
        return Err(Error::Shape("scores, labels and domains differ in length".into()));
    }
    let mut groups: BTreeMap<&DomainId, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for ((s, &y), d) in scores.iter().zip(labels).zip(domains) {
        let g = groups.entry(d).or_default();
        g.0.push(*s);
        g.1.push(y);
    }
    let mut num = 0.0;
    let mut den = 0usize;
    let mut skipped = 0;
    let mut per_domain = Vec::with_capacity(groups.len());
    for (d, (s, y)) in &groups {
        let a = match auc(s, y) {
            Ok(a) => {
                num += s.len() as f64 * a;
                den += s.len();
                Some(a)
            }
            Err(Error::UndefinedMetric(_)) => {
                skipped += 1;
                None
            }
            Err(e) => return Err(e),
        };
        per_domain.push(DomainAuc {
            domain: d.to_string(),
            impressions: s.len(),
            auc: a,
        });
    }
    if den == 0 {
        return Err(Error::UndefinedMetric("no domain holds both classes".into()));
    }
    Ok(Gauc {
        value: num / den as f64,
        skipped,
        per_domain,
    })
}

/// Mean zero fraction of the factors per gated layer over `samples`, at
/// the checkpoint's inference `α`. Empty for the plain DNN.
pub fn layer_ratios(ckpt: &Checkpoint, samples: &[Sample]) -> Result<Vec<f64>> {
    let Some(method) = ckpt.inference_method()? else {
        return Ok(Vec::new());
    };
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let widths = ckpt.model.backbone.gate_widths();
    let zeros = samples
        .par_iter()
        .map(|s| {
            let pis = ckpt.model.factors(s, &method)?;
            Ok(pis.iter().map(|pi| pi.iter().filter(|&&x| x == 0.0).count()).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    Ok(widths
        .iter()
        .enumerate()
        .map(|(l, &n)| zeros.iter().map(|z| z[l]).sum::<usize>() as f64 / (n * samples.len()) as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub logloss: f64,
    pub auc: f64,
    pub gauc: f64,
    pub skipped_groups: usize,
    pub per_domain: Vec<DomainAuc>,
    pub layer_ratios: Vec<f64>,
}

impl EvalReport {
    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples={}", self.samples);
        let _ = writeln!(out, "logloss={}", self.logloss);
        let _ = writeln!(out, "auc={}", self.auc);
        let _ = writeln!(out, "gauc={}", self.gauc);
        let _ = writeln!(out, "skipped_groups={}", self.skipped_groups);
        for (l, r) in self.layer_ratios.iter().enumerate() {
            let _ = writeln!(out, "r_layer{l}={r}");
        }
        for d in &self.per_domain {
            let auc = d.auc.map_or_else(|| "undefined".to_string(), |a| a.to_string());
            let _ = writeln!(out, "domain[{}].impressions={}", d.domain, d.impressions);
            let _ = writeln!(out, "domain[{}].auc={auc}", d.domain);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }
}

pub fn evaluate(ckpt: &Checkpoint, samples: &[Sample]) -> Result<EvalReport> {
    let scores = ckpt.predict(samples)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let domains: Vec<DomainId> = samples.iter().map(Sample::domain_id).collect();
    let auc = auc(&scores, &labels)?;
    let g = gauc(&scores, &labels, &domains)?;
    Ok(EvalReport {
        samples: samples.len(),
        logloss: logloss(&scores, &labels)?,
        auc,
        gauc: g.value,
        skipped_groups: g.skipped,
        per_domain: g.per_domain,
        layer_ratios: layer_ratios(ckpt, samples)?,
    })
}

/// Majority-vote binary mask per gated layer for one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainMask {
    pub layers: Vec<Vec<u8>>,
    pub samples: usize,
}

/// Votes `π > 0` per neuron over `samples`; ties keep the neuron.
pub fn domain_mask(ckpt: &Checkpoint, samples: &[Sample]) -> Result<DomainMask> {
    if samples.is_empty() {
        return Err(Error::UndefinedMetric("mask of a domain without samples".into()));
    }
    let method = ckpt
        .inference_method()?
        .filter(|m| m.kind().prunes())
        .ok_or_else(|| Error::Config(format!("method {} produces no binary mask", ckpt.config.method)))?;
    let votes = samples
        .par_iter()
        .map(|s| ckpt.model.factors(s, &method))
        .collect::<Result<Vec<_>>>()?;
    let layers = (0..votes[0].len())
        .map(|l| {
            (0..votes[0][l].len())
                .map(|i| {
                    let on = votes.iter().filter(|v| v[l][i] > 0.0).count();
                    u8::from(2 * on >= samples.len())
                })
                .collect()
        })
        .collect();
    Ok(DomainMask {
        layers,
        samples: samples.len(),
    })
}

/// `|a ∩ b| / |a ∪ b|` over kept neurons of one layer; 1 when both are empty.
pub fn mask_jaccard(a: &DomainMask, b: &DomainMask, layer: usize) -> Result<f64> {
    let (Some(x), Some(y)) = (a.layers.get(layer), b.layers.get(layer)) else {
        return Err(Error::Shape(format!("mask has no layer {layer}")));
    };
    if x.len() != y.len() {
        return Err(Error::Shape(format!("layer {layer}: widths {} and {}", x.len(), y.len())));
    }
    let inter = x.iter().zip(y).filter(|(&p, &q)| p == 1 && q == 1).count();
    let union = x.iter().zip(y).filter(|(&p, &q)| p == 1 || q == 1).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    credit += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        credit / pairs
    }

    fn mask(bits: &[u8]) -> DomainMask {
        DomainMask {
            layers: vec![bits.to_vec()],
            samples: 1,
        }
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.3], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 5], &[0, 1, 1, 0, 1]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn gauc_cases() {
        let d = |k: u32| DomainId(vec![k]);
        let g = gauc(&[0.1, 0.9, 0.5, 0.5], &[0, 1, 0, 1], &[d(0), d(0), d(1), d(1)]).unwrap();
        assert_eq!(g.value, 0.75);
        assert_eq!(g.skipped, 0);
        let g = gauc(&[0.1, 0.9, 0.2, 0.3], &[0, 1, 1, 1], &[d(0), d(0), d(1), d(1)]).unwrap();
        assert_eq!((g.value, g.skipped), (1.0, 1));
        let s = [0.2, 0.7, 0.4, 0.1];
        let y = [0, 1, 1, 0];
        assert_eq!(gauc(&s, &y, &vec![d(3); 4]).unwrap().value, auc(&s, &y).unwrap());
    }

    #[test]
    fn logloss_cases() {
        assert!((logloss(&[0.5; 3], &[1, 0, 1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(logloss(&[1.0, 0.0], &[1, 0]).unwrap() < 1e-11);
        let hand = -((0.9f64).ln() + (0.8f64).ln() + (0.6f64).ln()) / 3.0;
        assert!((logloss(&[0.9, 0.2, 0.6], &[1, 0, 1]).unwrap() - hand).abs() < 1e-12);
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(mask_jaccard(&mask(&[1, 1, 0, 0]), &mask(&[1, 0, 1, 0]), 0).unwrap(), 1.0 / 3.0);
        assert_eq!(mask_jaccard(&mask(&[1, 0]), &mask(&[0, 1]), 0).unwrap(), 0.0);
        assert_eq!(mask_jaccard(&mask(&[0, 0]), &mask(&[0, 0]), 0).unwrap(), 1.0);
        assert!(mask_jaccard(&mask(&[1]), &mask(&[1, 0]), 0).is_err());
        assert!(mask_jaccard(&mask(&[1]), &mask(&[1]), 1).is_err());
    }

    proptest! {
        #[test]
        fn rank_auc_equals_pairwise(
            data in prop::collection::vec((0u8..6, 0u8..2), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| f64::from(s) / 5.0).collect();
            let labels: Vec<u8> = data.iter().map(|&(_, y)| y).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            prop_assert_eq!(auc(&scores, &labels).unwrap(), pairwise(&scores, &labels));
        }

        #[test]
        fn auc_monotone_invariant(
            data in prop::collection::vec((-5.0f64..5.0, 0u8..2), 2..100)
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| s).collect();
            let labels: Vec<u8> = data.iter().map(|&(_, y)| y).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let moved: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp()).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&moved, &labels).unwrap());
        }

        #[test]
        fn jaccard_symmetric(a in prop::collection::vec(0u8..2, 1..40), seed in any::<u64>()) {
            let b: Vec<u8> = a.iter().enumerate().map(|(i, &x)| x ^ ((seed >> (i % 64)) & 1) as u8).collect();
            let (ma, mb) = (mask(&a), mask(&b));
            prop_assert_eq!(mask_jaccard(&ma, &mb, 0).unwrap(), mask_jaccard(&mb, &ma, 0).unwrap());
            prop_assert_eq!(mask_jaccard(&ma, &ma, 0).unwrap(), 1.0);
        }
    }
}
