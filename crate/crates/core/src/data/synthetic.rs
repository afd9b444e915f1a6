//! Synthetic multi-domain CTR data.
//!
//! Each domain draws labels from `Bernoulli(σ(logit))` where the logit is a
//! linear rule over one-hot agnostic features. Rules live in groups so that
//! several domains can share one (similar domains) while others differ.
//! Domain sizes follow a power-law long tail.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Sample, Schema};
use crate::embedding::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::sigmoid_scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleStyle {
    /// Every rule picks its own random subset of agnostic fields.
    Independent,
    /// Rule `g` uses the `g`-th consecutive block of agnostic fields, so
    /// distinct rules touch disjoint fields as long as the blocks fit.
    Disjoint,
    /// All rules share one field subset. The first half of it carries the
    /// same weights everywhere; on the second half odd-numbered rules use
    /// the negated weights of even-numbered ones.
    Conflicting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Cardinality of each domain-aware field; domains are their product.
    pub domain_field_cardinalities: Vec<u32>,
    pub agnostic_field_cardinalities: Vec<u32>,
    pub total_samples: usize,
    /// Domain `d` (0-based) gets a share proportional to `(d + 1)^-tail_exponent`.
    pub tail_exponent: f64,
    pub rule_seed: u64,
    pub rule_style: RuleStyle,
    /// Rule group of each domain. Empty means one rule per domain.
    pub rule_groups: Vec<usize>,
    /// Number of agnostic fields each rule reads.
    pub active_fields: usize,
    /// Std-dev of per-value rule weights.
    pub weight_scale: f64,
    /// Std-dev of each rule's intercept.
    pub intercept_scale: f64,
    pub base_logit: f64,
    /// Timestamps are uniform in `[0, timestamp_range)`.
    pub timestamp_range: i64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            domain_field_cardinalities: vec![4],
            agnostic_field_cardinalities: vec![10; 8],
            total_samples: 20_000,
            tail_exponent: 1.0,
            rule_seed: 1,
            rule_style: RuleStyle::Independent,
            rule_groups: Vec::new(),
            active_fields: 4,
            weight_scale: 1.0,
            intercept_scale: 0.3,
            base_logit: 0.0,
            timestamp_range: 1_000_000,
        }
    }
}

/// Ground-truth logit rule of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub intercept: f64,
    /// `(agnostic field index, weight per value)`.
    pub terms: Vec<(usize, Vec<f64>)>,
}

impl Rule {
    pub fn logit(&self, agnostic: &[u32]) -> f64 {
        self.intercept
            + self
                .terms
                .iter()
                .map(|(f, w)| w.get(agnostic[*f] as usize).copied().unwrap_or(0.0))
                .sum::<f64>()
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domain_field_cardinalities.is_empty() {
            return Err(Error::Spec("at least one domain-aware field is required".into()));
        }
        if self
            .domain_field_cardinalities
            .iter()
            .chain(&self.agnostic_field_cardinalities)
            .any(|&c| c == 0)
        {
            return Err(Error::Spec("field cardinalities must be >= 1".into()));
        }
        if self.domain_count() < 2 {
            return Err(Error::Spec("at least 2 domains are required".into()));
        }
        if self.active_fields > self.agnostic_field_cardinalities.len() {
            return Err(Error::Spec(format!(
                "active_fields = {} exceeds {} agnostic fields",
                self.active_fields,
                self.agnostic_field_cardinalities.len()
            )));
        }
        if !self.rule_groups.is_empty() && self.rule_groups.len() != self.domain_count() {
            return Err(Error::Spec(format!(
                "rule_groups has {} entries for {} domains",
                self.rule_groups.len(),
                self.domain_count()
            )));
        }
        if !(self.tail_exponent.is_finite() && self.tail_exponent >= 0.0) {
            return Err(Error::Spec("tail_exponent must be finite and >= 0".into()));
        }
        if !(self.weight_scale >= 0.0 && self.intercept_scale >= 0.0 && self.base_logit.is_finite()) {
            return Err(Error::Spec("weight scales must be >= 0".into()));
        }
        if self.timestamp_range <= 0 {
            return Err(Error::Spec("timestamp_range must be positive".into()));
        }
        Ok(())
    }

    pub fn domain_count(&self) -> usize {
        self.domain_field_cardinalities.iter().map(|&c| c as usize).product()
    }

    pub fn schema(&self) -> Schema {
        let domain_fields = if self.domain_field_cardinalities.len() == 1 {
            vec!["domain".to_string()]
        } else {
            (0..self.domain_field_cardinalities.len()).map(|i| format!("domain{i}")).collect()
        };
        let agnostic_fields = (0..self.agnostic_field_cardinalities.len()).map(|i| format!("f{i}")).collect();
        Schema {
            domain_fields,
            agnostic_fields,
        }
    }

    /// Vocabulary mapping value `"k"` to row `k` in every field.
    pub fn vocabulary(&self) -> Vocabulary {
        let cards = self.domain_field_cardinalities.iter().chain(&self.agnostic_field_cardinalities);
        let mut vocab = Vocabulary::new(&self.schema());
        for (f, &c) in cards.enumerate() {
            for v in 0..c {
                vocab.encode(f, &v.to_string());
            }
        }
        vocab.freeze();
        vocab
    }

    /// Domain-aware feature tuple of domain `d`, first field most significant.
    pub fn domain_values(&self, mut d: usize) -> Vec<u32> {
        let mut out = vec![0; self.domain_field_cardinalities.len()];
        for (slot, &c) in out.iter_mut().zip(&self.domain_field_cardinalities).rev() {
            *slot = (d % c as usize) as u32;
            d /= c as usize;
        }
        out
    }

    pub fn domain_index(&self, values: &[u32]) -> usize {
        values
            .iter()
            .zip(&self.domain_field_cardinalities)
            .fold(0, |acc, (&v, &c)| acc * c as usize + v as usize)
    }

    pub fn group_of(&self, domain: usize) -> usize {
        if self.rule_groups.is_empty() {
            domain
        } else {
            self.rule_groups[domain]
        }
    }

    /// Sample count per domain, largest-remainder rounding of the power law.
    pub fn domain_counts(&self) -> Vec<usize> {
        let n = self.domain_count();
        let shares: Vec<f64> = (0..n).map(|d| ((d + 1) as f64).powf(-self.tail_exponent)).collect();
        let total: f64 = shares.iter().sum();
        let exact: Vec<f64> = shares.iter().map(|s| s / total * self.total_samples as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut left = self.total_samples - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for d in order {
            if left == 0 {
                break;
            }
            counts[d] += 1;
            left -= 1;
        }
        counts
    }

    /// The ground-truth rule of every group, indexed by group id.
    pub fn rules(&self) -> Vec<Rule> {
        let groups = (0..self.domain_count()).map(|d| self.group_of(d)).max().unwrap_or(0) + 1;
        let n_fields = self.agnostic_field_cardinalities.len();
        let k = self.active_fields;
        let weight = Normal::new(0.0, self.weight_scale.max(0.0)).expect("finite scale");
        let intercept = Normal::new(0.0, self.intercept_scale.max(0.0)).expect("finite scale");

        let mut shared_rng = ChaCha8Rng::seed_from_u64(self.rule_seed);
        let shared_fields: Vec<usize> = index::sample(&mut shared_rng, n_fields, k).into_vec();
        let shared_weights: Vec<Vec<f64>> = shared_fields
            .iter()
            .map(|&f| {
                (0..self.agnostic_field_cardinalities[f])
                    .map(|_| weight.sample(&mut shared_rng))
                    .collect()
            })
            .collect();

        (0..groups)
            .map(|g| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(self.rule_seed, g as u64 + 1));
                let b = intercept.sample(&mut rng);
                let terms = match self.rule_style {
                    RuleStyle::Conflicting => {
                        let sign = if g % 2 == 0 { 1.0 } else { -1.0 };
                        shared_fields
                            .iter()
                            .zip(&shared_weights)
                            .enumerate()
                            .map(|(j, (&f, w))| {
                                let s = if j < k / 2 { 1.0 } else { sign };
                                (f, w.iter().map(|x| s * x).collect())
                            })
                            .collect()
                    }
                    RuleStyle::Independent | RuleStyle::Disjoint => {
                        let fields: Vec<usize> = if self.rule_style == RuleStyle::Disjoint {
                            (0..k).map(|j| (g * k + j) % n_fields.max(1)).collect()
                        } else {
                            index::sample(&mut rng, n_fields, k).into_vec()
                        };
                        fields
                            .into_iter()
                            .map(|f| {
                                let w = (0..self.agnostic_field_cardinalities[f])
                                    .map(|_| weight.sample(&mut rng))
                                    .collect();
                                (f, w)
                            })
                            .collect()
                    }
                };
                Rule { intercept: b, terms }
            })
            .collect()
    }

    /// Ground-truth click probability of a sample under this spec.
    pub fn click_probability(&self, rules: &[Rule], sample: &Sample) -> f64 {
        let g = self.group_of(self.domain_index(&sample.domain));
        sigmoid_scalar(self.base_logit + rules[g].logit(&sample.agnostic))
    }
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate the dataset described by `spec`. Pure in `(spec, seed)`:
/// domains are generated independently and concatenated in domain order.
pub fn generate_synthetic(spec: &DatasetSpec, seed: u64) -> Result<Vec<Sample>> {
    spec.validate()?;
    let rules = spec.rules();
    let counts = spec.domain_counts();
    let per_domain: Vec<Vec<Sample>> = counts
        .par_iter()
        .enumerate()
        .map(|(d, &count)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, d as u64));
            let rule = &rules[spec.group_of(d)];
            let domain = spec.domain_values(d);
            (0..count)
                .map(|_| {
                    let agnostic: Vec<u32> = spec
                        .agnostic_field_cardinalities
                        .iter()
                        .map(|&c| rng.random_range(0..c))
                        .collect();
                    let p = sigmoid_scalar(spec.base_logit + rule.logit(&agnostic));
                    let label = u8::from(rng.random::<f64>() < p);
                    let timestamp = rng.random_range(0..spec.timestamp_range);
                    Sample {
                        domain: domain.clone(),
                        agnostic,
                        label,
                        timestamp,
                    }
                })
                .collect()
        })
        .collect();
    Ok(per_domain.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::partition_by_domain;

    fn two_domains() -> DatasetSpec {
        DatasetSpec {
            domain_field_cardinalities: vec![2],
            agnostic_field_cardinalities: vec![5, 5, 5],
            total_samples: 2000,
            tail_exponent: 0.0,
            active_fields: 2,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = two_domains();
        let a = generate_synthetic(&spec, 7).unwrap();
        let b = generate_synthetic(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(spec.domain_counts(), vec![1000, 1000]);
        let c = generate_synthetic(&spec, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_rule_gives_half_ctr() {
        let spec = DatasetSpec {
            total_samples: 10_000,
            weight_scale: 0.0,
            intercept_scale: 0.0,
            ..two_domains()
        };
        let s = generate_synthetic(&spec, 11).unwrap();
        let ctr = s.iter().filter(|x| x.is_positive()).count() as f64 / s.len() as f64;
        // 0.05 is > 9 standard errors of a fair coin at n = 10k
        assert!((ctr - 0.5).abs() <= 0.05, "ctr = {ctr}");
    }

    #[test]
    fn long_tail_sizes() {
        let spec = DatasetSpec {
            domain_field_cardinalities: vec![8],
            tail_exponent: 1.5,
            total_samples: 50_000,
            ..DatasetSpec::default()
        };
        let counts = spec.domain_counts();
        assert_eq!(counts.iter().sum::<usize>(), 50_000);
        let max = *counts.iter().max().unwrap();
        let min = *counts.iter().min().unwrap();
        assert!(max >= 10 * min, "{counts:?}");
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn partitions_match_generator_counts() {
        let spec = DatasetSpec {
            domain_field_cardinalities: vec![2, 3],
            tail_exponent: 1.2,
            total_samples: 3000,
            ..DatasetSpec::default()
        };
        let s = generate_synthetic(&spec, 5).unwrap();
        let parts = partition_by_domain(&s);
        let counts = spec.domain_counts();
        for (id, idx) in parts {
            assert_eq!(idx.len(), counts[spec.domain_index(&id.0)]);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let one_domain = DatasetSpec {
            domain_field_cardinalities: vec![1],
            ..DatasetSpec::default()
        };
        assert!(matches!(generate_synthetic(&one_domain, 0), Err(Error::Spec(_))));
        let zero_card = DatasetSpec {
            agnostic_field_cardinalities: vec![3, 0],
            active_fields: 1,
            ..DatasetSpec::default()
        };
        assert!(matches!(generate_synthetic(&zero_card, 0), Err(Error::Spec(_))));
        let bad_groups = DatasetSpec {
            rule_groups: vec![0, 1],
            ..DatasetSpec::default()
        };
        assert!(bad_groups.validate().is_err());
    }

    #[test]
    fn shared_group_means_shared_rule() {
        let spec = DatasetSpec {
            domain_field_cardinalities: vec![3],
            rule_groups: vec![0, 0, 1],
            rule_style: RuleStyle::Disjoint,
            ..DatasetSpec::default()
        };
        let rules = spec.rules();
        assert_eq!(rules.len(), 2);
        let f0: Vec<usize> = rules[0].terms.iter().map(|t| t.0).collect();
        let f1: Vec<usize> = rules[1].terms.iter().map(|t| t.0).collect();
        assert!(f0.iter().all(|f| !f1.contains(f)));
    }

    #[test]
    fn conflicting_rules_flip_sign() {
        let spec = DatasetSpec {
            rule_style: RuleStyle::Conflicting,
            ..DatasetSpec::default()
        };
        let rules = spec.rules();
        let (a, b) = (&rules[0], &rules[1]);
        for (j, ((fa, wa), (fb, wb))) in a.terms.iter().zip(&b.terms).enumerate() {
            assert_eq!(fa, fb);
            let s = if j < spec.active_fields / 2 { 1.0 } else { -1.0 };
            assert!(wa.iter().zip(wb).all(|(x, y)| *y == s * x));
        }
    }

    #[test]
    fn domain_index_roundtrip() {
        let spec = DatasetSpec {
            domain_field_cardinalities: vec![3, 4],
            ..DatasetSpec::default()
        };
        for d in 0..12 {
            assert_eq!(spec.domain_index(&spec.domain_values(d)), d);
        }
        assert_eq!(spec.domain_values(5), vec![1, 1]);
    }
}
