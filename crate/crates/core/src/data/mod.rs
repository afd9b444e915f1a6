//! Samples, domain keys, and dataset partitioning.
//!
//! A domain is identified by the tuple of a sample's domain-aware feature
//! values. Everything else in the sample is domain-agnostic.

mod csv_io;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use csv_io::{load_csv, write_csv, CsvData};
pub use synthetic::{generate_synthetic, DatasetSpec, Rule, RuleStyle};

use crate::error::{Error, Result};

/// Field layout shared by samples, vocabularies and embedding tables.
/// Domain-aware fields always come first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub domain_fields: Vec<String>,
    pub agnostic_fields: Vec<String>,
}

impl Schema {
    pub fn new(domain_fields: Vec<String>, agnostic_fields: Vec<String>) -> Result<Self> {
        if domain_fields.is_empty() {
            return Err(Error::Schema("at least one domain-aware field is required".into()));
        }
        let schema = Schema {
            domain_fields,
            agnostic_fields,
        };
        let mut seen = std::collections::HashSet::new();
        for f in schema.all_fields() {
            if f.is_empty() || f.contains(',') || f == "label" || f == "timestamp" {
                return Err(Error::Schema(format!("invalid field name {f:?}")));
            }
            if !seen.insert(f) {
                return Err(Error::Schema(format!("duplicate field {f:?}")));
            }
        }
        Ok(schema)
    }

    pub fn all_fields(&self) -> impl Iterator<Item = &str> {
        self.domain_fields.iter().chain(&self.agnostic_fields).map(String::as_str)
    }

    pub fn field_count(&self) -> usize {
        self.domain_fields.len() + self.agnostic_fields.len()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema is always serializable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: Schema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Schema::new(raw.domain_fields, raw.agnostic_fields)
    }
}

/// One labeled impression. Feature values are vocabulary row indices,
/// positionally aligned with the [`Schema`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    pub domain: Vec<u32>,
    pub agnostic: Vec<u32>,
    pub label: u8,
    pub timestamp: i64,
}

impl Sample {
    pub fn domain_id(&self) -> DomainId {
        DomainId(self.domain.clone())
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Tuple of domain-aware feature indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DomainId(pub Vec<u32>);

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Train/dev/test partition in timestamp order.
#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Sizes of a 4:1:1 split of `n` rows. Train takes `ceil(2n/3)`, dev
/// `floor(n/6)`, test the rest; each stays within one row of its exact share.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (2 * n).div_ceil(3);
    let dev = n / 6;
    (train, dev, n - train - dev)
}

/// Stable sort by timestamp, then cut 4:1:1 into train/dev/test.
pub fn split_by_timestamp(mut samples: Vec<Sample>) -> Split {
    samples.sort_by_key(|s| s.timestamp);
    let (n_train, n_dev, _) = split_sizes(samples.len());
    let test = samples.split_off(n_train + n_dev);
    let dev = samples.split_off(n_train);
    Split {
        train: samples,
        dev,
        test,
    }
}

/// Indices of each domain's samples, in input order.
pub fn partition_by_domain(samples: &[Sample]) -> BTreeMap<DomainId, Vec<usize>> {
    let mut parts: BTreeMap<DomainId, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        parts.entry(s.domain_id()).or_default().push(i);
    }
    parts
}
