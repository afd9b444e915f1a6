//! Categorical vocabularies and per-field embedding tables.
//!
//! Every field owns a table with one row per known value plus a reserved
//! out-of-vocabulary row at index `cardinality`.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::data::{Sample, Schema};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const OOV_LABEL: &str = "<oov>";

#[derive(Debug, Clone, PartialEq, Default)]
struct FieldVocab {
    name: String,
    values: Vec<String>,
    index: HashMap<String, u32>,
}

/// Per-field map from categorical string to dense row index.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    fields: Vec<FieldVocab>,
    frozen: bool,
}

impl Vocabulary {
    /// Empty, growable vocabulary over the schema's fields.
    pub fn new(schema: &Schema) -> Self {
        Vocabulary {
            fields: schema
                .all_fields()
                .map(|name| FieldVocab {
                    name: name.to_string(),
                    ..FieldVocab::default()
                })
                .collect(),
            frozen: false,
        }
    }

    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }

    /// Number of known values of field `f`.
    pub fn cardinality(&self, f: usize) -> usize {
        self.fields[f].values.len()
    }

    pub fn oov_index(&self, f: usize) -> u32 {
        self.fields[f].values.len() as u32
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Stop assigning new indices; unknown values map to the OOV row from now on.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn lookup(&self, f: usize, value: &str) -> u32 {
        self.fields[f]
            .index
            .get(value)
            .copied()
            .unwrap_or_else(|| self.oov_index(f))
    }

    /// Like [`lookup`](Self::lookup), but a growable vocabulary inserts unseen values.
    pub fn encode(&mut self, f: usize, value: &str) -> u32 {
        if let Some(&i) = self.fields[f].index.get(value) {
            return i;
        }
        if self.frozen {
            return self.oov_index(f);
        }
        let field = &mut self.fields[f];
        let i = field.values.len() as u32;
        field.values.push(value.to_string());
        field.index.insert(value.to_string(), i);
        i
    }

    pub fn decode(&self, f: usize, index: u32) -> &str {
        self.fields[f]
            .values
            .get(index as usize)
            .map_or(OOV_LABEL, String::as_str)
    }

    /// Plain-text export, one `field,value,index` triple per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for field in &self.fields {
            for (i, v) in field.values.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", field.name, v, i));
            }
        }
        out
    }

    /// Inverse of [`to_text`](Self::to_text). The result is frozen.
    pub fn from_text(schema: &Schema, text: &str) -> Result<Self> {
        let mut vocab = Vocabulary::new(schema);
        let by_name: HashMap<String, usize> = vocab
            .fields
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.clone(), i))
            .collect();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Schema(format!("vocabulary line {}: {line:?}", lineno + 1));
            let mut parts = line.splitn(3, ',');
            let (Some(field), Some(value), Some(index)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad());
            };
            let &f = by_name.get(field).ok_or_else(bad)?;
            let index: u32 = index.parse().map_err(|_| bad())?;
            if index as usize != vocab.fields[f].values.len() {
                return Err(Error::Schema(format!(
                    "vocabulary line {}: index {index} is not dense",
                    lineno + 1
                )));
            }
            vocab.encode(f, value);
        }
        vocab.freeze();
        Ok(vocab)
    }
}

/// Per-field embedding matrices of shape `(cardinality + 1) x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    n_domain: usize,
    tables: Vec<Matrix>,
}

/// Sparse gradient: `(field, row) -> dL/drow`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowGrads(pub BTreeMap<(usize, usize), Vec<f64>>);

impl RowGrads {
    pub fn add_row(&mut self, field: usize, row: usize, grad: &[f64]) {
        let slot = self.0.entry((field, row)).or_insert_with(|| vec![0.0; grad.len()]);
        for (a, g) in slot.iter_mut().zip(grad) {
            *a += g;
        }
    }

    pub fn merge(&mut self, other: &RowGrads) {
        for (&(f, r), g) in &other.0 {
            self.add_row(f, r, g);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl EmbeddingTable {
    /// Uniform init in `[-init_scale, init_scale]`.
    pub fn new<R: Rng + ?Sized>(vocab: &Vocabulary, n_domain: usize, dim: usize, init_scale: f64, rng: &mut R) -> Self {
        let tables = (0..vocab.field_count())
            .map(|f| Matrix::uniform(vocab.cardinality(f) + 1, dim, init_scale, rng))
            .collect();
        EmbeddingTable { dim, n_domain, tables }
    }

    pub fn from_tables(n_domain: usize, tables: Vec<Matrix>) -> Result<Self> {
        let dim = tables.first().map_or(0, Matrix::cols);
        if tables.iter().any(|t| t.cols() != dim || t.rows() == 0) {
            return Err(Error::Shape("embedding tables must share one dim and be non-empty".into()));
        }
        if n_domain > tables.len() {
            return Err(Error::Shape("more domain fields than tables".into()));
        }
        Ok(EmbeddingTable { dim, n_domain, tables })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain_width(&self) -> usize {
        self.n_domain * self.dim
    }

    pub fn agnostic_width(&self) -> usize {
        (self.tables.len() - self.n_domain) * self.dim
    }

    pub fn tables(&self) -> &[Matrix] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [Matrix] {
        &mut self.tables
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.domain.len() != self.n_domain || sample.domain.len() + sample.agnostic.len() != self.tables.len() {
            return Err(Error::Schema(format!(
                "sample has {}+{} fields, tables expect {}+{}",
                sample.domain.len(),
                sample.agnostic.len(),
                self.n_domain,
                self.tables.len() - self.n_domain
            )));
        }
        Ok(())
    }

    /// Row index used for `value` in field `f`; out-of-range values use the OOV row.
    fn row_of(&self, f: usize, value: u32) -> usize {
        let rows = self.tables[f].rows();
        (value as usize).min(rows - 1)
    }

    fn lookups<'a>(&'a self, sample: &'a Sample) -> impl Iterator<Item = (usize, usize)> + 'a {
        sample
            .domain
            .iter()
            .chain(&sample.agnostic)
            .enumerate()
            .map(|(f, &v)| (f, self.row_of(f, v)))
    }

    /// Returns `(e_d, e_a)`: domain-aware and domain-agnostic rows
    /// concatenated in field order.
    pub fn embed(&self, sample: &Sample) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_sample(sample)?;
        let mut e_d = Vec::with_capacity(self.domain_width());
        let mut e_a = Vec::with_capacity(self.agnostic_width());
        for (f, row) in self.lookups(sample) {
            let target = if f < self.n_domain { &mut e_d } else { &mut e_a };
            target.extend_from_slice(self.tables[f].row(row));
        }
        Ok((e_d, e_a))
    }

    /// Routes `dL/de_d` and `dL/de_a` to the rows `embed` looked up,
    /// adding into `grads`.
    pub fn embed_backward(&self, grad_e_d: &[f64], grad_e_a: &[f64], sample: &Sample, grads: &mut RowGrads) -> Result<()> {
        self.check_sample(sample)?;
        if grad_e_d.len() != self.domain_width() || grad_e_a.len() != self.agnostic_width() {
            return Err(Error::Shape(format!(
                "embedding gradient lengths {}+{} do not match layout {}+{}",
                grad_e_d.len(),
                grad_e_a.len(),
                self.domain_width(),
                self.agnostic_width()
            )));
        }
        for (f, row) in self.lookups(sample) {
            let (src, k) = if f < self.n_domain {
                (grad_e_d, f)
            } else {
                (grad_e_a, f - self.n_domain)
            };
            grads.add_row(f, row, &src[k * self.dim..(k + 1) * self.dim]);
        }
        Ok(())
    }

    /// Dense view of a sparse gradient, one matrix per field.
    pub fn densify(&self, grads: &RowGrads) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = self.tables.iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        for (&(f, r), g) in &grads.0 {
            for (a, b) in out[f].row_mut(r).iter_mut().zip(g) {
                *a += b;
            }
        }
        out
    }
}
