//! The full model: embeddings, gated backbone and optional pruner, with a
//! batch loss/gradient routine shared by training and gradient checks.

use rand::Rng;
use rayon::prelude::*;

use crate::backbone::{BackboneState, DenseGrads, Dense, ForwardCache, Ungated};
use crate::data::Sample;
use crate::embedding::{EmbeddingTable, RowGrads, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::pruner::{
    gradient_through_sparsity, sparsity_loss, sparsity_loss_grad, FactorMethod, FactorVector, PrunerBackprop,
    PrunerForward, PrunerState, SparsityBoundary,
};

use super::adam::AdamState;

/// Samples per parallel work unit. Fixed so the reduction order, and hence
/// every floating-point sum, does not depend on the thread count.
const CHUNK: usize = 16;

/// Probability clamp used by the loss.
pub const P_CLAMP: f64 = 1e-12;

/// `-(y ln p + (1 - y) ln(1 - p))` with `p` clamped to `[1e-12, 1 - 1e-12]`.
pub fn cross_entropy(y: u8, p: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub embeddings: EmbeddingTable,
    pub backbone: BackboneState,
    pub pruner: Option<PrunerState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub embeddings: RowGrads,
    pub backbone: DenseGrads,
    pub pruner: Option<DenseGrads>,
}

impl ModelGrads {
    pub fn merge(&mut self, other: &ModelGrads) -> Result<()> {
        self.embeddings.merge(&other.embeddings);
        self.backbone.add_assign(&other.backbone)?;
        match (&mut self.pruner, &other.pruner) {
            (Some(a), Some(b)) => a.add_assign(b),
            (None, None) => Ok(()),
            _ => Err(Error::Shape("pruner gradients present on one side only".into())),
        }
    }
}

/// Batch-level result of [`Model::batch_grads`].
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Mean cross-entropy.
    pub ce: f64,
    /// `R_s` at the batch ratios (0 when the regularizer is off).
    pub sparsity: f64,
    /// Batch-mean zero fraction per gated layer (empty without a pruner).
    pub ratios: Vec<f64>,
    pub p_ctr: Vec<f64>,
    pub grads: ModelGrads,
}

impl BatchOutcome {
    pub fn loss(&self) -> f64 {
        self.ce + self.sparsity
    }
}

/// Regularizer settings for one step.
#[derive(Debug, Clone, Copy)]
pub struct Regularizer {
    pub boundary: SparsityBoundary,
    pub lambda_hat: f64,
}

struct SampleForward {
    p_ctr: f64,
    e_d: Vec<f64>,
    cache: ForwardCache,
    factors: Vec<FactorVector>,
}

impl Model {
    /// Fresh model. `with_pruner` adds one pruner layer per backbone layer.
    pub fn new<R: Rng + ?Sized>(
        vocab: &Vocabulary,
        n_domain: usize,
        embed_dim: usize,
        embed_init: f64,
        hidden: &[usize],
        with_pruner: bool,
        rng: &mut R,
    ) -> Self {
        let embeddings = EmbeddingTable::new(vocab, n_domain, embed_dim, embed_init, rng);
        let width = embeddings.domain_width() + embeddings.agnostic_width();
        let backbone = BackboneState::new(width, hidden, rng);
        let pruner = with_pruner.then(|| PrunerState::new(embeddings.domain_width(), &backbone.gate_widths(), rng));
        Model {
            embeddings,
            backbone,
            pruner,
        }
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            embeddings: RowGrads::default(),
            backbone: self.backbone.zero_grads(),
            pruner: self.pruner.as_ref().map(PrunerState::zero_grads),
        }
    }

    fn check_method(&self, method: Option<&FactorMethod>) -> Result<()> {
        if method.is_some() && self.pruner.is_none() {
            return Err(Error::State("factor method given but the model has no pruner".into()));
        }
        Ok(())
    }

    fn forward_sample(&self, sample: &Sample, method: Option<&FactorMethod>) -> Result<SampleForward> {
        let (e_d, e_a) = self.embeddings.embed(sample)?;
        match (method, &self.pruner) {
            (Some(m), Some(pruner)) => {
                let mut gate = PrunerForward::new(pruner, *m, &e_d);
                let fwd = self.backbone.forward(&e_d, &e_a, &mut gate)?;
                let factors = gate.factors;
                Ok(SampleForward {
                    p_ctr: fwd.p_ctr,
                    cache: fwd.cache,
                    e_d,
                    factors,
                })
            }
            _ => {
                let fwd = self.backbone.forward(&e_d, &e_a, &mut Ungated)?;
                Ok(SampleForward {
                    p_ctr: fwd.p_ctr,
                    cache: fwd.cache,
                    e_d,
                    factors: Vec::new(),
                })
            }
        }
    }

    /// pCTR for each sample; `method = None` runs the backbone ungated.
    pub fn predict(&self, samples: &[Sample], method: Option<&FactorMethod>) -> Result<Vec<f64>> {
        self.check_method(method)?;
        let chunks: Vec<Result<Vec<f64>>> = samples
            .par_chunks(CHUNK)
            .map(|chunk| chunk.iter().map(|s| Ok(self.forward_sample(s, method)?.p_ctr)).collect())
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Per-sample factor vectors `π^l`, one `Vec` per layer.
    pub fn factors(&self, sample: &Sample, method: &FactorMethod) -> Result<Vec<Vec<f64>>> {
        self.check_method(Some(method))?;
        let fwd = self.forward_sample(sample, Some(method))?;
        Ok(fwd.factors.into_iter().map(|f| f.pi).collect())
    }

    /// Loss `mean CE + R_s` on `batch` and its gradients.
    ///
    /// The sparsity ratios are batch means, so the forward pass runs over
    /// the whole batch before any backward pass. `reg = None` (or a
    /// non-pruning method) leaves `R_s` out.
    pub fn batch_grads(&self, batch: &[&Sample], method: Option<&FactorMethod>, reg: Option<Regularizer>) -> Result<BatchOutcome> {
        self.check_method(method)?;
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let b = batch.len();
        let forwards: Vec<Result<Vec<SampleForward>>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| chunk.iter().map(|s| self.forward_sample(s, method)).collect())
            .collect();
        let mut forwards: Vec<Vec<SampleForward>> = forwards.into_iter().collect::<Result<_>>()?;

        let gated = method.is_some();
        let widths = self.backbone.gate_widths();
        let mut ratios = Vec::new();
        if gated {
            let mut zeros = vec![0usize; widths.len()];
            for fwd in forwards.iter().flatten() {
                for (z, fv) in zeros.iter_mut().zip(&fwd.factors) {
                    *z += fv.pi.iter().filter(|&&x| x == 0.0).count();
                }
            }
            ratios = zeros.iter().zip(&widths).map(|(&z, &n)| z as f64 / (n * b) as f64).collect();
        }
        let reg = reg.filter(|_| method.is_some_and(|m| m.kind().prunes()));
        let (sparsity, extra) = match reg {
            Some(r) => {
                let g = sparsity_loss_grad(&ratios, &r.boundary, r.lambda_hat);
                let extra = g.iter().zip(&widths).map(|(&g, &n)| gradient_through_sparsity(g, n, b)).collect();
                (sparsity_loss(&ratios, &r.boundary, r.lambda_hat), extra)
            }
            None => (0.0, vec![0.0; widths.len()]),
        };

        let partials: Vec<Result<(f64, ModelGrads)>> = forwards
            .par_iter_mut()
            .zip(batch.par_chunks(CHUNK))
            .map(|(fwds, samples)| {
                let mut grads = self.zero_grads();
                let mut ce = 0.0;
                for (fwd, sample) in fwds.iter_mut().zip(samples) {
                    ce += cross_entropy(sample.label, fwd.p_ctr);
                    let grad_logit = (fwd.p_ctr - f64::from(sample.label)) / b as f64;
                    self.backward_sample(grad_logit, fwd, sample, &extra, &mut grads)?;
                }
                Ok((ce, grads))
            })
            .collect();

        let mut grads = self.zero_grads();
        let mut ce = 0.0;
        for part in partials {
            let (c, g) = part?;
            ce += c;
            grads.merge(&g)?;
        }
        let p_ctr = forwards.iter().flatten().map(|f| f.p_ctr).collect();
        Ok(BatchOutcome {
            ce: ce / b as f64,
            sparsity,
            ratios,
            p_ctr,
            grads,
        })
    }

    fn backward_sample(
        &self,
        grad_logit: f64,
        fwd: &mut SampleForward,
        sample: &Sample,
        extra: &[f64],
        grads: &mut ModelGrads,
    ) -> Result<()> {
        let back = match (&self.pruner, &mut grads.pruner, fwd.factors.is_empty()) {
            (Some(pruner), Some(pg), false) => {
                let mut grad_e_d = vec![0.0; fwd.e_d.len()];
                let mut hook = PrunerBackprop {
                    pruner,
                    factors: &mut fwd.factors,
                    grads: pg,
                    grad_e_d: &mut grad_e_d,
                    extra,
                };
                let mut back = self.backbone.backward(grad_logit, &mut fwd.cache, &mut hook, &mut grads.backbone)?;
                for (a, g) in back.grad_e_d.iter_mut().zip(&grad_e_d) {
                    *a += g;
                }
                back
            }
            _ => self.backbone.backward(grad_logit, &mut fwd.cache, &mut Ungated, &mut grads.backbone)?,
        };
        self.embeddings
            .embed_backward(&back.grad_e_d, &back.grad_e_a, sample, &mut grads.embeddings)
    }

    /// Every parameter as a matrix: embedding tables, then backbone
    /// `W, b` per layer, then pruner `W, b` per layer. Biases are `1 x n`.
    pub fn to_matrices(&self) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = self.embeddings.tables().to_vec();
        let dense = |out: &mut Vec<Matrix>, layers: &[Dense]| {
            for d in layers {
                out.push(d.weight.clone());
                out.push(Matrix::from_vec(1, d.bias.len(), d.bias.clone()).expect("bias row"));
            }
        };
        dense(&mut out, self.backbone.layers());
        if let Some(p) = &self.pruner {
            dense(&mut out, p.layers());
        }
        out
    }

    /// Inverse of [`to_matrices`](Self::to_matrices) given the layout counts.
    pub fn from_matrices(
        mats: Vec<Matrix>,
        n_fields: usize,
        n_domain: usize,
        n_layers: usize,
        with_pruner: bool,
    ) -> Result<Self> {
        let expected = n_fields + 2 * n_layers * if with_pruner { 2 } else { 1 };
        if mats.len() != expected {
            return Err(Error::Checkpoint(format!("expected {expected} matrices, found {}", mats.len())));
        }
        let mut it = mats.into_iter();
        let tables: Vec<Matrix> = it.by_ref().take(n_fields).collect();
        let embeddings = EmbeddingTable::from_tables(n_domain, tables)?;
        let mut take_dense = |k: usize| -> Result<Vec<Dense>> {
            (0..k)
                .map(|_| {
                    let weight = it.next().expect("counted");
                    let bias = it.next().expect("counted");
                    if bias.rows() != 1 || bias.cols() != weight.rows() {
                        return Err(Error::Checkpoint("bias row does not match its weight".into()));
                    }
                    Ok(Dense {
                        weight,
                        bias: bias.into_vec(),
                    })
                })
                .collect()
        };
        let backbone = BackboneState::from_layers(take_dense(n_layers)?)?;
        let pruner = if with_pruner {
            Some(PrunerState::from_layers(embeddings.domain_width(), take_dense(n_layers)?)?)
        } else {
            None
        };
        if backbone.input_width() != embeddings.domain_width() + embeddings.agnostic_width() {
            return Err(Error::Checkpoint("backbone input width disagrees with embeddings".into()));
        }
        if let Some(p) = &pruner {
            if p.layers().iter().zip(backbone.gate_widths()).any(|(d, n)| d.outputs() != n) {
                return Err(Error::Checkpoint("pruner widths disagree with backbone".into()));
            }
        }
        Ok(Model {
            embeddings,
            backbone,
            pruner,
        })
    }

    /// Gradients laid out like [`to_matrices`](Self::to_matrices), embeddings densified.
    pub fn grads_to_matrices(&self, grads: &ModelGrads) -> Vec<Matrix> {
        let mut out = self.embeddings.densify(&grads.embeddings);
        let mut dense = |layers: &[Dense]| {
            for d in layers {
                out.push(d.weight.clone());
                out.push(Matrix::from_vec(1, d.bias.len(), d.bias.clone()).expect("bias row"));
            }
        };
        dense(&grads.backbone.0);
        if let Some(p) = &grads.pruner {
            dense(&p.0);
        }
        out
    }

    /// Adam slots in [`to_matrices`](Self::to_matrices) order.
    pub fn adam_state(&self) -> AdamState {
        AdamState::for_params(&self.to_matrices())
    }

    /// One optimizer step. Embedding rows absent from `grads` are skipped.
    pub fn apply_adam(&mut self, grads: &ModelGrads, state: &mut AdamState, lr: f64) -> Result<()> {
        state.tick();
        let dim = self.embeddings.dim();
        let n_fields = self.embeddings.tables().len();
        for (&(f, row), g) in &grads.embeddings.0 {
            let table = &mut self.embeddings.tables_mut()[f];
            state.update(f, row * dim, table.row_mut(row), g, lr)?;
        }
        let mut slot = n_fields;
        let mut dense = |layers: &mut [Dense], gs: &[Dense], state: &mut AdamState| -> Result<()> {
            if layers.len() != gs.len() {
                return Err(Error::Shape("gradient layer count differs from model".into()));
            }
            for (d, g) in layers.iter_mut().zip(gs) {
                state.update(slot, 0, d.weight.as_mut_slice(), g.weight.as_slice(), lr)?;
                state.update(slot + 1, 0, &mut d.bias, &g.bias, lr)?;
                slot += 2;
            }
            Ok(())
        };
        dense(self.backbone.layers_mut(), &grads.backbone.0, state)?;
        match (&mut self.pruner, &grads.pruner) {
            (Some(p), Some(g)) => dense(p.layers_mut(), &g.0, state)?,
            (None, None) => {}
            _ => return Err(Error::Shape("pruner gradients do not match the model".into())),
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_matrices().iter().all(Matrix::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Schema;
    use crate::numerics::grad_check;
    use crate::pruner::FactorKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(seed: u64, with_pruner: bool) -> (Model, Vec<Sample>) {
        let schema = Schema::new(vec!["d".into()], vec!["a".into(), "b".into()]).unwrap();
        let mut vocab = Vocabulary::new(&schema);
        for f in 0..3 {
            for v in 0..3 {
                vocab.encode(f, &v.to_string());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(&vocab, 1, 3, 0.5, &[5, 3], with_pruner, &mut rng);
        let samples = (0..6)
            .map(|i| Sample {
                domain: vec![(i % 2) as u32],
                agnostic: vec![rng.random_range(0..3), rng.random_range(0..3)],
                label: (i % 3 == 0) as u8,
                timestamp: i as i64,
            })
            .collect();
        (model, samples)
    }

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy(1, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((cross_entropy(0, 0.9) - 2.302585092994046).abs() < 1e-12);
        assert!(cross_entropy(1, 1.0) < 1e-11);
        assert!(cross_entropy(1, 0.0).is_finite());
    }

    #[test]
    fn matrices_roundtrip() {
        let (model, _) = toy(1, true);
        let back = Model::from_matrices(model.to_matrices(), 3, 1, 3, true).unwrap();
        assert_eq!(back, model);
        assert!(Model::from_matrices(model.to_matrices(), 3, 1, 3, false).is_err());
    }

    #[test]
    fn scaling_model_gradients_match_finite_differences() {
        for seed in 0..5 {
            let (model, samples) = toy(seed, true);
            let batch: Vec<&Sample> = samples.iter().collect();
            let method = FactorMethod::new(FactorKind::Scaling, 1.0, 2.0, 0.25).unwrap();
            let err = grad_check(&model.to_matrices(), 1e-6, |mats| {
                let m = Model::from_matrices(mats.to_vec(), 3, 1, 3, true)?;
                let out = m.batch_grads(&batch, Some(&method), None)?;
                Ok((out.loss(), m.grads_to_matrices(&out.grads)))
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn plain_model_gradients_match_finite_differences() {
        let (model, samples) = toy(3, false);
        let batch: Vec<&Sample> = samples.iter().collect();
        let err = grad_check(&model.to_matrices(), 1e-6, |mats| {
            let m = Model::from_matrices(mats.to_vec(), 3, 1, 3, false)?;
            let out = m.batch_grads(&batch, None, None)?;
            Ok((out.loss(), m.grads_to_matrices(&out.grads)))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn regularizer_adds_loss_outside_boundary_only() {
        let (model, samples) = toy(2, true);
        let batch: Vec<&Sample> = samples.iter().collect();
        let method = FactorMethod::new(FactorKind::Fusion, 5.0, 2.0, 0.25).unwrap();
        let plain = model.batch_grads(&batch, Some(&method), None).unwrap();
        let reg = Regularizer {
            boundary: SparsityBoundary::new(0.15, 0.25).unwrap(),
            lambda_hat: 1.0,
        };
        let with = model.batch_grads(&batch, Some(&method), Some(reg)).unwrap();
        assert_eq!(plain.ratios, with.ratios);
        if with.ratios.iter().all(|&r| reg.boundary.contains(r)) {
            assert_eq!(with.loss(), plain.loss());
        } else {
            assert!(with.loss() > plain.loss());
        }
        assert_eq!(with.ce, plain.ce);
    }

    #[test]
    fn predict_matches_batch_forward() {
        let (model, samples) = toy(4, true);
        let method = FactorMethod::new(FactorKind::Binarization, 5.0, 2.0, 0.25).unwrap();
        let batch: Vec<&Sample> = samples.iter().collect();
        let out = model.batch_grads(&batch, Some(&method), None).unwrap();
        let p = model.predict(&samples, Some(&method)).unwrap();
        assert_eq!(p, out.p_ctr);
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(model.predict(&[], None).unwrap().is_empty());
    }

    #[test]
    fn adam_skips_untouched_rows() {
        let (mut model, samples) = toy(5, false);
        let before = model.clone();
        let batch = vec![&samples[0]];
        let out = model.batch_grads(&batch, None, None).unwrap();
        let mut state = model.adam_state();
        model.apply_adam(&out.grads, &mut state, 0.01).unwrap();
        let s = &samples[0];
        for f in 0..3 {
            let used = if f == 0 { s.domain[0] } else { s.agnostic[f - 1] } as usize;
            for r in 0..4 {
                let same = model.embeddings.tables()[f].row(r) == before.embeddings.tables()[f].row(r);
                assert_eq!(same, r != used, "field {f} row {r}");
            }
        }
    }
}
