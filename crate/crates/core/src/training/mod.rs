//! Mini-batch training with Adam, schedules, dev evaluation and history.

mod adam;
mod checkpoint;
mod config;
mod model;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{Method, TrainConfig};
pub use model::{cross_entropy, BatchOutcome, Model, ModelGrads, Regularizer, P_CLAMP};

use crate::data::{Sample, Schema};
use crate::embedding::Vocabulary;
use crate::error::{Error, Result};
use crate::metrics;
use crate::pruner::{sparsity_loss, SparsityBoundary};

/// Environment variable capping rayon worker threads.
pub const THREADS_ENV: &str = "ADASPARSE_THREADS";

/// Sizes the global rayon pool from `ADASPARSE_THREADS` on first call.
/// Results never depend on the thread count.
pub fn init_thread_pool() {
    static INIT: OnceLock<()> = OnceLock::new();
    INIT.get_or_init(|| {
        if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
            if n > 0 {
                // Fails only if a global pool already exists, which is fine.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    });
}

/// Mean cross-entropy over a batch plus `R_s` at the given ratios.
pub fn total_loss(labels: &[u8], p_ctr: &[f64], ratios: &[f64], boundary: &SparsityBoundary, lambda_hat: f64) -> f64 {
    let ce = labels.iter().zip(p_ctr).map(|(&y, &p)| cross_entropy(y, p)).sum::<f64>() / labels.len().max(1) as f64;
    ce + sparsity_loss(ratios, boundary, lambda_hat)
}

/// Inputs to [`train`]. The vocabulary must cover every index in the samples.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub schema: Schema,
    pub vocab: Vocabulary,
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub alpha: f64,
    pub lambda_hat: f64,
    pub loss: f64,
    /// Batch zero fraction per gated layer; empty for the plain DNN.
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_logloss: Option<f64>,
    pub dev_auc: Option<f64>,
    pub dev_gauc: Option<f64>,
    /// Dev-set zero fraction per gated layer at the epoch's final `α`.
    pub dev_ratios: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

impl History {
    /// Per-epoch CSV: `epoch,train_loss,dev_logloss,dev_auc,dev_gauc,r0,r1,...`.
    pub fn epochs_csv(&self) -> String {
        let layers = self.epochs.first().map_or(0, |e| e.dev_ratios.len());
        let mut out = String::from("epoch,train_loss,dev_logloss,dev_auc,dev_gauc");
        for l in 0..layers {
            let _ = write!(out, ",r{l}");
        }
        out.push('\n');
        for e in &self.epochs {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                opt(e.dev_logloss),
                opt(e.dev_auc),
                opt(e.dev_gauc)
            );
            for r in &e.dev_ratios {
                let _ = write!(out, ",{r}");
            }
            out.push('\n');
        }
        out
    }

    /// Per-step, per-layer CSV: `step,layer,r,alpha,lambda`.
    pub fn factors_csv(&self) -> String {
        let mut out = String::from("step,layer,r,alpha,lambda\n");
        for s in &self.steps {
            for (l, r) in s.ratios.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{},{}", s.step, l, r, s.alpha, s.lambda_hat);
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, text) in [("history.csv", self.epochs_csv()), ("factors.csv", self.factors_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev AUC (the last epoch
    /// when dev AUC is undefined).
    pub checkpoint: Checkpoint,
    /// Parameters after the final step.
    pub last: Checkpoint,
    pub history: History,
    pub warnings: Vec<String>,
}

/// Schedule length in steps for a run of `total_steps`.
pub fn anneal_span(config: &TrainConfig, total_steps: usize) -> usize {
    let anneal = if config.anneal_steps == 0 {
        total_steps
    } else {
        config.anneal_steps
    };
    anneal.saturating_sub(1)
}

pub fn train(config: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    init_thread_pool();
    config.validate()?;
    if data.vocab.field_count() != data.schema.field_count() {
        return Err(Error::Schema("vocabulary does not match the schema".into()));
    }
    let mut warnings = Vec::new();
    if config.method == Method::Scaling {
        let msg = "scaling never zeroes a factor; the sparsity regularizer is disabled".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if config.epochs > 0 && data.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::new(
        &data.vocab,
        data.schema.domain_fields.len(),
        config.embed_dim,
        config.embed_init,
        &config.hidden,
        config.method.factor_kind().is_some(),
        &mut rng,
    );
    let steps_per_epoch = data.train.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let span = anneal_span(config, total_steps);
    let boundary = config.boundary()?;
    let snapshot = |model: &Model, step: usize| Checkpoint {
        config: config.clone(),
        schema: data.schema.clone(),
        vocab: data.vocab.clone(),
        model: model.clone(),
        step,
        span,
    };

    let mut history = History::default();
    let mut adam = model.adam_state();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &data.train[i]).collect();
            let method = config.method_at(step, span)?;
            let lambda_hat = config.lambda().at(step, span);
            let out = model.batch_grads(&batch, method.as_ref(), Some(Regularizer { boundary, lambda_hat }))?;
            let loss = out.loss();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            history.steps.push(StepRecord {
                step,
                epoch,
                alpha: config.alpha().at(step, span),
                lambda_hat,
                loss,
                ratios: out.ratios,
            });
            model.apply_adam(&out.grads, &mut adam, config.lr)?;
            if !model.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: f64::NAN });
            }
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }

        let ckpt = snapshot(&model, step - 1);
        let record = evaluate_dev(&ckpt, &data.dev, epoch, loss_sum / data.train.len() as f64)?;
        log::info!(
            "epoch {epoch}: train loss {:.5}, dev auc {}",
            record.train_loss,
            opt(record.dev_auc)
        );
        let score = record.dev_auc.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _)| score > *b || score == f64::NEG_INFINITY) {
            best = Some((score, ckpt));
        }
        history.epochs.push(record);
    }

    let last = snapshot(&model, step.saturating_sub(1));
    let checkpoint = best.map_or_else(|| last.clone(), |(_, c)| c);
    Ok(TrainOutcome {
        checkpoint,
        last,
        history,
        warnings,
    })
}

fn evaluate_dev(ckpt: &Checkpoint, dev: &[Sample], epoch: usize, train_loss: f64) -> Result<EpochRecord> {
    let mut rec = EpochRecord {
        epoch,
        train_loss,
        dev_logloss: None,
        dev_auc: None,
        dev_gauc: None,
        dev_ratios: Vec::new(),
    };
    if dev.is_empty() {
        return Ok(rec);
    }
    let p = ckpt.predict(dev)?;
    let labels: Vec<u8> = dev.iter().map(|s| s.label).collect();
    rec.dev_logloss = Some(metrics::logloss(&p, &labels)?);
    rec.dev_auc = metrics::auc(&p, &labels).ok();
    let domains: Vec<_> = dev.iter().map(Sample::domain_id).collect();
    rec.dev_gauc = metrics::gauc(&p, &labels, &domains).ok().map(|g| g.value);
    rec.dev_ratios = metrics::layer_ratios(ckpt, dev)?;
    Ok(rec)
}
