//! Library side of the `adasparse` command: one function per subcommand.
//! Each writes its outputs plus `effective_config.toml` into an output
//! directory, so a run can be reproduced from that file and its seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{load_csv, split_by_timestamp, write_csv, generate_synthetic, DatasetSpec, Sample, Schema};
use crate::embedding::Vocabulary;
use crate::error::{Error, Result};
use crate::metrics::{domain_mask, evaluate, mask_jaccard, DomainMask, EvalReport};
use crate::training::{train, Checkpoint, Method, TrainConfig, TrainData, TrainOutcome};

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
pub const SCHEMA_FILE: &str = "schema.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.adsp";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a TOML config file, or the default when `path` is `None`.
pub fn read_dataset_spec(path: Option<&Path>) -> Result<DatasetSpec> {
    let Some(path) = path else {
        return Ok(DatasetSpec::default());
    };
    let spec: DatasetSpec = toml::from_str(&read_file(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

pub fn read_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_toml(&read_file(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(TrainConfig::default()),
    }
}

/// Flag values for `train`; each `Some` replaces the config-file value.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub alpha_init: Option<f64>,
    pub alpha_max: Option<f64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub embed_dim: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(self, mut c: TrainConfig) -> Result<TrainConfig> {
        fn set<T>(slot: &mut T, v: Option<T>) {
            if let Some(v) = v {
                *slot = v;
            }
        }
        set(&mut c.seed, self.seed);
        set(&mut c.method, self.method);
        set(&mut c.r_min, self.r_min);
        set(&mut c.r_max, self.r_max);
        set(&mut c.alpha_init, self.alpha_init);
        set(&mut c.alpha_max, self.alpha_max);
        set(&mut c.beta, self.beta);
        set(&mut c.epsilon, self.epsilon);
        set(&mut c.lr, self.lr);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.epochs, self.epochs);
        set(&mut c.hidden, self.hidden);
        set(&mut c.embed_dim, self.embed_dim);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenSummary {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub domains: usize,
}

/// Generates a synthetic dataset and writes `train.csv`, `dev.csv`,
/// `test.csv` and `schema.toml` to `out`.
pub fn gen_data(spec: &DatasetSpec, seed: u64, out: &Path) -> Result<GenSummary> {
    spec.validate()?;
    create_dir(out)?;
    let samples = generate_synthetic(spec, seed)?;
    let split = split_by_timestamp(samples);
    let schema = spec.schema();
    let vocab = spec.vocabulary();
    for (name, part) in [("train.csv", &split.train), ("dev.csv", &split.dev), ("test.csv", &split.test)] {
        write_csv(&out.join(name), &schema, &vocab, part)?;
    }
    write_file(out.join(SCHEMA_FILE), &schema.to_toml())?;
    let spec_text = toml::to_string(spec).expect("spec is always serializable");
    write_file(out.join(EFFECTIVE_CONFIG), &format!("# seed = {seed}\n{spec_text}"))?;
    Ok(GenSummary {
        train: split.train.len(),
        dev: split.dev.len(),
        test: split.test.len(),
        domains: spec.domain_count(),
    })
}

/// Loads `schema.toml`, `train.csv` and `dev.csv` from a `gen-data` style
/// directory. The vocabulary is built on train and frozen before dev.
pub fn load_train_dir(dir: &Path) -> Result<(TrainData, usize)> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found")));
    }
    let schema = Schema::from_toml(&read_file(&dir.join(SCHEMA_FILE))?)?;
    let mut vocab = Vocabulary::new(&schema);
    let train = load_csv(&dir.join("train.csv"), &schema, &mut vocab)?;
    vocab.freeze();
    let dev_path = dir.join("dev.csv");
    let dev = if dev_path.exists() {
        load_csv(&dev_path, &schema, &mut vocab)?
    } else {
        Default::default()
    };
    let malformed = train.malformed + dev.malformed;
    Ok((
        TrainData {
            schema,
            vocab,
            train: train.samples,
            dev: dev.samples,
        },
        malformed,
    ))
}

/// Trains on a data directory and writes `checkpoint.adsp`, `history.csv`
/// and `factors.csv` to `out`.
pub fn train_cmd(config: &TrainConfig, data_dir: &Path, out: &Path) -> Result<TrainOutcome> {
    let (data, malformed) = load_train_dir(data_dir)?;
    if malformed > 0 {
        log::warn!("skipped {malformed} malformed rows");
    }
    let outcome = train(config, &data)?;
    create_dir(out)?;
    outcome.checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    outcome.history.write(out)?;
    write_file(out.join(EFFECTIVE_CONFIG), &config.to_toml())?;
    Ok(outcome)
}

fn load_eval_data(ckpt: &Checkpoint, data: &Path) -> Result<Vec<Sample>> {
    let mut vocab = ckpt.vocab.clone();
    vocab.freeze();
    let csv = load_csv(data, &ckpt.schema, &mut vocab)?;
    if csv.malformed > 0 {
        log::warn!("{}: skipped {} malformed rows", data.display(), csv.malformed);
    }
    Ok(csv.samples)
}

/// Evaluates a checkpoint on a CSV file; writes `report.txt` and `report.json`.
pub fn eval_cmd(checkpoint: &Path, data: &Path, out: &Path) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let samples = load_eval_data(&ckpt, data)?;
    let report = evaluate(&ckpt, &samples)?;
    create_dir(out)?;
    write_file(out.join("report.txt"), &report.to_text())?;
    write_file(out.join("report.json"), &report.to_json())?;
    write_file(out.join(EFFECTIVE_CONFIG), &ckpt.config.to_toml())?;
    Ok(report)
}

/// Raw domain value tuple, joined with `|`.
pub fn domain_label(vocab: &Vocabulary, sample: &Sample) -> String {
    sample
        .domain
        .iter()
        .enumerate()
        .map(|(f, &v)| vocab.decode(f, v))
        .collect::<Vec<_>>()
        .join("|")
}

#[derive(Debug, Clone)]
pub struct MaskReport {
    pub masks: Vec<(String, DomainMask)>,
    /// `(domain_a, domain_b, layer, jaccard)` for each unordered pair.
    pub jaccard: Vec<(String, String, usize, f64)>,
}

/// Majority-vote masks for the requested domains plus pairwise Jaccard.
/// Writes `mask_<domain>.csv` per domain and `jaccard.csv`.
pub fn inspect_masks(checkpoint: &Path, data: &Path, domains: &[String], out: &Path) -> Result<MaskReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let samples = load_eval_data(&ckpt, data)?;
    let mut groups: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        groups.entry(domain_label(&ckpt.vocab, &s)).or_default().push(s);
    }
    let mut masks = Vec::with_capacity(domains.len());
    for d in domains {
        let Some(group) = groups.get(d) else {
            let available: Vec<&str> = groups.keys().map(String::as_str).collect();
            return Err(Error::Config(format!("unknown domain {d:?}; available: {}", available.join(", "))));
        };
        masks.push((d.clone(), domain_mask(&ckpt, group)?));
    }
    let mut jaccard = Vec::new();
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            for l in 0..masks[i].1.layers.len() {
                jaccard.push((masks[i].0.clone(), masks[j].0.clone(), l, mask_jaccard(&masks[i].1, &masks[j].1, l)?));
            }
        }
    }

    create_dir(out)?;
    for (d, m) in &masks {
        let mut text = String::from("domain,layer,mask\n");
        for (l, bits) in m.layers.iter().enumerate() {
            let bits: String = bits.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect();
            let _ = writeln!(text, "{d},{l},{bits}");
        }
        write_file(out.join(format!("mask_{}.csv", d.replace(['|', '/', '\\'], "_"))), &text)?;
    }
    let mut text = String::from("domain_a,domain_b,layer,jaccard\n");
    for (a, b, l, j) in &jaccard {
        let _ = writeln!(text, "{a},{b},{l},{j}");
    }
    write_file(out.join("jaccard.csv"), &text)?;
    write_file(out.join(EFFECTIVE_CONFIG), &ckpt.config.to_toml())?;
    Ok(MaskReport { masks, jaccard })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = TrainConfig::from_toml("lr = 0.05\nepochs = 4\n").unwrap();
        let c = TrainOverrides {
            lr: Some(0.002),
            hidden: Some(vec![3]),
            ..Default::default()
        }
        .apply(file)
        .unwrap();
        assert_eq!((c.lr, c.epochs, c.hidden.clone()), (0.002, 4, vec![3]));
        let bad = TrainOverrides {
            r_min: Some(0.9),
            ..Default::default()
        };
        assert!(bad.apply(TrainConfig::default()).is_err());
    }

    #[test]
    fn missing_data_dir_names_path() {
        let err = load_train_dir(Path::new("/no/such/dir")).unwrap_err();
        assert!(err.to_string().contains("/no/such/dir"));
    }
}
