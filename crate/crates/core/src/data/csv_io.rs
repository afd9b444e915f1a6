//! CSV ingestion and export.
//!
//! Layout: a header row `label,timestamp,<domain fields...>,<agnostic fields...>`,
//! comma-separated, unquoted. Columns are located by name on read.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Sample, Schema};
use crate::embedding::Vocabulary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct CsvData {
    pub samples: Vec<Sample>,
    /// Rows skipped for a bad label, timestamp or column count.
    pub malformed: usize,
}

/// Read samples from `path`. Categorical strings go through `vocab`: a
/// growable vocabulary assigns new rows, a frozen one maps unknowns to OOV.
pub fn load_csv(path: &Path, schema: &Schema, vocab: &mut Vocabulary) -> Result<CsvData> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .quoting(false)
        .from_reader(file);

    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column {name:?}", path.display())))
    };
    let label_col = column("label")?;
    let ts_col = column("timestamp")?;
    let field_cols: Vec<usize> = schema.all_fields().map(column).collect::<Result<_>>()?;
    let n_domain = schema.domain_fields.len();

    let mut out = CsvData::default();
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            out.malformed += 1;
            continue;
        }
        let label = match record[label_col].trim() {
            "0" => 0,
            "1" => 1,
            _ => {
                out.malformed += 1;
                continue;
            }
        };
        let Ok(timestamp) = record[ts_col].trim().parse::<i64>() else {
            out.malformed += 1;
            continue;
        };
        let mut ids: Vec<u32> = field_cols
            .iter()
            .enumerate()
            .map(|(f, &c)| vocab.encode(f, record[c].trim()))
            .collect();
        let agnostic = ids.split_off(n_domain);
        out.samples.push(Sample {
            domain: ids,
            agnostic,
            label,
            timestamp,
        });
    }
    Ok(out)
}

pub fn write_csv(path: &Path, schema: &Schema, vocab: &Vocabulary, samples: &[Sample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(w, "label,timestamp")?;
        for f in schema.all_fields() {
            write!(w, ",{f}")?;
        }
        writeln!(w)?;
        for s in samples {
            write!(w, "{},{}", s.label, s.timestamp)?;
            for (f, &v) in s.domain.iter().chain(&s.agnostic).enumerate() {
                write!(w, ",{}", vocab.decode(f, v))?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(vec!["domain".into()], vec!["f0".into(), "f1".into()]).unwrap()
    }

    fn write_file(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("d.csv");
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn empty_file_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "label,timestamp,domain,f0,f1\n");
        let mut v = Vocabulary::new(&schema());
        let d = load_csv(&p, &schema(), &mut v).unwrap();
        assert!(d.samples.is_empty());
        assert_eq!(d.malformed, 0);
    }

    #[test]
    fn rows_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            &dir,
            "label,timestamp,domain,f0,f1\n1,30,a,x,y\n0,10,b,x,z\n1,20,a,w,y\n",
        );
        let mut v = Vocabulary::new(&schema());
        let d = load_csv(&p, &schema(), &mut v).unwrap();
        assert_eq!(d.samples.len(), 3);
        let ts: Vec<i64> = d.samples.iter().map(|s| s.timestamp).collect();
        assert_eq!(ts, vec![30, 10, 20]);
        assert_eq!(d.samples[0].domain, vec![0]);
        assert_eq!(d.samples[1].domain, vec![1]);
        assert_eq!(d.samples[2].agnostic, vec![1, 0]);
    }

    #[test]
    fn bad_label_is_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "label,timestamp,domain,f0,f1\n2,1,a,x,y\n1,2,a,x,y\n0,zz,a,x,y\n1,3,a\n");
        let mut v = Vocabulary::new(&schema());
        let d = load_csv(&p, &schema(), &mut v).unwrap();
        assert_eq!(d.samples.len(), 1);
        assert_eq!(d.malformed, 3);
    }

    #[test]
    fn single_bad_label_counts_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "label,timestamp,domain,f0,f1\n2,1,a,x,y\n");
        let mut v = Vocabulary::new(&schema());
        let d = load_csv(&p, &schema(), &mut v).unwrap();
        assert_eq!(d.malformed, 1);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "label,timestamp,domain,f0\n1,1,a,x\n");
        let mut v = Vocabulary::new(&schema());
        assert!(matches!(load_csv(&p, &schema(), &mut v), Err(Error::Schema(_))));
    }

    #[test]
    fn frozen_vocab_maps_unknown_to_oov() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "label,timestamp,domain,f0,f1\n1,1,a,x,y\n0,2,q,x,y\n");
        let mut v = Vocabulary::new(&schema());
        v.encode(0, "a");
        v.freeze();
        let d = load_csv(&p, &schema(), &mut v).unwrap();
        assert_eq!(d.samples[0].domain, vec![0]);
        assert_eq!(d.samples[1].domain, vec![v.oov_index(0)]);
    }

    #[test]
    fn write_then_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        let mut v = Vocabulary::new(&schema());
        for (f, val) in [(0, "a"), (0, "b"), (1, "x"), (2, "y"), (2, "z")] {
            v.encode(f, val);
        }
        v.freeze();
        let samples = vec![
            Sample { domain: vec![1], agnostic: vec![0, 1], label: 1, timestamp: 4 },
            Sample { domain: vec![0], agnostic: vec![0, 0], label: 0, timestamp: -2 },
        ];
        write_csv(&p, &schema(), &v, &samples).unwrap();
        let back = load_csv(&p, &schema(), &mut v).unwrap();
        assert_eq!(back.samples, samples);
    }
}
