//! Record ingestion and corpus plumbing: WFDB-style headers, a native
//! record format for self-contained tests, SNOMED label mapping,
//! stratified splitting, and a synthetic corpus generator.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::preprocess::RawSignal;
use crate::tensor::{Tensor, TensorError};

pub mod header;
pub mod labels;
pub mod split;
pub mod synth;

pub use header::{parse_header, read_wfdb, serialize_header, HeaderInfo, LeadSpec};
pub use labels::{label_vector, LabelMap};
pub use split::{kfold, split_sizes, stratified_split, Assignment, SplitPlan};
pub use synth::{synth_generate, MAX_SYNTH_CLASSES};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("bad label map: {0}")]
    BadMap(String),
    #[error("bad split: {0}")]
    BadSplit(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type DataResult<T> = Result<T, DataError>;

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

/// One ECG recording with its diagnosis codes and opaque demographics.
#[derive(Debug, Clone)]
pub struct EcgRecord {
    pub id: String,
    pub signal: RawSignal,
    pub dx_codes: BTreeSet<String>,
    pub age: String,
    pub sex: String,
}

impl EcgRecord {
    pub fn n_leads(&self) -> usize {
        self.signal.samples.shape()[0]
    }
    pub fn n_samples(&self) -> usize {
        self.signal.samples.shape()[1]
    }
}

/// Native record container, version 1. Byte layout:
///
/// ```text
/// line 1     "ECGR1"
/// lines      "id <string>", "leads <n>", "fs <hz>", "samples <len>",
///            "dx <code,code,...>", optionally "age <s>" and "sex <s>",
///            in any order, one setting per line
/// line       "end"
/// payload    leads*samples little-endian f32, lead-major (row 0 first)
/// ```
///
/// Samples are stored as f32; writers quantize, so write -> read -> write
/// is byte-identical.
pub const NATIVE_MAGIC: &str = "ECGR1";

/// File extension for native records.
pub const NATIVE_EXT: &str = "ecgr";

/// Write `record` in the native format. Sample values are rounded to f32.
pub fn write_native(record: &EcgRecord, path: &Path) -> DataResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{NATIVE_MAGIC}")?;
    writeln!(w, "id {}", record.id)?;
    writeln!(w, "leads {}", record.n_leads())?;
    writeln!(w, "fs {}", record.signal.fs)?;
    writeln!(w, "samples {}", record.n_samples())?;
    let codes: Vec<&str> = record.dx_codes.iter().map(|s| s.as_str()).collect();
    writeln!(w, "dx {}", codes.join(","))?;
    if !record.age.is_empty() {
        writeln!(w, "age {}", record.age)?;
    }
    if !record.sex.is_empty() {
        writeln!(w, "sex {}", record.sex)?;
    }
    writeln!(w, "end")?;
    for &v in record.signal.samples.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a native-format record written by [`write_native`].
pub fn read_native(path: &Path) -> DataResult<EcgRecord> {
    let fname = path.display().to_string();
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    let mut lineno = 0usize;
    fn next_line(
        r: &mut BufReader<File>,
        line: &mut String,
        lineno: &mut usize,
    ) -> DataResult<usize> {
        line.clear();
        *lineno += 1;
        Ok(r.read_line(line)?)
    }

    next_line(&mut r, &mut line, &mut lineno)?;
    if line.trim_end() != NATIVE_MAGIC {
        return Err(parse_err(&fname, 1, format!("expected {NATIVE_MAGIC:?} magic")));
    }

    let mut id = None;
    let mut leads = None;
    let mut fs = None;
    let mut samples = None;
    let mut dx: Option<BTreeSet<String>> = None;
    let mut age = String::new();
    let mut sex = String::new();
    loop {
        let ln = lineno + 1;
        if next_line(&mut r, &mut line, &mut lineno)? == 0 {
            return Err(parse_err(&fname, ln, "unexpected end of header"));
        }
        let text = line.trim_end();
        if text == "end" {
            break;
        }
        let (key, value) = text
            .split_once(' ')
            .ok_or_else(|| parse_err(&fname, ln, "expected \"key value\""))?;
        match key {
            "id" => id = Some(value.to_string()),
            "leads" => {
                leads = Some(value.parse::<usize>().map_err(|_| {
                    parse_err(&fname, ln, format!("bad lead count {value:?}"))
                })?)
            }
            "fs" => {
                fs = Some(value.parse::<u32>().map_err(|_| {
                    parse_err(&fname, ln, format!("bad sampling rate {value:?}"))
                })?)
            }
            "samples" => {
                samples = Some(value.parse::<usize>().map_err(|_| {
                    parse_err(&fname, ln, format!("bad sample count {value:?}"))
                })?)
            }
            "dx" => {
                dx = Some(
                    value
                        .split(',')
                        .map(|c| c.trim().to_string())
                        .filter(|c| !c.is_empty())
                        .collect(),
                )
            }
            "age" => age = value.to_string(),
            "sex" => sex = value.to_string(),
            other => {
                return Err(parse_err(&fname, ln, format!("unknown key {other:?}")));
            }
        }
    }
    let missing = |what: &str, ln: usize| parse_err(&fname, ln, format!("missing {what} line"));
    let id = id.ok_or_else(|| missing("id", lineno))?;
    let leads = leads.ok_or_else(|| missing("leads", lineno))?;
    let fs = fs.ok_or_else(|| missing("fs", lineno))?;
    let samples = samples.ok_or_else(|| missing("samples", lineno))?;
    let dx = dx.ok_or_else(|| missing("dx", lineno))?;

    let mut payload = vec![0u8; leads * samples * 4];
    r.read_exact(&mut payload).map_err(|_| {
        parse_err(&fname, lineno, "payload shorter than leads*samples f32 values")
    })?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(parse_err(&fname, lineno, "trailing bytes after payload"));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(EcgRecord {
        id,
        signal: RawSignal {
            samples: Tensor::from_vec(data, &[leads, samples])?,
            fs,
        },
        dx_codes: dx,
        age,
        sex,
    })
}

/// Load every `.ecgr` record under `dir`, sorted by record id so corpus
/// iteration order never depends on directory enumeration order.
pub fn load_corpus(dir: &Path) -> DataResult<Vec<EcgRecord>> {
    let mut records = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == NATIVE_EXT) {
            records.push(read_native(&path)?);
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

/// Write the `id,codes` convenience index for a corpus.
pub fn write_labels_csv(records: &[EcgRecord], path: &Path) -> DataResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "id,dx_codes")?;
    for rec in records {
        let codes: Vec<&str> = rec.dx_codes.iter().map(|s| s.as_str()).collect();
        writeln!(w, "{},{}", rec.id, codes.join("|"))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    fn tmp_dir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("ecgm-data-tests").join(name);
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn sample_record(id: &str, seed: u64) -> EcgRecord {
        let mut r = rng_for(seed, 77);
        // Quantize to f32 up front so the round trip is exact.
        let data: Vec<f64> = (0..2 * 30)
            .map(|_| (r.gen::<f64>() * 2.0 - 1.0) as f32 as f64)
            .collect();
        EcgRecord {
            id: id.to_string(),
            signal: RawSignal {
                samples: Tensor::from_vec(data, &[2, 30]).unwrap(),
                fs: 500,
            },
            dx_codes: ["426783006", "164889003"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            age: "63".into(),
            sex: "F".into(),
        }
    }

    #[test]
    fn native_roundtrip_preserves_everything() {
        let dir = tmp_dir("roundtrip");
        let rec = sample_record("r-001", 1);
        let path = dir.join("r-001.ecgr");
        write_native(&rec, &path).unwrap();
        let back = read_native(&path).unwrap();
        assert_eq!(back.id, rec.id);
        assert_eq!(back.signal.fs, 500);
        assert_eq!(back.dx_codes, rec.dx_codes);
        assert_eq!(back.age, "63");
        assert_eq!(back.sex, "F");
        assert_eq!(back.signal.samples.shape(), rec.signal.samples.shape());
        assert_eq!(back.signal.samples.data(), rec.signal.samples.data());

        // Write the re-read record: byte-identical file.
        let path2 = dir.join("again.ecgr");
        write_native(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn native_read_rejects_corruption() {
        let dir = tmp_dir("corrupt");
        let rec = sample_record("r-002", 2);
        let path = dir.join("r.ecgr");
        write_native(&rec, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // Bad magic.
        let mut b = bytes.clone();
        b[0] = b'X';
        std::fs::write(&path, &b).unwrap();
        assert!(read_native(&path).is_err());

        // Truncated payload.
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_native(&path).is_err());

        // Trailing garbage.
        let mut b = bytes.clone();
        b.push(0);
        std::fs::write(&path, &b).unwrap();
        assert!(read_native(&path).is_err());
    }

    #[test]
    fn corpus_iteration_is_sorted_by_id() {
        let dir = tmp_dir("sorted");
        // Write in non-sorted order with names that disagree with ids.
        for (file, id) in [("zz.ecgr", "rec-b"), ("aa.ecgr", "rec-c"), ("mm.ecgr", "rec-a")] {
            write_native(&sample_record(id, 3), &dir.join(file)).unwrap();
        }
        let corpus = load_corpus(&dir).unwrap();
        let ids: Vec<&str> = corpus.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["rec-a", "rec-b", "rec-c"]);
    }

    #[test]
    fn labels_csv_layout() {
        let dir = tmp_dir("labels");
        let recs = vec![sample_record("a", 1), sample_record("b", 2)];
        let path = dir.join("labels.csv");
        write_labels_csv(&recs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "id,dx_codes");
        assert_eq!(lines[1], "a,164889003|426783006");
        assert_eq!(lines.len(), 3);
    }
}
