//! On-disk dump format.
//!
//! `activations.bin` is a plain concatenation of blocks:
//!
//! ```text
//! +------+--------+--------+----------------------------+
//! | TPAB | L: u32 | d: u32 | L*d x f32, layer-major     |
//! +------+--------+--------+----------------------------+
//! ```
//!
//! All integers and floats are little-endian. The manifest refers to blocks
//! by byte offset. The writer emits record blocks in manifest order (one per
//! position, in position order) followed by resample blocks in record order.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{
    validate_dataset, ActivationBlock, GeneratedToken, ProbingDataset, ProbingRecord,
    ResampleSample, ResampleSet,
};
use crate::error::{Error, Result};
use crate::localize::TokenSpan;

pub const BLOCK_MAGIC: [u8; 4] = *b"TPAB";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const BLOB_FILE: &str = "activations.bin";
pub const RESAMPLES_FILE: &str = "resamples.jsonl";

const HEADER_LEN: u64 = 12;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    id: String,
    question: String,
    gold_aliases: Vec<String>,
    generated_answer: String,
    generated_tokens: Vec<(String, usize, usize)>,
    token_logprobs: Vec<f64>,
    exact_answer: Option<String>,
    exact_span: Option<(usize, usize)>,
    correct: Option<u8>,
    refusal: bool,
    p_true: Option<f64>,
    activation_offsets: IndexMap<String, u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResampleLine {
    id: String,
    temperature: f64,
    samples: Vec<SampleLine>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    answer: String,
    exact_answer: Option<String>,
    correct: Option<u8>,
    refusal: bool,
    activation_offset: Option<u64>,
}

/// Byte length of one encoded block.
pub fn block_len(num_layers: usize, hidden_dim: usize) -> u64 {
    HEADER_LEN + 4 * (num_layers * hidden_dim) as u64
}

fn encode_block(block: &ActivationBlock, out: &mut Vec<u8>) {
    out.extend_from_slice(&BLOCK_MAGIC);
    out.extend_from_slice(&(block.num_layers() as u32).to_le_bytes());
    out.extend_from_slice(&(block.hidden_dim() as u32).to_le_bytes());
    for v in block.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    dims: Option<(usize, usize)>,
}

impl BlobReader<'_> {
    fn read_u32(&self, at: usize) -> u32 {
        u32::from_le_bytes(self.bytes[at..at + 4].try_into().unwrap())
    }

    fn block_at(&mut self, offset: u64) -> Result<ActivationBlock> {
        let len = self.bytes.len() as u64;
        if offset.checked_add(HEADER_LEN).is_none_or(|end| end > len) {
            return Err(Error::OffsetOutOfRange { offset, len });
        }
        let at = offset as usize;
        if self.bytes[at..at + 4] != BLOCK_MAGIC {
            return Err(Error::BadMagic { offset });
        }
        let num_layers = self.read_u32(at + 4) as usize;
        let hidden_dim = self.read_u32(at + 8) as usize;
        match self.dims {
            Some(dims) if dims != (num_layers, hidden_dim) => {
                return Err(Error::DimensionMismatch(format!(
                    "block at offset {offset} has L={num_layers} d={hidden_dim}, \
                     earlier blocks have L={} d={}",
                    dims.0, dims.1
                )));
            }
            _ => self.dims = Some((num_layers, hidden_dim)),
        }
        let end = offset + block_len(num_layers, hidden_dim);
        if end > len {
            return Err(Error::OffsetOutOfRange { offset: end, len });
        }
        let values = self.bytes[at + HEADER_LEN as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ActivationBlock::new(num_layers, hidden_dim, values)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

fn json_lines<T: for<'de> Deserialize<'de>>(path: &Path, file: &str) -> Result<Vec<T>> {
    let handle = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(handle).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(&line).map_err(|e| Error::Json {
            file: file.to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(parsed);
    }
    Ok(out)
}

fn decode_flag(record_id: &str, field: &str, v: Option<u8>) -> Result<Option<bool>> {
    match v {
        None => Ok(None),
        Some(0) => Ok(Some(false)),
        Some(1) => Ok(Some(true)),
        Some(other) => Err(Error::InvariantViolation {
            record_id: record_id.to_string(),
            violation: format!("{field} must be 0, 1 or null, got {other}"),
        }),
    }
}

/// Reads and validates a dump directory.
///
/// Malformed input is rejected, never repaired: the first violated invariant
/// is returned as [`Error::InvariantViolation`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<ProbingDataset> {
    let dataset = read_dataset(dir)?;
    if let Some(v) = validate_dataset(&dataset).violations.into_iter().next() {
        return Err(Error::InvariantViolation {
            record_id: v.record_id,
            violation: v.invariant.to_string(),
        });
    }
    Ok(dataset)
}

/// Parses a dump directory without checking record invariants.
///
/// Structural problems (missing files, bad JSON, bad blocks) still fail.
/// Use [`validate_dataset`] on the result to list every violation.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<ProbingDataset> {
    let dir = dir.as_ref();
    let manifest: Vec<ManifestLine> = json_lines(&dir.join(MANIFEST_FILE), MANIFEST_FILE)?;
    let blob = read_file(&dir.join(BLOB_FILE))?;
    if blob.len() >= 4 && blob[..4] != BLOCK_MAGIC {
        return Err(Error::BadMagic { offset: 0 });
    }
    if !blob.is_empty() && blob.len() < 4 {
        return Err(Error::BadMagic { offset: 0 });
    }
    let mut reader = BlobReader {
        bytes: &blob,
        dims: None,
    };

    let mut records = Vec::with_capacity(manifest.len());
    for line in manifest {
        let mut activations = IndexMap::with_capacity(line.activation_offsets.len());
        for (name, offset) in &line.activation_offsets {
            activations.insert(name.clone(), reader.block_at(*offset)?);
        }
        let correct = decode_flag(&line.id, "correct", line.correct)?;
        records.push(ProbingRecord {
            id: line.id,
            question: line.question,
            gold_aliases: line.gold_aliases,
            generated_answer: line.generated_answer,
            generated_tokens: line
                .generated_tokens
                .into_iter()
                .map(|(text, s, e)| GeneratedToken::new(text, s, e))
                .collect(),
            token_logprobs: line.token_logprobs,
            exact_answer: line.exact_answer,
            exact_span: line.exact_span.map(|(f, l)| TokenSpan::new(f, l)),
            correct,
            refusal: line.refusal,
            p_true: line.p_true,
            activations,
        });
    }

    let resample_path = dir.join(RESAMPLES_FILE);
    let resamples = if resample_path.exists() {
        let lines: Vec<ResampleLine> = json_lines(&resample_path, RESAMPLES_FILE)?;
        let mut map = IndexMap::with_capacity(lines.len());
        for line in lines {
            let mut samples = Vec::with_capacity(line.samples.len());
            for s in line.samples {
                samples.push(ResampleSample {
                    correct: decode_flag(&line.id, "sample correct", s.correct)?,
                    answer: s.answer,
                    exact_answer: s.exact_answer,
                    refusal: s.refusal,
                    activation: s.activation_offset.map(|o| reader.block_at(o)).transpose()?,
                });
            }
            let set = ResampleSet {
                record_id: line.id.clone(),
                temperature: line.temperature,
                samples,
            };
            if map.insert(line.id.clone(), set).is_some() {
                return Err(Error::InvariantViolation {
                    record_id: line.id,
                    violation: "duplicate resample set".into(),
                });
            }
        }
        Some(map)
    } else {
        None
    };

    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ProbingDataset::new(name, records, resamples))
}

fn write_lines<T: Serialize>(path: &Path, lines: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        let text = serde_json::to_string(line).expect("manifest lines always serialize");
        w.write_all(text.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode_flag(v: Option<bool>) -> Option<u8> {
    v.map(u8::from)
}

/// Writes `dataset` as a dump directory, creating it if needed.
pub fn write_dataset(dataset: &ProbingDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if let Some(v) = validate_dataset(dataset).violations.into_iter().next() {
        return Err(Error::InvariantViolation {
            record_id: v.record_id,
            violation: v.invariant.to_string(),
        });
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut blob = Vec::new();
    let mut manifest = Vec::with_capacity(dataset.records.len());
    for r in &dataset.records {
        let mut offsets = IndexMap::with_capacity(r.activations.len());
        for (name, block) in &r.activations {
            offsets.insert(name.clone(), blob.len() as u64);
            encode_block(block, &mut blob);
        }
        manifest.push(ManifestLine {
            id: r.id.clone(),
            question: r.question.clone(),
            gold_aliases: r.gold_aliases.clone(),
            generated_answer: r.generated_answer.clone(),
            generated_tokens: r
                .generated_tokens
                .iter()
                .map(|t| (t.text.clone(), t.char_start, t.char_end))
                .collect(),
            token_logprobs: r.token_logprobs.clone(),
            exact_answer: r.exact_answer.clone(),
            exact_span: r.exact_span.map(|s| (s.first, s.last)),
            correct: encode_flag(r.correct),
            refusal: r.refusal,
            p_true: r.p_true,
            activation_offsets: offsets,
        });
    }

    let resample_lines: Option<Vec<ResampleLine>> = dataset.resamples.as_ref().map(|map| {
        map.values()
            .map(|set| ResampleLine {
                id: set.record_id.clone(),
                temperature: set.temperature,
                samples: set
                    .samples
                    .iter()
                    .map(|s| SampleLine {
                        answer: s.answer.clone(),
                        exact_answer: s.exact_answer.clone(),
                        correct: encode_flag(s.correct),
                        refusal: s.refusal,
                        activation_offset: s.activation.as_ref().map(|b| {
                            let at = blob.len() as u64;
                            encode_block(b, &mut blob);
                            at
                        }),
                    })
                    .collect(),
            })
            .collect()
    });

    write_lines(&dir.join(MANIFEST_FILE), &manifest)?;
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let resample_path = dir.join(RESAMPLES_FILE);
    match resample_lines {
        Some(lines) => write_lines(&resample_path, &lines)?,
        None if resample_path.exists() => {
            fs::remove_file(&resample_path).map_err(|e| Error::io(&resample_path, e))?
        }
        None => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, positions: &[&str], l: usize, d: usize) -> ProbingRecord {
        let mut activations = IndexMap::new();
        for (p, name) in positions.iter().enumerate() {
            let values = (0..l * d).map(|i| (i + 10 * p) as f32 * 0.5).collect();
            activations.insert(name.to_string(), ActivationBlock::new(l, d, values).unwrap());
        }
        ProbingRecord {
            id: id.into(),
            question: "What is the capital of Connecticut?".into(),
            gold_aliases: vec!["Hartford".into()],
            generated_answer: "It is Hartford".into(),
            generated_tokens: vec![
                GeneratedToken::new("It", 0, 2),
                GeneratedToken::new(" is", 2, 5),
                GeneratedToken::new(" Hartford", 5, 14),
            ],
            token_logprobs: vec![-0.1, -0.25, -1.5],
            exact_answer: Some("Hartford".into()),
            exact_span: Some(TokenSpan::new(2, 2)),
            correct: Some(true),
            refusal: false,
            p_true: Some(0.75),
            activations,
        }
    }

    #[test]
    fn empty_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ProbingDataset::new("empty", vec![], None);
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap().len(), 0);
        assert_eq!(fs::read(dir.path().join(BLOB_FILE)).unwrap().len(), 0);
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 0);
        assert!(back.position_names.is_empty());
    }

    #[test]
    fn one_record_two_positions_blob_size() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ProbingDataset::new("one", vec![record("q0", &["eoq", "exact_last"], 2, 3)], None);
        write_dataset(&ds, dir.path()).unwrap();
        let blob = fs::read(dir.path().join(BLOB_FILE)).unwrap();
        assert_eq!(blob.len(), 2 * (4 + 4 + 4 + 24));
        assert_eq!(&blob[..4], b"TPAB");
        assert_eq!(&blob[36..40], b"TPAB");
        assert_eq!(u32::from_le_bytes(blob[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(blob[8..12].try_into().unwrap()), 3);
    }

    #[test]
    fn manifest_key_order() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ProbingDataset::new("one", vec![record("q0", &["eoq"], 1, 1)], None);
        write_dataset(&ds, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let keys = [
            "\"id\"",
            "\"question\"",
            "\"gold_aliases\"",
            "\"generated_answer\"",
            "\"generated_tokens\"",
            "\"token_logprobs\"",
            "\"exact_answer\"",
            "\"exact_span\"",
            "\"correct\"",
            "\"refusal\"",
            "\"p_true\"",
            "\"activation_offsets\"",
        ];
        let positions: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(text.contains("\"correct\":1"));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "").unwrap();
        fs::write(dir.path().join(BLOB_FILE), b"XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::BadMagic { offset: 0 })));
    }

    #[test]
    fn missing_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(_))));
        fs::write(dir.path().join(MANIFEST_FILE), "").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn offset_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ProbingDataset::new("one", vec![record("q0", &["eoq"], 1, 2)], None);
        write_dataset(&ds, dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let patched = manifest.replace("{\"eoq\":0}", "{\"eoq\":400}");
        fs::write(dir.path().join(MANIFEST_FILE), patched).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::OffsetOutOfRange { offset: 400, .. })
        ));
    }

    #[test]
    fn dimension_mismatch_between_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = record("q0", &["eoq"], 2, 3);
        r.activations
            .insert("exact_last".into(), ActivationBlock::zeros(2, 4));
        let ds = ProbingDataset::new("one", vec![r], None);
        // Validation refuses to write it, so build the blob by hand.
        assert!(write_dataset(&ds, dir.path()).is_err());
        let mut blob = Vec::new();
        encode_block(&ActivationBlock::zeros(2, 3), &mut blob);
        encode_block(&ActivationBlock::zeros(2, 4), &mut blob);
        let first = record("q0", &["eoq"], 1, 1);
        let mut line = serde_json::to_value(ManifestLine {
            id: first.id,
            question: first.question,
            gold_aliases: first.gold_aliases,
            generated_answer: first.generated_answer,
            generated_tokens: vec![("It".into(), 0, 2), (" is".into(), 2, 5), (" Hartford".into(), 5, 14)],
            token_logprobs: first.token_logprobs,
            exact_answer: first.exact_answer,
            exact_span: Some((2, 2)),
            correct: Some(1),
            refusal: false,
            p_true: None,
            activation_offsets: IndexMap::from([("eoq".to_string(), 0), ("exact_last".to_string(), 36)]),
        })
        .unwrap();
        line["id"] = "q0".into();
        fs::write(dir.path().join(MANIFEST_FILE), format!("{line}\n")).unwrap();
        fs::write(dir.path().join(BLOB_FILE), &blob).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn invariant_violation_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ProbingDataset::new("one", vec![record("q7", &["eoq"], 1, 2)], None);
        write_dataset(&ds, dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let patched = manifest.replace("\"exact_span\":[2,2]", "\"exact_span\":[2,1]");
        fs::write(dir.path().join(MANIFEST_FILE), patched).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::InvariantViolation { record_id, .. }) => assert_eq!(record_id, "q7"),
            other => panic!("expected invariant violation, got {other:?}"),
        }
    }

    #[test]
    fn resamples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = record("q0", &["eoq"], 2, 2);
        let set = ResampleSet {
            record_id: "q0".into(),
            temperature: 1.0,
            samples: vec![
                ResampleSample {
                    answer: "Hartford".into(),
                    exact_answer: Some("Hartford".into()),
                    correct: Some(true),
                    refusal: false,
                    activation: Some(ActivationBlock::new(2, 2, vec![1.0, -2.0, 3.5, f32::MIN_POSITIVE]).unwrap()),
                },
                ResampleSample {
                    answer: "NO ANSWER".into(),
                    exact_answer: None,
                    correct: None,
                    refusal: true,
                    activation: None,
                },
            ],
        };
        let ds = ProbingDataset::new("rs", vec![r], Some(IndexMap::from([("q0".to_string(), set)])));
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ProbingDataset { name: back.name.clone(), ..ds });
    }
}
