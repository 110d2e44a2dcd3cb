//! JSONL manifest reading and writing.
//!
//! The first line is a header object:
//!
//! ```json
//! {"format": "dalc-manifest", "tensor_dim": 8, "general_vocab": "general.vocab"}
//! ```
//!
//! Every following non-empty line describes one domain:
//!
//! ```json
//! {"domain": "law",
//!  "sentences": "law.sentences.jsonl",
//!  "encoder": "law.enc.dlc",
//!  "traces": "law.trace.jsonl",
//!  "samples": {"1000": {"path": "law.s1000.txt"}, "10000": {"stats": {...}}},
//!  "gold_curve": {"0": 0.52, "1000": 0.57}}
//! ```
//!
//! Paths are relative to the manifest's directory. The sentence file holds
//! one JSON object per sentence, the encoder file the sentences' `DLC1`
//! records back to back in the same order, and the trace file one
//! `[[p1, p2, entropy], ...]` array per line, again in the same order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tensor::{append_tensor_record, TensorReader};
use super::{AnchorSize, DecodeStep, DomainEntry, LearningCurve, Manifest, SampleStats, SentenceRecord, Split};
use crate::error::{Error, Result};
use crate::features::GeneralVocab;

const FORMAT_TAG: &str = "dalc-manifest";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    tensor_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    general_vocab: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SampleRef {
    Path { path: String },
    Stats { stats: SampleStats },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainLine {
    domain: String,
    sentences: String,
    encoder: String,
    traces: String,
    #[serde(default)]
    samples: BTreeMap<AnchorSize, SampleRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_curve: Option<LearningCurve>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentenceLine {
    id: String,
    #[serde(default)]
    split: Split,
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labse_src: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labse_hyp: Option<Vec<f64>>,
    #[serde(default)]
    gold_chrf: BTreeMap<AnchorSize, f64>,
}

fn read_file(base: &Path, rel: &str, record: &str) -> Result<Vec<u8>> {
    let path = base.join(rel);
    fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            record: record.to_string(),
            path,
        },
        _ => Error::Io(e),
    })
}

fn read_text(base: &Path, rel: &str, record: &str) -> Result<String> {
    let bytes = read_file(base, rel, record)?;
    String::from_utf8(bytes).map_err(|_| Error::header(record, format!("{rel} is not UTF-8")))
}

fn parse_line<T: serde::de::DeserializeOwned>(line: &str, record: impl FnOnce() -> String) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::header(record(), e.to_string()))
}

/// Loads a manifest and every file it references.
///
/// Structural problems (missing files, unparsable records, encoder widths
/// that disagree with `tensor_dim`) are errors; value-level problems are
/// left to [`super::validate_dataset`].
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            record: "manifest".into(),
            path: path.to_path_buf(),
        },
        _ => Error::Io(e),
    })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::header("manifest", "empty manifest"))?;
    let header: Header = parse_line(first, || "manifest:1".into())?;
    if header.format != FORMAT_TAG {
        return Err(Error::header("manifest:1", format!("format must be \"{FORMAT_TAG}\"")));
    }
    if header.tensor_dim == 0 {
        return Err(Error::header("manifest:1", "tensor_dim must be positive"));
    }
    let general_vocab = match &header.general_vocab {
        Some(rel) => {
            let text = read_text(base, rel, "manifest")?;
            Some(GeneralVocab::new(text.lines().map(str::trim).filter(|l| !l.is_empty())))
        }
        None => None,
    };

    let mut domains = Vec::new();
    for (lineno, line) in lines {
        let entry: DomainLine = parse_line(line, || format!("manifest:{}", lineno + 1))?;
        domains.push(load_domain(base, entry, header.tensor_dim, general_vocab.as_ref())?);
    }
    Ok(Manifest {
        tensor_dim: header.tensor_dim,
        general_vocab,
        domains,
    })
}

fn load_domain(base: &Path, entry: DomainLine, dim: usize, general: Option<&GeneralVocab>) -> Result<DomainEntry> {
    let name = entry.domain;
    let sent_text = read_text(base, &entry.sentences, &name)?;
    let enc_bytes = read_file(base, &entry.encoder, &name)?;
    let trace_text = read_text(base, &entry.traces, &name)?;

    let sent_lines: Vec<SentenceLine> = sent_text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, || format!("{}:{}", entry.sentences, i + 1)))
        .collect::<Result<_>>()?;
    let traces: Vec<Vec<DecodeStep>> = trace_text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, || format!("{}:{}", entry.traces, i + 1)))
        .collect::<Result<_>>()?;
    let mut tensors = TensorReader::new(&enc_bytes, entry.encoder.clone());

    if traces.len() != sent_lines.len() {
        return Err(Error::header(
            &name,
            format!("{} decode traces for {} sentences", traces.len(), sent_lines.len()),
        ));
    }

    let mut sentences = Vec::with_capacity(sent_lines.len());
    for (line, trace) in sent_lines.into_iter().zip(traces) {
        let rep = tensors
            .next()
            .ok_or_else(|| Error::header(&line.id, format!("no encoder record in {}", entry.encoder)))??;
        if rep.ncols() != dim {
            return Err(Error::DimensionMismatch {
                record: line.id,
                expected: dim,
                found: rep.ncols(),
            });
        }
        sentences.push(SentenceRecord {
            id: line.id,
            split: line.split,
            tokens: line.tokens,
            encoder_rep: Arc::new(rep),
            decode_trace: trace,
            labse_src: line.labse_src,
            labse_hyp: line.labse_hyp,
            gold_chrf: line.gold_chrf,
        });
    }
    if tensors.next().is_some() {
        return Err(Error::header(
            &name,
            format!("{} has more records than sentences", entry.encoder),
        ));
    }

    let mut samples = BTreeMap::new();
    for (size, sref) in entry.samples {
        let stats = match sref {
            SampleRef::Stats { stats } => stats,
            SampleRef::Path { path } => {
                let record = format!("{name}/sample-{size}");
                let general = general.ok_or_else(|| {
                    Error::header(&record, "sample files need a general_vocab in the manifest header")
                })?;
                let text = read_text(base, &path, &record)?;
                let sents: Vec<Vec<&str>> = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| l.split_whitespace().collect())
                    .collect();
                SampleStats::from_sentences(&sents, general)
            }
        };
        samples.insert(size, stats);
    }

    Ok(DomainEntry {
        name,
        sentences,
        samples,
        gold_curve: entry.gold_curve,
    })
}

/// Writes `bytes` to `path` through a temporary sibling file and a rename,
/// so readers never observe a partial file.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `m` under `dir` as `<manifest_name>` plus sibling files, returning
/// the manifest path. Samples are stored inline as statistics.
pub fn write_manifest(dir: impl AsRef<Path>, manifest_name: &str, m: &Manifest) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut out = String::new();
    let header = Header {
        format: FORMAT_TAG.into(),
        tensor_dim: m.tensor_dim,
        general_vocab: m.general_vocab.as_ref().map(|_| "general.vocab".to_string()),
    };
    out.push_str(&serde_json::to_string(&header)?);
    out.push('\n');
    if let Some(g) = &m.general_vocab {
        let mut text = g.tokens().join("\n");
        text.push('\n');
        atomic_write(dir.join("general.vocab"), text.as_bytes())?;
    }

    for dom in &m.domains {
        let stem = file_stem(&dom.name);
        let mut sent_text = String::new();
        let mut trace_text = String::new();
        let mut enc = Vec::new();
        for s in &dom.sentences {
            let line = SentenceLine {
                id: s.id.clone(),
                split: s.split,
                tokens: s.tokens.clone(),
                labse_src: s.labse_src.clone(),
                labse_hyp: s.labse_hyp.clone(),
                gold_chrf: s.gold_chrf.clone(),
            };
            sent_text.push_str(&serde_json::to_string(&line)?);
            sent_text.push('\n');
            trace_text.push_str(&serde_json::to_string(&s.decode_trace)?);
            trace_text.push('\n');
            append_tensor_record(&mut enc, &s.encoder_rep);
        }
        let entry = DomainLine {
            domain: dom.name.clone(),
            sentences: format!("{stem}.sentences.jsonl"),
            encoder: format!("{stem}.enc.dlc"),
            traces: format!("{stem}.trace.jsonl"),
            samples: dom
                .samples
                .iter()
                .map(|(&n, &stats)| (n, SampleRef::Stats { stats }))
                .collect(),
            gold_curve: dom.gold_curve.clone(),
        };
        atomic_write(dir.join(&entry.sentences), sent_text.as_bytes())?;
        atomic_write(dir.join(&entry.traces), trace_text.as_bytes())?;
        atomic_write(dir.join(&entry.encoder), &enc)?;
        out.push_str(&serde_json::to_string(&entry)?);
        out.push('\n');
    }
    let path = dir.join(manifest_name);
    atomic_write(&path, out.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures;
    use crate::dataset::validate_dataset;

    #[test]
    fn round_trip_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixtures::manifest();
        let path = write_manifest(dir.path(), "ok.manifest", &m).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back.domains.len(), 2);
        assert_eq!(back, m);
        assert!(validate_dataset(&back).is_empty());
    }

    #[test]
    fn missing_tensor_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), "m.jsonl", &fixtures::manifest()).unwrap();
        fs::remove_file(dir.path().join("it.enc.dlc")).unwrap();
        match load_manifest(&path) {
            Err(Error::MissingFile { record, .. }) => assert_eq!(record, "it"),
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn narrower_tensor_is_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = fixtures::manifest();
        m.tensor_dim = 32;
        for d in &mut m.domains {
            for s in &mut d.sentences {
                let t = s.tokens.len();
                s.encoder_rep = Arc::new(ndarray::Array2::zeros((t, 32)));
            }
        }
        let path = write_manifest(dir.path(), "m.jsonl", &m).unwrap();
        // swap one sentence's record for a d=16 one
        let mut enc = Vec::new();
        append_tensor_record(&mut enc, &ndarray::Array2::zeros((2, 16)));
        append_tensor_record(&mut enc, &ndarray::Array2::zeros((3, 32)));
        fs::write(dir.path().join("law.enc.dlc"), enc).unwrap();
        match load_manifest(&path) {
            Err(Error::DimensionMismatch {
                record,
                expected,
                found,
            }) => {
                assert_eq!((record.as_str(), expected, found), ("law-0", 32, 16));
            }
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn sample_file_reference() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("general.vocab"), "a\nb\nx\n").unwrap();
        fs::write(dir.path().join("s.txt"), "a b\na c d\n").unwrap();
        fs::write(dir.path().join("d.sentences.jsonl"), "").unwrap();
        fs::write(dir.path().join("d.trace.jsonl"), "").unwrap();
        fs::write(dir.path().join("d.enc.dlc"), "").unwrap();
        let manifest = concat!(
            r#"{"format":"dalc-manifest","tensor_dim":2,"general_vocab":"general.vocab"}"#,
            "\n",
            r#"{"domain":"d","sentences":"d.sentences.jsonl","encoder":"d.enc.dlc","traces":"d.trace.jsonl","samples":{"2":{"path":"s.txt"}}}"#,
            "\n"
        );
        fs::write(dir.path().join("m.jsonl"), manifest).unwrap();
        let m = load_manifest(dir.path().join("m.jsonl")).unwrap();
        let st = m.domains[0].samples[&2];
        assert_eq!(
            (st.n_instances, st.n_tokens, st.n_unique, st.n_unique_in_general),
            (2, 5, 4, 2)
        );
    }

    #[test]
    fn bad_header() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("m.jsonl"), "{\"format\":\"other\",\"tensor_dim\":2}\n").unwrap();
        assert!(matches!(
            load_manifest(dir.path().join("m.jsonl")),
            Err(Error::MalformedHeader { .. })
        ));
        fs::write(dir.path().join("m.jsonl"), "not json\n").unwrap();
        assert!(matches!(
            load_manifest(dir.path().join("m.jsonl")),
            Err(Error::MalformedHeader { .. })
        ));
    }
}
