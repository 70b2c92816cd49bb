// SPDX-License-Identifier: Apache-2.0

//! The RVAR container and CSV fixture ingestion.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "RVAR" | version: u32 = 1 | section*
//! section = tag: [u8; 4] | length: u64 | payload: [u8; length]
//! ```
//!
//! | tag  | payload                                                      |
//! |------|--------------------------------------------------------------|
//! | HDRX | R: u64, N: u64, K: u32, flags: u32 (always first)            |
//! | LABL | N × u16 labels                                               |
//! | PRED | R × N × u16 predictions, run-major                           |
//! | CBIT | R rows of ceil(N/64) u64 words, LSB-first                    |
//! | LOGT | R × N × K f32 logits, run-major, example-major, then class   |
//! | KERN | N × N f32 kernel, row-major; NaN rows mark invalid examples  |
//! | META | UTF-8 JSON object of string → string                         |
//!
//! `flags` bit 0 is set iff LOGT is present, bit 1 iff KERN is present.
//! Writers emit sections in the order HDRX, LABL, PRED, CBIT, LOGT, KERN,
//! META, so identical inputs give byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{correctness_from_predictions, words_for, CorrectnessMatrix, LogitTensor, RunMatrix};
use crate::npck::KernelMatrix;

pub const MAGIC: [u8; 4] = *b"RVAR";
pub const VERSION: u32 = 1;

pub const FLAG_LOGITS: u32 = 1;
pub const FLAG_KERNEL: u32 = 1 << 1;

const HDRX: [u8; 4] = *b"HDRX";
const LABL: [u8; 4] = *b"LABL";
const PRED: [u8; 4] = *b"PRED";
const CBIT: [u8; 4] = *b"CBIT";
const LOGT: [u8; 4] = *b"LOGT";
const KERN: [u8; 4] = *b"KERN";
const META: [u8; 4] = *b"META";

const HEADER_LEN: usize = 24;

/// Outcome payload of a file: full predictions or correctness bits only.
#[derive(Debug, Clone, Copy)]
pub enum Outcomes<'a> {
    Predictions(&'a RunMatrix),
    Correctness(&'a CorrectnessMatrix),
}

/// Everything an RVAR file can hold, exactly as stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RvarContents {
    pub run_matrix: Option<RunMatrix>,
    pub correctness: Option<CorrectnessMatrix>,
    pub logits: Option<LogitTensor>,
    pub kernel: Option<KernelMatrix>,
    pub meta: BTreeMap<String, String>,
}

impl RvarContents {
    pub fn from_outcomes(outcomes: Outcomes<'_>, logits: Option<&LogitTensor>) -> Self {
        let mut contents = RvarContents::default();
        match outcomes {
            Outcomes::Predictions(m) => {
                contents.meta = m.meta().clone();
                contents.run_matrix = Some(m.clone());
            }
            Outcomes::Correctness(c) => contents.correctness = Some(c.clone()),
        }
        contents.logits = logits.cloned();
        contents
    }

    pub fn require_run_matrix(&self) -> Result<&RunMatrix> {
        self.run_matrix.as_ref().ok_or(Error::MissingSection("PRED"))
    }

    /// Stored correctness bits, or bits derived from predictions.
    pub fn correctness_matrix(&self) -> Result<CorrectnessMatrix> {
        match (&self.correctness, &self.run_matrix) {
            (Some(c), _) => Ok(c.clone()),
            (None, Some(m)) => Ok(correctness_from_predictions(m)),
            (None, None) => Err(Error::MissingSection("CBIT or PRED")),
        }
    }

    pub fn require_logits(&self) -> Result<&LogitTensor> {
        self.logits.as_ref().ok_or(Error::MissingSection("LOGT"))
    }

    pub fn require_kernel(&self) -> Result<&KernelMatrix> {
        self.kernel.as_ref().ok_or(Error::MissingSection("KERN"))
    }

    fn dims(&self) -> Result<(u64, u64, u32)> {
        let mut runs: Option<usize> = None;
        let mut examples: Option<usize> = None;
        let mut classes: Option<u32> = None;
        let agree = |what: &str, slot: &mut Option<usize>, v: usize| -> Result<()> {
            match *slot {
                Some(prev) if prev != v => Err(Error::DimensionMismatch(format!(
                    "{what}: {prev} vs {v} across payloads"
                ))),
                _ => {
                    *slot = Some(v);
                    Ok(())
                }
            }
        };
        if let Some(m) = &self.run_matrix {
            agree("runs", &mut runs, m.runs())?;
            agree("examples", &mut examples, m.examples())?;
            classes = Some(m.classes());
        }
        if let Some(c) = &self.correctness {
            agree("runs", &mut runs, c.runs())?;
            agree("examples", &mut examples, c.examples())?;
        }
        if let Some(t) = &self.logits {
            agree("runs", &mut runs, t.runs())?;
            agree("examples", &mut examples, t.examples())?;
            match classes {
                Some(k) if k as usize != t.classes() => {
                    return Err(Error::DimensionMismatch(format!(
                        "classes: {k} in predictions vs {} in logits",
                        t.classes()
                    )))
                }
                _ => classes = Some(t.classes() as u32),
            }
        }
        if let Some(k) = &self.kernel {
            agree("examples", &mut examples, k.n())?;
            if runs.is_none() {
                runs = Some(k.runs_used());
            }
            if classes.is_none() {
                classes = Some(k.classes_used() as u32);
            }
        }
        match (runs, examples) {
            (Some(r), Some(n)) => Ok((r as u64, n as u64, classes.unwrap_or(0))),
            _ => Err(Error::InvalidInput(
                "nothing to write: need predictions, correctness or a kernel".into(),
            )),
        }
    }
}

fn push_section(out: &mut Vec<u8>, tag: [u8; 4], payload: &[u8]) {
    out.extend_from_slice(&tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

/// Serializes `contents` to RVAR bytes.
pub fn encode_rvar(contents: &RvarContents) -> Result<Vec<u8>> {
    let (runs, examples, classes) = contents.dims()?;
    let mut flags = 0u32;
    if contents.logits.is_some() {
        flags |= FLAG_LOGITS;
    }
    if contents.kernel.is_some() {
        flags |= FLAG_KERNEL;
    }

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());

    let mut hdr = Vec::with_capacity(HEADER_LEN);
    hdr.extend_from_slice(&runs.to_le_bytes());
    hdr.extend_from_slice(&examples.to_le_bytes());
    hdr.extend_from_slice(&classes.to_le_bytes());
    hdr.extend_from_slice(&flags.to_le_bytes());
    push_section(&mut out, HDRX, &hdr);

    if let Some(m) = &contents.run_matrix {
        let labl: Vec<u8> = m.labels().iter().flat_map(|l| l.to_le_bytes()).collect();
        push_section(&mut out, LABL, &labl);
        let pred: Vec<u8> = m.predictions().iter().flat_map(|p| p.to_le_bytes()).collect();
        push_section(&mut out, PRED, &pred);
    }
    if let Some(c) = &contents.correctness {
        let cbit: Vec<u8> = c.words().iter().flat_map(|w| w.to_le_bytes()).collect();
        push_section(&mut out, CBIT, &cbit);
    }
    if let Some(t) = &contents.logits {
        let logt: Vec<u8> = t.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        push_section(&mut out, LOGT, &logt);
    }
    if let Some(k) = &contents.kernel {
        let n = k.n();
        let mut kern = Vec::with_capacity(n * n * 4);
        for i in 0..n {
            for j in 0..n {
                let v = if k.is_valid(i) && k.is_valid(j) {
                    k.get(i, j) as f32
                } else {
                    f32::NAN
                };
                kern.extend_from_slice(&v.to_le_bytes());
            }
        }
        push_section(&mut out, KERN, &kern);
    }
    if !contents.meta.is_empty() {
        let json = serde_json::to_string(&contents.meta)?;
        push_section(&mut out, META, json.as_bytes());
    }
    Ok(out)
}

pub fn write_rvar(outcomes: Outcomes<'_>, logits: Option<&LogitTensor>, path: &Path) -> Result<()> {
    write_rvar_contents(&RvarContents::from_outcomes(outcomes, logits), path)
}

pub fn write_rvar_contents(contents: &RvarContents, path: &Path) -> Result<()> {
    let bytes = encode_rvar(contents)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_rvar(path: &Path) -> Result<RvarContents> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rvar(&bytes)
}

fn section_name(tag: &[u8; 4]) -> String {
    String::from_utf8_lossy(tag).into_owned()
}

fn checked_len(parts: &[u64], elem: u64, what: &str) -> Result<usize> {
    parts
        .iter()
        .try_fold(elem, |acc, &p| acc.checked_mul(p))
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| Error::InvariantViolation(format!("{what} size overflows")))
}

fn expect_len(tag: &[u8; 4], payload: &[u8], expected: usize) -> Result<()> {
    if payload.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{} payload is {} bytes, header implies {}",
            section_name(tag),
            payload.len(),
            expected
        )));
    }
    Ok(())
}

/// Parses RVAR bytes, validating every invariant of the format.
pub fn decode_rvar(bytes: &[u8]) -> Result<RvarContents> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, no magic", bytes.len())));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < 8 {
        return Err(Error::Truncated("missing version".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }

    let mut sections: Vec<([u8; 4], &[u8])> = Vec::new();
    let mut pos = 8usize;
    while pos < bytes.len() {
        let rest = bytes.len() - pos;
        if rest < 12 {
            return Err(Error::Truncated(format!(
                "{rest} trailing bytes at offset {pos}, section header needs 12"
            )));
        }
        let tag: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
        let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap());
        let avail = (rest - 12) as u64;
        if len > avail {
            return Err(Error::Truncated(format!(
                "section {} declares {len} bytes, only {avail} remain",
                section_name(&tag)
            )));
        }
        let start = pos + 12;
        let end = start + len as usize;
        if sections.iter().any(|(t, _)| *t == tag) {
            return Err(Error::InvariantViolation(format!(
                "duplicate {} section",
                section_name(&tag)
            )));
        }
        if ![HDRX, LABL, PRED, CBIT, LOGT, KERN, META].contains(&tag) {
            return Err(Error::InvariantViolation(format!(
                "unknown section tag {:?}",
                section_name(&tag)
            )));
        }
        sections.push((tag, &bytes[start..end]));
        pos = end;
    }

    let Some(&(first_tag, hdr)) = sections.first() else {
        return Err(Error::Truncated("no sections".into()));
    };
    if first_tag != HDRX {
        return Err(Error::InvariantViolation(format!(
            "first section must be HDRX, found {}",
            section_name(&first_tag)
        )));
    }
    expect_len(&HDRX, hdr, HEADER_LEN)?;
    let runs = u64::from_le_bytes(hdr[0..8].try_into().unwrap());
    let examples = u64::from_le_bytes(hdr[8..16].try_into().unwrap());
    let classes = u32::from_le_bytes(hdr[16..20].try_into().unwrap());
    let flags = u32::from_le_bytes(hdr[20..24].try_into().unwrap());
    if flags & !(FLAG_LOGITS | FLAG_KERNEL) != 0 {
        return Err(Error::InvariantViolation(format!("unknown flag bits {flags:#x}")));
    }

    let find = |tag: [u8; 4]| sections.iter().find(|(t, _)| *t == tag).map(|(_, p)| *p);
    let (labl, pred, cbit, logt, kern, meta) = (
        find(LABL),
        find(PRED),
        find(CBIT),
        find(LOGT),
        find(KERN),
        find(META),
    );

    if (flags & FLAG_LOGITS != 0) != logt.is_some() {
        return Err(Error::InvariantViolation(
            "has-logits flag disagrees with LOGT presence".into(),
        ));
    }
    if (flags & FLAG_KERNEL != 0) != kern.is_some() {
        return Err(Error::InvariantViolation(
            "has-kernel flag disagrees with KERN presence".into(),
        ));
    }
    if pred.is_some() != labl.is_some() {
        return Err(Error::InvariantViolation(
            "PRED and LABL must appear together".into(),
        ));
    }
    if pred.is_none() && cbit.is_none() && kern.is_none() {
        return Err(Error::MissingSection("PRED/LABL or CBIT"));
    }

    let r = usize::try_from(runs).map_err(|_| Error::InvariantViolation("R too large".into()))?;
    let n =
        usize::try_from(examples).map_err(|_| Error::InvariantViolation("N too large".into()))?;

    let mut contents = RvarContents::default();

    if let Some(json) = meta {
        let text = std::str::from_utf8(json)
            .map_err(|e| Error::InvariantViolation(format!("META is not UTF-8: {e}")))?;
        contents.meta = serde_json::from_str(text)
            .map_err(|e| Error::InvariantViolation(format!("META is not a string map: {e}")))?;
    }

    if let (Some(labl), Some(pred)) = (labl, pred) {
        expect_len(&LABL, labl, checked_len(&[examples], 2, "LABL")?)?;
        expect_len(&PRED, pred, checked_len(&[runs, examples], 2, "PRED")?)?;
        let labels = labl
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect();
        let predictions = pred
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect();
        let m = RunMatrix::new(r, n, classes, predictions, labels)?.with_meta(contents.meta.clone());
        contents.run_matrix = Some(m);
    }

    if let Some(cbit) = cbit {
        let words = words_for(n) as u64;
        expect_len(&CBIT, cbit, checked_len(&[runs, words], 8, "CBIT")?)?;
        let bits = cbit
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let c = CorrectnessMatrix::from_words(r, n, bits)?;
        if let Some(m) = &contents.run_matrix {
            if correctness_from_predictions(m) != c {
                return Err(Error::InvariantViolation(
                    "CBIT disagrees with PRED/LABL".into(),
                ));
            }
        }
        contents.correctness = Some(c);
    }

    if let Some(logt) = logt {
        expect_len(
            &LOGT,
            logt,
            checked_len(&[runs, examples, classes as u64], 4, "LOGT")?,
        )?;
        let values = logt
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        contents.logits = Some(LogitTensor::new(r, n, classes as usize, values)?);
    }

    if let Some(kern) = kern {
        expect_len(&KERN, kern, checked_len(&[examples, examples], 4, "KERN")?)?;
        let values: Vec<f32> = kern
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        contents.kernel = Some(KernelMatrix::from_stored(
            n,
            r,
            classes as usize,
            &values,
        )?);
    }

    Ok(contents)
}

/// Reads a `label,run0,run1,...` CSV with one row per example.
///
/// The class count is `classes` when given, else the largest id seen plus one
/// (at least 2).
pub fn read_csv_predictions(path: &Path, classes: Option<u32>) -> Result<RunMatrix> {
    let csv_err = |line: usize, msg: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();
    if headers.get(0) != Some("label") {
        return Err(csv_err(1, "first header column must be \"label\"".into()));
    }
    let runs = headers.len() - 1;
    if runs == 0 {
        return Err(csv_err(1, "no run columns".into()));
    }

    let mut labels = Vec::new();
    let mut columns: Vec<Vec<u16>> = Vec::new();
    let mut max_id = 0u16;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| csv_err(line, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(csv_err(
                line,
                format!("ragged row: {} cells, header has {}", record.len(), headers.len()),
            ));
        }
        let ids = record
            .iter()
            .map(|cell| {
                let v: u64 = cell
                    .parse()
                    .map_err(|_| csv_err(line, format!("non-integer cell {cell:?}")))?;
                u16::try_from(v)
                    .ok()
                    .filter(|&id| id < u16::MAX)
                    .ok_or_else(|| csv_err(line, format!("class id {v} overflows u16 range")))
            })
            .collect::<Result<Vec<u16>>>()?;
        max_id = max_id.max(*ids.iter().max().unwrap());
        labels.push(ids[0]);
        columns.push(ids[1..].to_vec());
    }
    if labels.is_empty() {
        return Err(csv_err(2, "no data rows".into()));
    }

    let k = match classes {
        Some(k) => {
            if max_id as u32 >= k {
                return Err(csv_err(0, format!("class id {max_id} ≥ K={k}")));
            }
            k
        }
        None => (max_id as u32 + 1).max(2),
    };
    let n = labels.len();
    let mut predictions = vec![0u16; runs * n];
    for (i, row) in columns.iter().enumerate() {
        for (r, &p) in row.iter().enumerate() {
            predictions[r * n + i] = p;
        }
    }
    RunMatrix::new(runs, n, k, predictions, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture() -> RunMatrix {
        RunMatrix::from_rows(&[vec![0, 1, 2], vec![1, 1, 2]], vec![0, 1, 0], 3).unwrap()
    }

    #[test]
    fn roundtrip_run_matrix_via_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rvar");
        let m = fixture();
        write_rvar(Outcomes::Predictions(&m), None, &path).unwrap();
        let back = read_rvar(&path).unwrap();
        assert_eq!(back.require_run_matrix().unwrap(), &m);
        assert_eq!(back.correctness_matrix().unwrap(), correctness_from_predictions(&m));
    }

    #[test]
    fn writes_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.rvar"), dir.path().join("b.rvar"));
        let m = fixture().with_meta([("dataset".to_string(), "toy".to_string())].into());
        write_rvar(Outcomes::Predictions(&m), None, &a).unwrap();
        write_rvar(Outcomes::Predictions(&m), None, &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn correctness_only_file() {
        let c = correctness_from_predictions(&fixture());
        let bytes = encode_rvar(&RvarContents::from_outcomes(Outcomes::Correctness(&c), None)).unwrap();
        let back = decode_rvar(&bytes).unwrap();
        assert_eq!(back.correctness_matrix().unwrap(), c);
        assert!(matches!(back.require_run_matrix(), Err(Error::MissingSection("PRED"))));
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode_rvar(&RvarContents::from_outcomes(Outcomes::Predictions(&fixture()), None)).unwrap();
        assert_eq!(&bytes[0..4], b"RVAR");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], b"HDRX");
        assert_eq!(&bytes[12..20], &24u64.to_le_bytes());
        assert_eq!(&bytes[20..28], &2u64.to_le_bytes());
        assert_eq!(&bytes[28..36], &3u64.to_le_bytes());
        assert_eq!(&bytes[36..40], &3u32.to_le_bytes());
        assert_eq!(&bytes[40..44], &0u32.to_le_bytes());
        assert_eq!(&bytes[44..48], b"LABL");
    }

    #[test]
    fn corrupt_magic() {
        let mut bytes = encode_rvar(&RvarContents::from_outcomes(Outcomes::Predictions(&fixture()), None)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_rvar(&bytes), Err(Error::BadMagic(_))));
    }

    #[test]
    fn section_past_end() {
        let bytes = encode_rvar(&RvarContents::from_outcomes(Outcomes::Predictions(&fixture()), None)).unwrap();
        let cut = &bytes[..bytes.len() - 1];
        assert!(matches!(decode_rvar(cut), Err(Error::Truncated(_))));
    }

    #[test]
    fn unknown_version() {
        let mut bytes = encode_rvar(&RvarContents::from_outcomes(Outcomes::Predictions(&fixture()), None)).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_rvar(&bytes), Err(Error::UnsupportedVersion(2))));
    }

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_transposes_rows() {
        let f = write_tmp("label,run0,run1\n0,0,1\n1,1,1\n0,2,2\n");
        let m = read_csv_predictions(f.path(), None).unwrap();
        assert_eq!((m.runs(), m.examples(), m.classes()), (2, 3, 3));
        assert_eq!(m.row(0), &[0, 1, 2]);
        assert_eq!(m.row(1), &[1, 1, 2]);
        assert_eq!(m.labels(), &[0, 1, 0]);
    }

    #[test]
    fn csv_infers_classes() {
        let f = write_tmp("label,run0\n10,3\n2,2\n");
        assert_eq!(read_csv_predictions(f.path(), None).unwrap().classes(), 11);
        assert_eq!(read_csv_predictions(f.path(), Some(20)).unwrap().classes(), 20);
        assert!(read_csv_predictions(f.path(), Some(5)).is_err());
    }

    #[test]
    fn csv_errors() {
        let empty = write_tmp("label,run0,run1\n");
        assert!(matches!(read_csv_predictions(empty.path(), None), Err(Error::Csv { .. })));
        let ragged = write_tmp("label,run0,run1\n0,1\n");
        assert!(matches!(read_csv_predictions(ragged.path(), None), Err(Error::Csv { .. })));
        let text = write_tmp("label,run0\n0,x\n");
        assert!(matches!(read_csv_predictions(text.path(), None), Err(Error::Csv { .. })));
        let big = write_tmp("label,run0\n0,70000\n");
        assert!(matches!(read_csv_predictions(big.path(), None), Err(Error::Csv { .. })));
    }
}
