//! Embedding, face-vector and landmark files.
//!
//! Embeddings come as CSV (`stimulus_id,u0,u1,...`, one row per stimulus)
//! or as LPEM binary:
//!
//! ```text
//! "LPEM"  u32 version = 1  u32 m  u32 n
//! m * n little-endian f64, row-major (neurons x stimuli)
//! n stimulus ids, each a u32 byte length followed by UTF-8
//! ```
//!
//! All integers are little-endian.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::encoding::ResponseMatrix;
use crate::error::{Error, Result};
use crate::paramspace::LandmarkSet;

pub const LPEM_MAGIC: &[u8; 4] = b"LPEM";
pub const LPEM_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Csv,
    Lpem,
}

impl EmbeddingFormat {
    /// `.lpem` and `.bin` are binary, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("lpem") || e.eq_ignore_ascii_case("bin") => Self::Lpem,
            _ => Self::Csv,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path, format: Option<EmbeddingFormat>) -> Result<ResponseMatrix> {
    let bytes = read_file(path)?;
    let label = path.display().to_string();
    match format.unwrap_or_else(|| EmbeddingFormat::from_path(path)) {
        EmbeddingFormat::Csv => parse_embeddings_csv(&bytes, &label),
        EmbeddingFormat::Lpem => parse_lpem(&bytes, &label),
    }
}

pub fn save_embeddings(r: &ResponseMatrix, path: &Path, format: Option<EmbeddingFormat>) -> Result<()> {
    let bytes = match format.unwrap_or_else(|| EmbeddingFormat::from_path(path)) {
        EmbeddingFormat::Csv => embeddings_to_csv(r).into_bytes(),
        EmbeddingFormat::Lpem => encode_lpem(r)?,
    };
    write_file(path, &bytes)
}

/// Face vectors share the embedding layouts, with `p0, p1, ...` as the
/// coordinate names. The format follows the file extension.
pub fn load_face_vectors(path: &Path) -> Result<ResponseMatrix> {
    load_embeddings(path, None)
}

pub fn face_vectors_matrix(p: &DMatrix<f64>, stimulus_ids: Vec<String>) -> Result<ResponseMatrix> {
    ResponseMatrix::new(
        p.clone(),
        (0..p.nrows()).map(|i| format!("p{i}")).collect(),
        stimulus_ids,
    )
}

pub fn embeddings_to_csv(r: &ResponseMatrix) -> String {
    let mut out = String::from("stimulus_id");
    for id in r.neuron_ids() {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (j, sid) in r.stimulus_ids().iter().enumerate() {
        out.push_str(sid);
        for i in 0..r.n_neurons() {
            out.push(',');
            out.push_str(&r.values()[(i, j)].to_string());
        }
        out.push('\n');
    }
    out
}

fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes)
}

fn parse_value(field: &str, path: &str, line: u64, column: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| {
        Error::malformed(path, format!("line {line}, column {column}"), format!("`{field}` is not a number"))
    })?;
    if !v.is_finite() {
        return Err(Error::malformed(
            path,
            format!("line {line}, column {column}"),
            format!("non-finite value `{field}`"),
        ));
    }
    Ok(v)
}

pub fn parse_embeddings_csv(bytes: &[u8], path: &str) -> Result<ResponseMatrix> {
    let mut rdr = csv_reader(bytes);
    let header = rdr
        .headers()
        .map_err(|e| Error::malformed(path, "line 1", e.to_string()))?
        .clone();
    if header.len() < 2 || &header[0] != "stimulus_id" {
        return Err(Error::malformed(
            path,
            "line 1",
            "header must be `stimulus_id` followed by at least one unit name",
        ));
    }
    let neuron_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let m = neuron_ids.len();
    let mut stimulus_ids = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::malformed(path, format!("line {line}"), e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != m + 1 {
            return Err(Error::malformed(
                path,
                format!("line {line}"),
                format!("expected {} fields, found {}", m + 1, rec.len()),
            ));
        }
        stimulus_ids.push(rec[0].to_string());
        for (c, field) in rec.iter().enumerate().skip(1) {
            values.push(parse_value(field, path, line, c + 1)?);
        }
    }
    if stimulus_ids.is_empty() {
        return Err(Error::malformed(path, "end of file", "no stimulus rows"));
    }
    check_unique(&stimulus_ids, path)?;
    let n = stimulus_ids.len();
    // rows were stimuli; transpose to neurons x stimuli
    let matrix = DMatrix::from_row_slice(n, m, &values).transpose();
    ResponseMatrix::new(matrix, neuron_ids, stimulus_ids)
}

fn check_unique(ids: &[String], path: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::malformed(path, "stimulus ids", format!("duplicate stimulus id `{id}`")));
        }
    }
    Ok(())
}

pub fn encode_lpem(r: &ResponseMatrix) -> Result<Vec<u8>> {
    let (m, n) = r.values().shape();
    let m32 = u32::try_from(m).map_err(|_| Error::DimensionOverflow(format!("{m} neurons")))?;
    let n32 = u32::try_from(n).map_err(|_| Error::DimensionOverflow(format!("{n} stimuli")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m * n);
    out.extend_from_slice(LPEM_MAGIC);
    out.extend_from_slice(&LPEM_VERSION.to_le_bytes());
    out.extend_from_slice(&m32.to_le_bytes());
    out.extend_from_slice(&n32.to_le_bytes());
    for i in 0..m {
        for j in 0..n {
            out.extend_from_slice(&r.values()[(i, j)].to_le_bytes());
        }
    }
    for id in r.stimulus_ids() {
        let len = u32::try_from(id.len()).map_err(|_| Error::DimensionOverflow("stimulus id length".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if len > available {
            return Err(Error::malformed(
                self.path,
                format!("byte {}", self.pos),
                format!("truncated {what}: expected {len} bytes, found {available}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn parse_lpem(bytes: &[u8], path: &str) -> Result<ResponseMatrix> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let magic = cur.take(4, "magic")?;
    if magic != LPEM_MAGIC {
        return Err(Error::malformed(path, "byte 0", format!("bad magic {magic:?}, expected \"LPEM\"")));
    }
    let version = cur.u32("version")?;
    if version != LPEM_VERSION {
        return Err(Error::malformed(path, "byte 4", format!("unsupported version {version}")));
    }
    let m = cur.u32("neuron count")? as usize;
    let n = cur.u32("stimulus count")? as usize;
    if m == 0 || n == 0 {
        return Err(Error::malformed(path, "byte 8", format!("empty matrix {m}x{n}")));
    }
    let value_bytes = m
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::DimensionOverflow(format!("{m}x{n} values in {path}")))?;
    let start = cur.pos;
    let raw = cur.take(value_bytes, "value block")?;
    let mut values = DMatrix::zeros(m, n);
    for (k, chunk) in raw.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if !v.is_finite() {
            return Err(Error::malformed(path, format!("byte {}", start + 8 * k), "non-finite value"));
        }
        values[(k / n, k % n)] = v;
    }
    let mut ids = Vec::with_capacity(n);
    for j in 0..n {
        let at = cur.pos;
        let len = cur.u32("stimulus id length")? as usize;
        let raw = cur.take(len, "stimulus id")?;
        let id = std::str::from_utf8(raw)
            .map_err(|_| Error::malformed(path, format!("byte {at}"), format!("stimulus id {j} is not UTF-8")))?;
        ids.push(id.to_string());
    }
    if cur.pos != bytes.len() {
        return Err(Error::malformed(
            path,
            format!("byte {}", cur.pos),
            format!("{} trailing bytes", bytes.len() - cur.pos),
        ));
    }
    check_unique(&ids, path)?;
    ResponseMatrix::new(values, (0..m).map(|i| format!("u{i}")).collect(), ids)
}

/// Landmarks CSV: `image_id,x1,y1,x2,y2,...`.
pub fn load_landmarks(path: &Path) -> Result<Vec<(String, LandmarkSet)>> {
    let bytes = read_file(path)?;
    let label = path.display().to_string();
    let mut rdr = csv_reader(&bytes);
    let header = rdr
        .headers()
        .map_err(|e| Error::malformed(&label, "line 1", e.to_string()))?
        .clone();
    if header.len() < 3 || (header.len() - 1) % 2 != 0 || &header[0] != "image_id" {
        return Err(Error::malformed(
            &label,
            "line 1",
            "header must be `image_id` followed by x/y column pairs",
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::malformed(&label, "record", e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::malformed(
                &label,
                format!("line {line}"),
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let flat = rec
            .iter()
            .enumerate()
            .skip(1)
            .map(|(c, f)| parse_value(f, &label, line, c + 1))
            .collect::<Result<Vec<_>>>()?;
        out.push((rec[0].to_string(), LandmarkSet::from_flat(&flat)?));
    }
    Ok(out)
}

pub fn landmarks_to_csv(rows: &[(String, LandmarkSet)]) -> String {
    let l = rows.first().map(|r| r.1.len()).unwrap_or(0);
    let mut out = String::from("image_id");
    for k in 1..=l {
        out.push_str(&format!(",x{k},y{k}"));
    }
    out.push('\n');
    for (id, set) in rows {
        out.push_str(id);
        for p in set.points() {
            out.push_str(&format!(",{},{}", p[0], p[1]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_written_csv() {
        let text = "stimulus_id,u0,u1\na,1.0,2.0\nb,3.5,-1\nc,0,4e-1\n";
        let r = parse_embeddings_csv(text.as_bytes(), "t.csv").unwrap();
        assert_eq!(r.neuron_ids(), ["u0", "u1"]);
        assert_eq!(r.stimulus_ids(), ["a", "b", "c"]);
        assert_eq!(r.values(), &DMatrix::from_row_slice(2, 3, &[1.0, 3.5, 0.0, 2.0, -1.0, 0.4]));
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = parse_embeddings_csv(b"stimulus_id,u0\na,1\nb,x\n", "t.csv").unwrap_err();
        match err {
            Error::MalformedFile { location, .. } => assert_eq!(location, "line 3, column 2"),
            e => panic!("{e}"),
        }
        assert!(parse_embeddings_csv(b"id,u0\na,1\n", "t.csv").is_err());
        assert!(parse_embeddings_csv(b"stimulus_id,u0\na,1,2\n", "t.csv").is_err());
        assert!(parse_embeddings_csv(b"stimulus_id,u0\na,1\na,2\n", "t.csv").is_err());
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let values = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 0.1) / (j as f64 + 0.7) * 1e-3);
        let r = ResponseMatrix::new(
            values,
            vec!["u0".into(), "u1".into(), "u2".into()],
            vec!["a".into(), "bé".into(), "c".into(), "".into()],
        )
        .unwrap();
        let bytes = encode_lpem(&r).unwrap();
        let back = parse_lpem(&bytes, "x.lpem").unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn truncated_binary_reports_lengths() {
        let r = ResponseMatrix::from_matrix(DMatrix::from_element(2, 2, 1.0)).unwrap();
        let bytes = encode_lpem(&r).unwrap();
        let err = parse_lpem(&bytes[..30], "x.lpem").unwrap_err();
        match err {
            Error::MalformedFile { location, message, .. } => {
                assert_eq!(location, "byte 16");
                assert!(message.contains("expected 32 bytes, found 14"), "{message}");
            }
            e => panic!("{e}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(parse_lpem(&bad, "x").is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(parse_lpem(&extra, "x").is_err());
    }

    #[test]
    fn oversized_header_overflows_or_truncates() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(LPEM_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        let err = parse_lpem(&bytes, "x").unwrap_err();
        assert!(matches!(err, Error::DimensionOverflow(_) | Error::MalformedFile { .. }));
    }

    #[test]
    fn landmarks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            ("img1".to_string(), LandmarkSet::new(vec![[1.0, 2.0], [3.0, 4.5]]).unwrap()),
            ("img2".to_string(), LandmarkSet::new(vec![[0.0, -1.0], [2.0, 2.0]]).unwrap()),
        ];
        let path = dir.path().join("lm.csv");
        std::fs::write(&path, landmarks_to_csv(&rows)).unwrap();
        let back = load_landmarks(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].0, "img2");
        assert_eq!(back[1].1.points(), rows[1].1.points());
    }
}
