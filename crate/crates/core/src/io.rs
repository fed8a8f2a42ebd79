//! File formats: CSV and FGB1 matrices, label files, and the JSON manifests
//! describing heads and networks.
//!
//! FGB1 layout: the ASCII magic `FGB1`, `rows` and `cols` as little-endian
//! `u64`, then `rows * cols` little-endian `f64` values in row-major order.
//! Nothing follows the payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureDataset, Layer, LinearHead, MlpNetwork};
use crate::tensor::{Matrix, Vector};

pub const FGB1_MAGIC: &[u8; 4] = b"FGB1";
const FGB1_HEADER: usize = 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Fgb1,
}

impl MatrixFormat {
    /// `.fgb`, `.fgb1` and `.bin` select FGB1; anything else is CSV.
    pub fn from_path(path: &Path) -> MatrixFormat {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("fgb" | "fgb1" | "bin") => MatrixFormat::Fgb1,
            _ => MatrixFormat::Csv,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a matrix, sniffing the FGB1 magic and falling back to CSV.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = read(path)?;
    if bytes.starts_with(FGB1_MAGIC) {
        decode_fgb1(&bytes, path)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::format(path, format!("byte {}", e.utf8_error().valid_up_to()), "not valid UTF-8"))?;
        parse_csv_matrix(&text, path)
    }
}

pub fn store_matrix(m: &Matrix, path: impl AsRef<Path>, format: MatrixFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        MatrixFormat::Fgb1 => write(path, &encode_fgb1(m)),
        MatrixFormat::Csv => write(path, write_csv_matrix(m).as_bytes()),
    }
}

pub fn encode_fgb1(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(FGB1_HEADER + 8 * m.data().len());
    out.extend_from_slice(FGB1_MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fgb1(bytes: &[u8], path: &Path) -> Result<Matrix> {
    if bytes.len() < 4 || &bytes[..4] != FGB1_MAGIC {
        return Err(Error::format(path, "offset 0", "bad magic, expected \"FGB1\""));
    }
    if bytes.len() < FGB1_HEADER {
        return Err(Error::format(
            path,
            format!("offset {}", bytes.len()),
            format!("truncated header: {FGB1_HEADER} bytes required"),
        ));
    }
    let u64_at = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let rows = u64_at(4);
    let cols = u64_at(12);
    let count = rows
        .checked_mul(cols)
        .and_then(|c| usize::try_from(c).ok())
        .filter(|c| c.checked_mul(8).is_some())
        .ok_or_else(|| Error::format(path, "offset 4", format!("{rows}x{cols} is too large")))?;
    let payload = &bytes[FGB1_HEADER..];
    if payload.len() < count * 8 {
        return Err(Error::format(
            path,
            format!("offset {}", bytes.len()),
            format!(
                "truncated payload: {rows}x{cols} needs {} bytes, found {}",
                count * 8,
                payload.len()
            ),
        ));
    }
    if payload.len() > count * 8 {
        return Err(Error::format(
            path,
            format!("offset {}", FGB1_HEADER + count * 8),
            format!("{} trailing bytes after payload", payload.len() - count * 8),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (k, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(
                path,
                format!("offset {}", FGB1_HEADER + 8 * k),
                format!("non-finite value {v}"),
            ));
        }
        data.push(v);
    }
    Matrix::new(rows as usize, cols as usize, data)
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses comma-separated numbers. A first row made only of non-numeric
/// cells is treated as a header and skipped.
pub fn parse_csv_matrix(text: &str, path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0;
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::format(path, format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if first {
            first = false;
            if record.iter().all(|c| parse_number(c).is_none()) && record.iter().any(|c| !c.is_empty()) {
                continue;
            }
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::format(
                    path,
                    format!("line {line}"),
                    format!("expected {c} cells, found {}", record.len()),
                ))
            }
            _ => {}
        }
        for (col, cell) in record.iter().enumerate() {
            let v = parse_number(cell).ok_or_else(|| {
                Error::format(
                    path,
                    format!("line {line}, column {}", col + 1),
                    format!("cannot parse {cell:?} as a finite number"),
                )
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Matrix::new(rows, cols.unwrap_or(0), data)
}

/// Formats a value so it parses back to the same bits.
pub(crate) fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn write_csv_matrix(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// One decimal class id per line. Blank lines are ignored.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = String::from_utf8(read(path)?)
        .map_err(|_| Error::format(path, "byte 0", "not valid UTF-8"))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|_| {
                Error::format(
                    path,
                    format!("line {}", i + 1),
                    format!("{:?} is not a nonnegative integer label", l.trim()),
                )
            })
        })
        .collect()
}

pub fn store_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    write(path.as_ref(), out.as_bytes())
}

pub fn load_dataset(
    features_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    n_classes: usize,
) -> Result<FeatureDataset> {
    let features = load_matrix(features_path)?;
    let labels = load_labels(labels_path)?;
    FeatureDataset::new(features, labels, n_classes)
}

/// Loads a single vector stored as one row or one column.
pub fn load_vector(path: impl AsRef<Path>) -> Result<Vector> {
    let path = path.as_ref();
    let m = load_matrix(path)?;
    if m.rows() == 1 || m.cols() == 1 {
        Ok(m.into_data())
    } else {
        Err(Error::format(
            path,
            "line 1",
            format!("expected a single row or column, found {}x{}", m.rows(), m.cols()),
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixSource {
    Inline(Vec<Vec<f64>>),
    File(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum VectorSource {
    Inline(Vec<f64>),
    File(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum BoundSource {
    Scalar(f64),
    Inline(Vec<f64>),
    File(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadManifest {
    features: usize,
    classes: usize,
    weights: MatrixSource,
    bias: VectorSource,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum LayerManifest {
    Dense {
        #[serde(rename = "in")]
        input: usize,
        out: usize,
        weights: MatrixSource,
        bias: VectorSource,
    },
    Relu,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkManifest {
    layers: Vec<LayerManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_lo: Option<BoundSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_hi: Option<BoundSource>,
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        Error::format(
            path,
            format!("line {}, column {}", e.line(), e.column()),
            e.to_string(),
        )
    })
}

fn resolve(manifest: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn matrix_from(src: MatrixSource, manifest: &Path) -> Result<Matrix> {
    match src {
        MatrixSource::Inline(rows) => Matrix::from_rows(&rows),
        MatrixSource::File(rel) => load_matrix(resolve(manifest, &rel)),
    }
}

fn vector_from(src: VectorSource, manifest: &Path) -> Result<Vector> {
    match src {
        VectorSource::Inline(v) => Ok(v),
        VectorSource::File(rel) => load_vector(resolve(manifest, &rel)),
    }
}

/// Loads a head manifest: `{"features", "classes", "weights", "bias"}` where
/// weights are features-by-classes and each array may be inline or a path
/// (relative to the manifest) to a matrix file.
pub fn load_head(path: impl AsRef<Path>) -> Result<LinearHead> {
    let path = path.as_ref();
    let manifest: HeadManifest = parse_json(path)?;
    let weights = matrix_from(manifest.weights, path)?;
    let bias = vector_from(manifest.bias, path)?;
    if weights.rows() != manifest.features || weights.cols() != manifest.classes {
        return Err(Error::shape(format!(
            "{}: manifest declares {}x{} weights, found {}x{}",
            path.display(),
            manifest.features,
            manifest.classes,
            weights.rows(),
            weights.cols()
        )));
    }
    LinearHead::new(weights, bias)
}

fn inline_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.to_vec()).collect()
}

pub fn store_head(head: &LinearHead, path: impl AsRef<Path>) -> Result<()> {
    let manifest = HeadManifest {
        features: head.features(),
        classes: head.classes(),
        weights: MatrixSource::Inline(inline_rows(head.weights())),
        bias: VectorSource::Inline(head.bias().to_vec()),
    };
    write(path.as_ref(), serde_json::to_string_pretty(&manifest).unwrap().as_bytes())
}

fn bound_from(src: Option<BoundSource>, dim: usize, default: f64, manifest: &Path) -> Result<Vector> {
    match src {
        None => Ok(vec![default; dim]),
        Some(BoundSource::Scalar(v)) => Ok(vec![v; dim]),
        Some(BoundSource::Inline(v)) => Ok(v),
        Some(BoundSource::File(rel)) => load_vector(resolve(manifest, &rel)),
    }
}

/// Loads a network manifest: `{"layers": [...], "input_lo", "input_hi"}`.
/// Dense layers carry `in`, `out`, input-by-output `weights` and `bias`.
/// Missing bounds default to `[0, 1]` per input.
pub fn load_network(path: impl AsRef<Path>) -> Result<MlpNetwork> {
    let path = path.as_ref();
    let manifest: NetworkManifest = parse_json(path)?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (idx, layer) in manifest.layers.into_iter().enumerate() {
        match layer {
            LayerManifest::Relu => layers.push(Layer::Relu),
            LayerManifest::Dense {
                input,
                out,
                weights,
                bias,
            } => {
                let weights = matrix_from(weights, path)?;
                let bias = vector_from(bias, path)?;
                if weights.rows() != input || weights.cols() != out {
                    return Err(Error::shape(format!(
                        "layer {idx} declares dense({input}, {out}) but weights are {}x{}",
                        weights.rows(),
                        weights.cols()
                    )));
                }
                layers.push(Layer::dense(weights, bias));
            }
        }
    }
    let dim = layers
        .iter()
        .find_map(|l| match l {
            Layer::Dense { weights, .. } => Some(weights.rows()),
            Layer::Relu => None,
        })
        .unwrap_or(0);
    let lo = bound_from(manifest.input_lo, dim, 0.0, path)?;
    let hi = bound_from(manifest.input_hi, dim, 1.0, path)?;
    MlpNetwork::new(layers, lo, hi)
}

pub fn store_network(net: &MlpNetwork, path: impl AsRef<Path>) -> Result<()> {
    let layers = net
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Relu => LayerManifest::Relu,
            Layer::Dense { weights, bias } => LayerManifest::Dense {
                input: weights.rows(),
                out: weights.cols(),
                weights: MatrixSource::Inline(inline_rows(weights)),
                bias: VectorSource::Inline(bias.clone()),
            },
        })
        .collect();
    let manifest = NetworkManifest {
        layers,
        input_lo: Some(BoundSource::Inline(net.input_lo().to_vec())),
        input_hi: Some(BoundSource::Inline(net.input_hi().to_vec())),
    };
    write(path.as_ref(), serde_json::to_string_pretty(&manifest).unwrap().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.csv")
    }

    #[test]
    fn csv_direct_parse() {
        let m = parse_csv_matrix("1,2\n3,4", p()).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 2));
        assert_eq!(m.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn csv_header_is_detected() {
        let m = parse_csv_matrix("a,b\n1,2\n", p()).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 2));
    }

    #[test]
    fn csv_ragged_row_names_line() {
        let err = parse_csv_matrix("1,2\n3,4,5\n", p()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn csv_non_numeric_cell() {
        let err = parse_csv_matrix("1,2\n3,x\n", p()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2, column 2"), "{msg}");
    }

    #[test]
    fn csv_empty_is_empty_matrix() {
        let m = parse_csv_matrix("", p()).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn fgb1_layout_is_exact() {
        let m = Matrix::from_rows(&[[1.5, -2.0]]).unwrap();
        let bytes = encode_fgb1(&m);
        assert_eq!(&bytes[..4], b"FGB1");
        assert_eq!(&bytes[4..12], &1u64.to_le_bytes());
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        assert_eq!(&bytes[20..28], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 36);
        assert_eq!(decode_fgb1(&bytes, p()).unwrap(), m);
    }

    #[test]
    fn fgb1_errors() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let bytes = encode_fgb1(&m);
        let err = decode_fgb1(&bytes[..30], p()).unwrap_err().to_string();
        assert!(err.contains("truncated payload"), "{err}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_fgb1(&bad, p()).unwrap_err().to_string().contains("bad magic"));
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_fgb1(&long, p()).unwrap_err().to_string().contains("trailing"));
        assert!(decode_fgb1(&bytes[..10], p()).unwrap_err().to_string().contains("truncated header"));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(MatrixFormat::from_path(Path::new("a.fgb")), MatrixFormat::Fgb1);
        assert_eq!(MatrixFormat::from_path(Path::new("a.csv")), MatrixFormat::Csv);
    }

    #[test]
    fn fmt_f64_round_trips() {
        for v in [0.1, 1e-300, -3.25e20, 123.456, 1.0 / 3.0, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
