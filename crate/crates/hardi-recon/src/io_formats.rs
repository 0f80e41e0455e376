//! File formats: FSL-style gradient tables, CSV signal matrices, subset
//! files, checkpoints, metrics reports, and training logs.
//!
//! Parsers reject malformed input with the file, line, and column; nothing
//! loads partially. Text serializations use 17-significant-digit scientific
//! notation, which round-trips f64 exactly. Checkpoint manifests serialize
//! with a fixed key order and shortest-roundtrip floats, so
//! write -> read -> write is byte-identical.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::geometry::{GradientScheme, SubsetSelection, SubsetStrategy};
use crate::model::{EncoderLayer, EpochStats, ModelConfig, ModelParams};
use crate::nn::{Real, Tensor};
use crate::signal::SignalMatrix;
use crate::synth::{FiberConfig, NoiseConfig};

/// f64 -> decimal with 17 significant digits (exact round trip).
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(token: &str, file: &str, line: usize, column: usize) -> Result<f64> {
    let v: f64 = token.trim().parse().map_err(|_| Error::Parse {
        file: file.to_string(),
        line,
        column,
        message: format!("expected a number, got {token:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            file: file.to_string(),
            line,
            column,
            message: format!("non-finite value {token:?}"),
        });
    }
    Ok(v)
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// FSL gradient tables
// ---------------------------------------------------------------------------

/// Parse bvecs (3 whitespace-separated rows of K floats) and bvals (1 row of
/// K floats) from text. Zero-norm columns with b-value 0 are dropped as b0
/// entries; remaining directions are renormalized; all surviving b-values
/// must be equal (single shell).
pub fn parse_gradient_table(
    bvecs_text: &str,
    bvals_text: &str,
    bvecs_name: &str,
    bvals_name: &str,
) -> Result<GradientScheme> {
    let rows: Vec<&str> = bvecs_text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .collect();
    if rows.len() != 3 {
        return Err(Error::Parse {
            file: bvecs_name.to_string(),
            line: rows.len().max(1),
            column: 1,
            message: format!("bvecs needs exactly 3 rows, found {}", rows.len()),
        });
    }
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(3);
    for (li, row) in rows.iter().enumerate() {
        let mut vals = Vec::new();
        for (ci, tok) in row.split_whitespace().enumerate() {
            vals.push(parse_f64(tok, bvecs_name, li + 1, ci + 1)?);
        }
        if let Some(prev) = comps.first() {
            if vals.len() != prev.len() {
                return Err(Error::Parse {
                    file: bvecs_name.to_string(),
                    line: li + 1,
                    column: vals.len(),
                    message: format!(
                        "row has {} entries, previous rows have {}",
                        vals.len(),
                        prev.len()
                    ),
                });
            }
        }
        comps.push(vals);
    }
    let k = comps[0].len();
    let bval_rows: Vec<&str> = bvals_text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .collect();
    if bval_rows.len() != 1 {
        return Err(Error::Parse {
            file: bvals_name.to_string(),
            line: bval_rows.len().max(1),
            column: 1,
            message: format!("bvals needs exactly 1 row, found {}", bval_rows.len()),
        });
    }
    let mut bvals = Vec::with_capacity(k);
    for (ci, tok) in bval_rows[0].split_whitespace().enumerate() {
        bvals.push(parse_f64(tok, bvals_name, 1, ci + 1)?);
    }
    if bvals.len() != k {
        return Err(Error::Parse {
            file: bvals_name.to_string(),
            line: 1,
            column: bvals.len(),
            message: format!("bvals has {} entries, bvecs has {k} columns", bvals.len()),
        });
    }

    let mut directions = Vec::with_capacity(k);
    let mut shell: Option<f64> = None;
    for col in 0..k {
        let v = [comps[0][col], comps[1][col], comps[2][col]];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let b = bvals[col];
        if norm < 1e-8 || b == 0.0 {
            if b != 0.0 {
                return Err(Error::Parse {
                    file: bvecs_name.to_string(),
                    line: 1,
                    column: col + 1,
                    message: format!("zero direction with nonzero b-value {b}"),
                });
            }
            continue; // b0 entry
        }
        match shell {
            None => shell = Some(b),
            Some(existing) if existing != b => {
                return Err(Error::Parse {
                    file: bvals_name.to_string(),
                    line: 1,
                    column: col + 1,
                    message: format!(
                        "multi-shell unsupported: b-values {existing} and {b} both present"
                    ),
                });
            }
            _ => {}
        }
        directions.push([v[0] / norm, v[1] / norm, v[2] / norm]);
    }
    if directions.len() < 6 {
        return Err(Error::Parse {
            file: bvecs_name.to_string(),
            line: 1,
            column: 1,
            message: format!("only {} usable directions; need at least 6", directions.len()),
        });
    }
    GradientScheme::new(directions, shell.expect("at least one direction"))
}

pub fn read_gradient_table(bvecs_path: &Path, bvals_path: &Path) -> Result<GradientScheme> {
    let bvecs = read_to_string(bvecs_path)?;
    let bvals = read_to_string(bvals_path)?;
    parse_gradient_table(
        &bvecs,
        &bvals,
        &bvecs_path.display().to_string(),
        &bvals_path.display().to_string(),
    )
}

pub fn write_gradient_table(
    scheme: &GradientScheme,
    bvecs_path: &Path,
    bvals_path: &Path,
) -> Result<()> {
    let mut rows = [String::new(), String::new(), String::new()];
    for d in scheme.directions() {
        for (axis, row) in rows.iter_mut().enumerate() {
            if !row.is_empty() {
                row.push(' ');
            }
            row.push_str(&format_f64(d[axis]));
        }
    }
    write_atomic(bvecs_path, format!("{}\n{}\n{}\n", rows[0], rows[1], rows[2]).as_bytes())?;
    let bvals = scheme
        .directions()
        .iter()
        .map(|_| format_f64(scheme.bvalue()))
        .collect::<Vec<_>>()
        .join(" ");
    write_atomic(bvals_path, format!("{bvals}\n").as_bytes())
}

// ---------------------------------------------------------------------------
// Signal matrices (CSV + raw binary)
// ---------------------------------------------------------------------------

/// Parse a signal CSV: a header row of direction indices 0..K-1 followed by
/// one numeric row per voxel.
pub fn parse_signal_matrix(text: &str, name: &str) -> Result<SignalMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        file: name.to_string(),
        line: 1,
        column: 1,
        message: "empty file".to_string(),
    })?;
    let header_cols: Vec<&str> = header.split(',').collect();
    let k = header_cols.len();
    for (ci, tok) in header_cols.iter().enumerate() {
        let ok = tok.trim().parse::<usize>().map(|v| v == ci).unwrap_or(false);
        if !ok {
            return Err(Error::Parse {
                file: name.to_string(),
                line: 1,
                column: ci + 1,
                message: format!("header cell {tok:?} should be the direction index {ci}"),
            });
        }
    }
    let mut data = Vec::new();
    let mut n_rows = 0usize;
    for (li, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != k {
            return Err(Error::Parse {
                file: name.to_string(),
                line: li + 1,
                column: cells.len(),
                message: format!("row has {} cells, header has {k}", cells.len()),
            });
        }
        for (ci, tok) in cells.iter().enumerate() {
            data.push(parse_f64(tok, name, li + 1, ci + 1)?);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::Parse {
            file: name.to_string(),
            line: 1,
            column: 1,
            message: "no data rows".to_string(),
        });
    }
    SignalMatrix::new(k, data)
}

pub fn read_signal_matrix(path: &Path) -> Result<SignalMatrix> {
    parse_signal_matrix(&read_to_string(path)?, &path.display().to_string())
}

pub fn write_signal_matrix(path: &Path, matrix: &SignalMatrix) -> Result<()> {
    let mut out = String::with_capacity(matrix.n_voxels() * matrix.k() * 24);
    let header: Vec<String> = (0..matrix.k()).map(|i| i.to_string()).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in matrix.rows() {
        let cells: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
struct BinSidecar {
    n_voxels: usize,
    k: usize,
    dtype: String,
}

/// Raw little-endian f32 dump with a JSON shape sidecar, for large runs.
pub fn write_signal_matrix_bin(path: &Path, matrix: &SignalMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(matrix.data().len() * 4);
    for &v in matrix.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(path, &bytes)?;
    let sidecar = BinSidecar {
        n_voxels: matrix.n_voxels(),
        k: matrix.k(),
        dtype: "f32-le".to_string(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("static struct");
    write_atomic(&path.with_extension("shape.json"), json.as_bytes())
}

pub fn read_signal_matrix_bin(path: &Path) -> Result<SignalMatrix> {
    let sidecar_path = path.with_extension("shape.json");
    let sidecar: BinSidecar = serde_json::from_str(&read_to_string(&sidecar_path)?)
        .map_err(|e| Error::Json {
            path: sidecar_path.clone(),
            source: e,
        })?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let want = sidecar.n_voxels * sidecar.k * 4;
    if bytes.len() != want {
        return Err(Error::validation(format!(
            "{} holds {} bytes, sidecar promises {want}",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    SignalMatrix::new(sidecar.k, data)
}

// ---------------------------------------------------------------------------
// Subset files
// ---------------------------------------------------------------------------

/// On-disk form of a subset selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetFile {
    pub parent_size: usize,
    pub indices: Vec<usize>,
    pub strategy: SubsetStrategy,
    pub seed: u64,
}

impl SubsetFile {
    pub fn selection(&self) -> Result<SubsetSelection> {
        SubsetSelection::new(self.parent_size, self.indices.clone())
    }
}

pub fn parse_subset_json(text: &str, name: &str) -> Result<SubsetFile> {
    let file: SubsetFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        file: name.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    file.selection()?; // validate invariants before handing it out
    Ok(file)
}

pub fn read_subset_json(path: &Path) -> Result<SubsetFile> {
    parse_subset_json(&read_to_string(path)?, &path.display().to_string())
}

pub fn write_subset_json(path: &Path, file: &SubsetFile) -> Result<()> {
    file.selection()?;
    let json = serde_json::to_string_pretty(file).expect("plain struct");
    write_atomic(path, json.as_bytes())
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_FORMAT: &str = "hardi-recon-checkpoint-v1";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the weight blob, in f32 elements.
    pub offset: usize,
    pub len: usize,
}

/// Checkpoint manifest; the weight blob holds every parameter consecutively
/// as little-endian f32 in the order listed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    pub metrics: std::collections::BTreeMap<String, f64>,
    pub params: Vec<ParamEntry>,
    pub weights_file: String,
}

pub fn parse_checkpoint_manifest(text: &str, name: &str) -> Result<CheckpointManifest> {
    let manifest: CheckpointManifest = serde_json::from_str(text).map_err(|e| Error::Parse {
        file: name.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::validation(format!(
            "unsupported checkpoint format {:?}",
            manifest.format
        )));
    }
    let mut expect_offset = 0usize;
    for entry in &manifest.params {
        let numel: usize = entry.shape.iter().product();
        if numel != entry.len {
            return Err(Error::validation(format!(
                "parameter {} declares len {} but shape {:?}",
                entry.name, entry.len, entry.shape
            )));
        }
        if entry.offset != expect_offset {
            return Err(Error::validation(format!(
                "parameter {} at offset {}, expected {expect_offset}",
                entry.name, entry.offset
            )));
        }
        expect_offset = expect_offset
            .checked_add(entry.len)
            .ok_or_else(|| Error::validation("parameter sizes overflow"))?;
    }
    Ok(manifest)
}

/// Write manifest + weight blob under `dir`.
pub fn save_checkpoint<T: Real>(
    dir: &Path,
    config: &ModelConfig,
    params: &ModelParams<T>,
    seed: u64,
    epoch: usize,
    metrics: &[(&str, f64)],
) -> Result<()> {
    params.validate(config)?;
    let tensors = params.named_tensors();
    let mut entries = Vec::with_capacity(tensors.len());
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, tensor) in &tensors {
        entries.push(ParamEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
            len: tensor.numel(),
        });
        for v in tensor.data() {
            blob.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
        offset += tensor.numel();
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        config: config.clone(),
        seed,
        epoch,
        metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        params: entries,
        weights_file: WEIGHTS_FILE.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(&manifest).expect("plain struct");
    write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    write_atomic(&dir.join(WEIGHTS_FILE), &blob)
}

/// Load a checkpoint back into f32 parameters.
pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, ModelParams<f32>)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = parse_checkpoint_manifest(
        &read_to_string(&manifest_path)?,
        &manifest_path.display().to_string(),
    )?;
    let blob_path = dir.join(&manifest.weights_file);
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let total: usize = manifest.params.iter().map(|p| p.len).sum();
    if bytes.len() != total * 4 {
        return Err(Error::validation(format!(
            "weight blob holds {} bytes, manifest promises {}",
            bytes.len(),
            total * 4
        )));
    }
    let mut tensors = Vec::with_capacity(manifest.params.len());
    for entry in &manifest.params {
        let start = entry.offset * 4;
        let data: Vec<f32> = bytes[start..start + entry.len * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Tensor::<f32>::from_vec(&entry.shape, data)?);
    }
    // canonical order: 3 x (filters, bias), then 3 decoder filters
    if tensors.len() != 9 {
        return Err(Error::validation(format!(
            "expected 9 parameter tensors, manifest lists {}",
            tensors.len()
        )));
    }
    let mut it = tensors.into_iter();
    let mut encoder = Vec::with_capacity(3);
    for _ in 0..3 {
        let filters = it.next().expect("checked length");
        let bias = it.next().expect("checked length");
        encoder.push(EncoderLayer { filters, bias });
    }
    let decoder: Vec<Tensor<f32>> = it.collect();
    let params = ModelParams { encoder, decoder };
    params.validate(&manifest.config)?;
    Ok((manifest, params))
}

// ---------------------------------------------------------------------------
// Metrics reports
// ---------------------------------------------------------------------------

/// One (method, K_L) aggregate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub k_low: usize,
    pub min_nmse: f64,
    pub max_nmse: f64,
    pub avg_nmse: f64,
    pub n_voxels: usize,
    /// Wall-clock seconds for the method; omitted in reproducible runs so
    /// reports compare byte-for-byte across reruns.
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::validation("metrics report has no rows"));
        }
        for row in &self.rows {
            if !(row.min_nmse <= row.avg_nmse && row.avg_nmse <= row.max_nmse) {
                return Err(Error::validation(format!(
                    "row {}/k{} violates min <= avg <= max: {} / {} / {}",
                    row.method, row.k_low, row.min_nmse, row.avg_nmse, row.max_nmse
                )));
            }
            if row.n_voxels == 0 {
                return Err(Error::validation("metrics row with zero voxels"));
            }
        }
        Ok(())
    }

    /// CSV rendering: one row per (method, K_L) in report order.
    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::from("method,k_low,min_nmse,max_nmse,avg_nmse,n_voxels,seconds\n");
        for row in &self.rows {
            let seconds = row.seconds.map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.method, row.k_low, row.min_nmse, row.max_nmse, row.avg_nmse, row.n_voxels,
                seconds
            ));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self).expect("plain struct"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsFormat {
    Csv,
    Json,
}

pub fn write_metrics_report(
    report: &MetricsReport,
    path: &Path,
    format: MetricsFormat,
) -> Result<()> {
    let text = match format {
        MetricsFormat::Csv => report.to_csv()?,
        MetricsFormat::Json => report.to_json()?,
    };
    write_atomic(path, text.as_bytes())
}

// ---------------------------------------------------------------------------
// Training logs and dataset metadata
// ---------------------------------------------------------------------------

/// Training log CSV: epoch, train NMSE, validation NMSE, wall seconds.
/// `append` continues an existing file without repeating the header.
pub fn write_training_log(path: &Path, log: &[EpochStats], append: bool) -> Result<()> {
    let mut out = String::new();
    let exists = path.exists();
    if !(append && exists) {
        out.push_str("epoch,train_nmse,val_nmse,wall_seconds\n");
    }
    for row in log {
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            row.epoch, row.train_nmse, row.val_nmse, row.wall_seconds
        ));
    }
    if append && exists {
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    } else {
        write_atomic(path, out.as_bytes())
    }
}

/// Per-voxel generation record stored alongside a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub noise: NoiseConfig,
    pub clamped_values: usize,
    pub voxels: Vec<FiberConfig>,
}

pub fn write_dataset_meta(path: &Path, meta: &DatasetMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta).expect("plain struct");
    write_atomic(path, json.as_bytes())
}

pub fn read_dataset_meta(path: &Path) -> Result<DatasetMeta> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

// ---------------------------------------------------------------------------
// Dictionary export
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct DictionarySidecar {
    family: crate::dictionary::BasisFamily,
    max_order: usize,
    scheme_hash: String,
}

/// Dictionary matrix as CSV (K rows x J columns) plus a JSON sidecar naming
/// the basis and the scheme digest, for cross-implementation comparison.
pub fn export_dictionary(dir: &Path, name: &str, dict: &Dictionary) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{name}.csv"));
    let mut out = String::new();
    for r in 0..dict.rows() {
        let cells: Vec<String> = dict.matrix().row(r).iter().map(|&v| format_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_atomic(&csv_path, out.as_bytes())?;
    let sidecar = DictionarySidecar {
        family: dict.basis().family,
        max_order: dict.basis().max_order,
        scheme_hash: format!("{:016x}", dict.scheme_hash()),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("plain struct");
    write_atomic(&dir.join(format!("{name}.json")), json.as_bytes())?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{select_subset, SubsetStrategy};

    fn scheme90() -> GradientScheme {
        GradientScheme::fibonacci_hemisphere(90, 2000.0).unwrap()
    }

    #[test]
    fn gradient_table_roundtrip() {
        let scheme = scheme90();
        let dir = tempfile::tempdir().unwrap();
        let bvecs = dir.path().join("bvecs");
        let bvals = dir.path().join("bvals");
        write_gradient_table(&scheme, &bvecs, &bvals).unwrap();
        let back = read_gradient_table(&bvecs, &bvals).unwrap();
        assert_eq!(back.len(), 90);
        assert_eq!(back.bvalue(), 2000.0);
        for (a, b) in back.directions().iter().zip(scheme.directions()) {
            for axis in 0..3 {
                assert!((a[axis] - b[axis]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn b0_columns_are_dropped() {
        let bvecs = "0 1 0 0 0.7071067811865476 0.7071067811865476 0.9486832980505138\n\
                     0 0 1 0 0.7071067811865476 0 0.31622776601683794\n\
                     0 0 0 1 0 0.7071067811865476 0\n";
        let bvals = "0 1000 1000 1000 1000 1000 1000\n";
        let scheme = parse_gradient_table(bvecs, bvals, "bvecs", "bvals").unwrap();
        assert_eq!(scheme.len(), 6);
        assert_eq!(scheme.bvalue(), 1000.0);
    }

    #[test]
    fn multi_shell_is_rejected() {
        let bvecs = "1 0 0 0.577 0.577 0.577 0.7071\n\
                     0 1 0 0.577 -0.577 0.577 0.7071\n\
                     0 0 1 0.577 0.577 -0.577 0\n";
        let bvals = "1000 1000 1000 2000 1000 1000 1000\n";
        let err = parse_gradient_table(bvecs, bvals, "bvecs", "bvals")
            .unwrap_err()
            .to_string();
        assert!(err.contains("multi-shell"), "got: {err}");
    }

    #[test]
    fn ragged_bvecs_give_located_error() {
        let bvecs = "1 0 0\n0 1\n0 0 1\n";
        let bvals = "1000 1000 1000\n";
        match parse_gradient_table(bvecs, bvals, "bvecs", "bvals") {
            Err(Error::Parse { file, line, .. }) => {
                assert_eq!(file, "bvecs");
                assert_eq!(line, 2);
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn signal_matrix_roundtrip_is_value_exact() {
        let m = SignalMatrix::from_rows(&[
            vec![0.1234567890123456, 1.0 / 3.0, 2.0f64.sqrt()],
            vec![1e-300, 0.9999999999999999, -0.5],
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("signals.csv");
        write_signal_matrix(&path, &m).unwrap();
        let back = read_signal_matrix(&path).unwrap();
        assert_eq!(back.data(), m.data(), "17-digit round trip must be exact");
    }

    #[test]
    fn empty_signal_file_is_an_error() {
        assert!(parse_signal_matrix("", "x.csv").is_err());
        assert!(parse_signal_matrix("0,1,2\n", "x.csv").is_err());
    }

    #[test]
    fn bad_cell_is_located() {
        let text = "0,1\n0.5,abc\n";
        match parse_signal_matrix(text, "sig.csv") {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 2);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn binary_sidecar_roundtrip() {
        let m = SignalMatrix::from_rows(&[vec![0.25, 0.5], vec![0.75, 1.0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("signals.bin");
        write_signal_matrix_bin(&path, &m).unwrap();
        let back = read_signal_matrix_bin(&path).unwrap();
        assert_eq!(back.data(), m.data()); // these values are f32-exact
    }

    #[test]
    fn subset_json_roundtrip_and_validation() {
        let scheme = scheme90();
        let sel = select_subset(&scheme, 30, SubsetStrategy::UniformAngular, 0).unwrap();
        let file = SubsetFile {
            parent_size: sel.parent_size(),
            indices: sel.indices().to_vec(),
            strategy: SubsetStrategy::UniformAngular,
            seed: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("subset.json");
        write_subset_json(&path, &file).unwrap();
        let back = read_subset_json(&path).unwrap();
        assert_eq!(back, file);

        // non-increasing indices are rejected
        let bad = r#"{"parent_size":90,"indices":[5,5],"strategy":"random","seed":1}"#;
        assert!(parse_subset_json(bad, "subset.json").is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_byte_identical() {
        let mut cfg = ModelConfig::new(30);
        cfg.encoder_channels = [8, 6, 4];
        let params = ModelParams::<f32>::init(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("ckpt");
        save_checkpoint(&ckpt, &cfg, &params, 3, 17, &[("val_nmse", 0.123)]).unwrap();

        let manifest_bytes = fs::read(ckpt.join(MANIFEST_FILE)).unwrap();
        let weight_bytes = fs::read(ckpt.join(WEIGHTS_FILE)).unwrap();

        let (manifest, loaded) = load_checkpoint(&ckpt).unwrap();
        assert_eq!(manifest.epoch, 17);
        let ckpt2 = dir.path().join("ckpt2");
        save_checkpoint(&ckpt2, &manifest.config, &loaded, manifest.seed, manifest.epoch, &[
            ("val_nmse", manifest.metrics["val_nmse"]),
        ])
        .unwrap();
        assert_eq!(fs::read(ckpt2.join(MANIFEST_FILE)).unwrap(), manifest_bytes);
        assert_eq!(fs::read(ckpt2.join(WEIGHTS_FILE)).unwrap(), weight_bytes);
    }

    #[test]
    fn metrics_report_rules() {
        let good = MetricsReport {
            rows: vec![MetricsRow {
                method: "l2".into(),
                k_low: 30,
                min_nmse: 0.01,
                max_nmse: 0.2,
                avg_nmse: 0.05,
                n_voxels: 100,
                seconds: None,
            }],
        };
        assert!(good.validate().is_ok());
        let csv = good.to_csv().unwrap();
        assert!(csv.lines().count() == 2);

        let bad = MetricsReport {
            rows: vec![MetricsRow {
                method: "l2".into(),
                k_low: 30,
                min_nmse: 0.3,
                max_nmse: 0.2,
                avg_nmse: 0.25,
                n_voxels: 100,
                seconds: None,
            }],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dictionary_export_writes_matrix_and_sidecar() {
        let scheme = scheme90();
        let basis = crate::dictionary::BasisDescriptor::new(4).unwrap();
        let dict = crate::dictionary::build_dictionary(&scheme, &basis).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = export_dictionary(dir.path(), "a_high", &dict).unwrap();
        let text = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 90);
        let first_row: Vec<f64> = text
            .lines()
            .next()
            .unwrap()
            .split(',')
            .map(|c| c.parse().unwrap())
            .collect();
        assert_eq!(first_row.len(), 15);
        for (j, v) in first_row.iter().enumerate() {
            assert_eq!(*v, dict.matrix().get(0, j), "atom {j} round trip");
        }
        let sidecar: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("a_high.json")).unwrap())
                .unwrap();
        assert_eq!(sidecar["max_order"], 4);
        assert_eq!(
            sidecar["scheme_hash"].as_str().unwrap(),
            format!("{:016x}", scheme.content_hash())
        );
    }

    #[test]
    fn metrics_csv_and_json_encode_identical_numbers() {
        let report = MetricsReport {
            rows: vec![MetricsRow {
                method: "cs".into(),
                k_low: 18,
                min_nmse: 0.012345678901234567,
                max_nmse: 0.53,
                avg_nmse: 0.1,
                n_voxels: 2000,
                seconds: Some(1.25),
            }],
        };
        let csv = report.to_csv().unwrap();
        let json: MetricsReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        let row = &json.rows[0];
        let csv_row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(csv_row[2].parse::<f64>().unwrap(), row.min_nmse);
        assert_eq!(csv_row[3].parse::<f64>().unwrap(), row.max_nmse);
        assert_eq!(csv_row[4].parse::<f64>().unwrap(), row.avg_nmse);
        assert_eq!(csv_row[6].parse::<f64>().unwrap(), row.seconds.unwrap());
    }
}
