//! File formats.
//!
//! * Embedding file: magic `ADDEMB1\0`, `n: u32 LE`, `d: u32 LE`, then `n * d`
//!   little-endian `f32` values, row-major. Length is exactly `16 + 4nd` bytes.
//! * Loss table: UTF-8 text, header `sample_id,loss`, one row per sample.
//! * Cluster table: header `sample_id,cluster`; centroid table: header
//!   `cluster,v0,...` with full-precision decimals.
//! * Selection manifest: JSON lines, one header object followed by one record per
//!   sample in index order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::model::{EmbeddingMatrix, PruneConfig, PruneState, SampleId, Stage};
use crate::proxy::{LossSource, LossTable};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"ADDEMB1\0";
pub const MANIFEST_FORMAT: &str = "adadedup-manifest/1";
pub const SCAN_ORDER_ASCENDING: &str = "ascending-index";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

pub fn encode_embeddings(emb: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let n = u32::try_from(emb.n()).map_err(|_| Error::InvalidConfig("n exceeds u32".into()))?;
    let d = u32::try_from(emb.d()).map_err(|_| Error::InvalidConfig("d exceeds u32".into()))?;
    let mut out = Vec::with_capacity(16 + 4 * emb.values().len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for (pos, &v) in emb.values().iter().enumerate() {
        let single = v as f32;
        if !single.is_finite() {
            return Err(Error::NonFiniteValue { row: pos / emb.d(), col: pos % emb.d() });
        }
        out.extend_from_slice(&single.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    let head = &bytes[..bytes.len().min(8)];
    if head != &EMBEDDING_MAGIC[..head.len()] || bytes.is_empty() {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    if bytes.len() < 16 {
        return Err(Error::TruncatedFile { expected: 16, found: bytes.len() as u64 });
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as u64;
    let expected = 16 + 4 * n * d;
    if bytes.len() as u64 != expected {
        return Err(Error::TruncatedFile { expected, found: bytes.len() as u64 });
    }
    let (n, d) = (n as usize, d as usize);
    let mut values = Vec::with_capacity(n * d);
    for (pos, chunk) in bytes[16..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { row: pos / d, col: pos % d });
        }
        values.push(v as f64);
    }
    EmbeddingMatrix::new(n, d, values)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    decode_embeddings(&read_bytes(path)?, path)
}

pub fn write_embeddings(path: &Path, emb: &EmbeddingMatrix) -> Result<()> {
    write_bytes(path, &encode_embeddings(emb)?)
}

/// Embeddings rounded to the precision they are stored with.
pub fn round_to_storage(emb: &EmbeddingMatrix) -> EmbeddingMatrix {
    let values = emb.values().iter().map(|&v| v as f32 as f64).collect();
    EmbeddingMatrix::new(emb.n(), emb.d(), values).expect("rounding keeps shape and finiteness")
}

/// Parses a numeric CSV table; with `id_column`, the first field of each row is
/// an opaque external id.
pub fn import_csv_embeddings(path: &Path, has_header: bool, id_column: bool) -> Result<(EmbeddingMatrix, Vec<String>)> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let line = row + 1 + usize::from(has_header);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRows { line, found: record.len(), expected });
        }
        let mut fields = record.iter();
        if id_column {
            ids.push(fields.next().unwrap_or_default().to_string());
        }
        for (col, field) in fields.enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("line {line}: '{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: n, col });
            }
            values.push(v);
        }
        n += 1;
    }
    let d = width.map_or(0, |w| w - usize::from(id_column));
    if n == 0 || d == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok((EmbeddingMatrix::new(n, d, values)?, ids))
}

/// `sample_id,external_id` table written next to imported embeddings.
pub fn write_id_map(path: &Path, ids: &[String]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["sample_id", "external_id"]).map_err(csv_err)?;
    for (i, id) in ids.iter().enumerate() {
        w.write_record([i.to_string(), id.clone()]).map_err(csv_err)?;
    }
    write_bytes(path, &w.into_inner().map_err(|e| Error::Parse(e.to_string()))?)
}

pub fn read_id_map(path: &Path, n: usize) -> Result<Vec<String>> {
    let rows = read_indexed_table(path, &["sample_id", "external_id"], n, false)?;
    Ok(rows.into_iter().map(|mut r| r.remove(0)).collect())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Reads a two-or-more column table keyed by a dense `sample_id` in `0..n`;
/// returns the remaining fields per id. Duplicates and gaps are errors, reported
/// as loss-table errors when `loss_errors` is set.
fn read_indexed_table(path: &Path, header: &[&str], n: usize, loss_errors: bool) -> Result<Vec<Vec<String>>> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let found: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::Parse(format!("{}: expected header '{}'", path.display(), header.join(","))));
    }
    let mut rows: Vec<Option<Vec<String>>> = vec![None; n];
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let id: usize = record[0]
            .parse()
            .map_err(|_| Error::Parse(format!("{}: bad sample_id '{}'", path.display(), &record[0])))?;
        if id >= n {
            return Err(Error::Parse(format!("{}: sample_id {id} outside 0..{n}", path.display())));
        }
        if rows[id].is_some() {
            return Err(if loss_errors {
                Error::DuplicateLoss(id)
            } else {
                Error::Parse(format!("{}: duplicate sample_id {id}", path.display()))
            });
        }
        rows[id] = Some(record.iter().skip(1).map(str::to_string).collect());
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.ok_or_else(|| {
                if loss_errors {
                    Error::MissingLoss(i)
                } else {
                    Error::Parse(format!("{}: missing sample_id {i}", path.display()))
                }
            })
        })
        .collect()
}

pub fn encode_loss_table(table: &LossTable) -> String {
    let mut out = String::from("sample_id,loss\n");
    for (i, l) in table.losses().iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

pub fn write_loss_table(path: &Path, table: &LossTable) -> Result<()> {
    write_bytes(path, encode_loss_table(table).as_bytes())
}

pub fn read_loss_table(path: &Path, n: usize) -> Result<LossTable> {
    let rows = read_indexed_table(path, &["sample_id", "loss"], n, true)?;
    let mut losses = Vec::with_capacity(n);
    for (id, row) in rows.iter().enumerate() {
        let loss: f64 = row[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("sample {id}: '{}' is not a number", row[0])))?;
        if !loss.is_finite() {
            return Err(Error::Parse(format!("sample {id}: loss is not finite")));
        }
        if loss < 0.0 {
            return Err(Error::NegativeLoss { id, loss });
        }
        losses.push(loss);
    }
    LossTable::new(losses, LossSource::External)
}

pub fn encode_assignment(assignment: &ClusterAssignment) -> String {
    let mut out = String::from("sample_id,cluster\n");
    for (i, l) in assignment.labels().iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

pub fn encode_centroids(centroids: &EmbeddingMatrix) -> String {
    let mut out = String::from("cluster");
    for j in 0..centroids.d() {
        out.push_str(&format!(",v{j}"));
    }
    out.push('\n');
    for (c, row) in centroids.rows().enumerate() {
        out.push_str(&c.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_assignment(table: &Path, centroids: &Path, assignment: &ClusterAssignment) -> Result<()> {
    write_bytes(table, encode_assignment(assignment).as_bytes())?;
    write_bytes(centroids, encode_centroids(assignment.centroids()).as_bytes())
}

pub fn read_assignment(table: &Path, centroids: &Path, emb: &EmbeddingMatrix) -> Result<ClusterAssignment> {
    let rows = read_indexed_table(table, &["sample_id", "cluster"], emb.n(), false)?;
    let labels = rows
        .iter()
        .map(|r| r[0].parse::<usize>().map_err(|_| Error::Parse(format!("bad cluster '{}'", r[0]))))
        .collect::<Result<Vec<_>>>()?;
    let text = read_text(centroids)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (c, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        if record.get(0) != Some(c.to_string().as_str()) {
            return Err(Error::Parse(format!("{}: centroid rows out of order", centroids.display())));
        }
        let row = record
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|_| Error::Parse(format!("bad centroid value '{f}'"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    ClusterAssignment::from_parts(emb, labels, EmbeddingMatrix::from_rows(&rows)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub format: String,
    pub selector: String,
    pub generator: String,
    pub seed: u64,
    pub scan_order: String,
    pub embedding_sha256: String,
    pub n: usize,
    pub k: usize,
    pub budget: usize,
    pub kept: usize,
    pub config: PruneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: usize,
    pub external_id: Option<String>,
    pub cluster: usize,
    pub kept: bool,
    pub stage: Stage,
}

/// Audited record of a selection: who was kept, in which cluster, and which
/// stage made the call.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(
        selector: &str,
        state: &PruneState,
        labels: &[usize],
        config: &PruneConfig,
        budget: usize,
        embedding_sha256: &str,
        ids: &[SampleId],
    ) -> Result<Self> {
        let n = state.n();
        if labels.len() != n || (!ids.is_empty() && ids.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: labels.len() });
        }
        let records = (0..n)
            .map(|i| ManifestRecord {
                id: i,
                external_id: ids.get(i).and_then(|s| s.external_id.clone()),
                cluster: labels[i],
                kept: state.is_kept(i),
                stage: state.provenance()[i],
            })
            .collect();
        let header = ManifestHeader {
            format: MANIFEST_FORMAT.into(),
            selector: selector.into(),
            generator: crate::rng::GENERATOR_NAME.into(),
            seed: config.seed,
            scan_order: SCAN_ORDER_ASCENDING.into(),
            embedding_sha256: embedding_sha256.into(),
            n,
            k: state.gamma().len(),
            budget,
            kept: state.kept_count(),
            config: config.clone(),
        };
        Ok(Self { header, records })
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.cluster).collect()
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.kept).map(|r| r.id).collect()
    }

    pub fn to_state(&self) -> Result<PruneState> {
        let kept = self.records.iter().map(|r| r.kept).collect();
        let provenance = self.records.iter().map(|r| r.stage).collect();
        PruneState::new(kept, provenance, &self.labels(), self.header.k)
    }

    /// Fails unless the embedding file at `path` is the one this manifest was built from.
    pub fn verify_embeddings(&self, path: &Path) -> Result<()> {
        let found = sha256_file(path)?;
        if found != self.header.embedding_sha256 {
            return Err(Error::HashMismatch { expected: self.header.embedding_sha256.clone(), found });
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header).map_err(|e| Error::Parse(e.to_string()))?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).map_err(|e| Error::Parse(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn decode(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: ManifestHeader = serde_json::from_str(lines.next().ok_or_else(|| Error::Parse("empty manifest".into()))?)
            .map_err(|e| Error::Parse(format!("manifest header: {e}")))?;
        let records = lines
            .enumerate()
            .map(|(i, line)| {
                let r: ManifestRecord =
                    serde_json::from_str(line).map_err(|e| Error::Parse(format!("manifest record {i}: {e}")))?;
                if r.id != i || r.cluster >= header.k {
                    return Err(Error::Parse(format!("manifest record {i} out of order or cluster range")));
                }
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        if records.len() != header.n {
            return Err(Error::Parse(format!("manifest has {} records, header says {}", records.len(), header.n)));
        }
        let kept = records.iter().filter(|r| r.kept).count();
        if kept != header.kept {
            return Err(Error::Parse(format!("manifest keeps {kept}, header says {}", header.kept)));
        }
        Ok(Self { header, records })
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_bytes(path, manifest.encode()?.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Manifest::decode(&read_text(path)?)
}
