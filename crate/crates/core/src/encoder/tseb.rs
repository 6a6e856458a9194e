//! "TSEB" embedding interchange files.
//!
//! Binary part (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TSEB"
//! 4       4     version (u32) = 1
//! 8       8     record count (u64)
//! 16      4     dimension (u32)
//! 20      ...   count * dim f32 values, row-major
//! ```
//!
//! Metadata lives in a sibling CSV, `<file>.csv`, keyed by row index.
//! Lines starting with `# key=value` carry file-level metadata; `dim` is
//! required and checked against the binary header.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::{Domain, EmbeddingRecord, RecordMeta};
use crate::error::{Error, FormatErrorKind, Result};
use crate::fsutil::{self, Reader};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"TSEB";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: u64 = 20;

#[derive(Debug, Serialize, Deserialize)]
struct MetaRow {
    row: u64,
    patch_id: String,
    patient_id: String,
    domain: Domain,
    ga_weeks: Option<u16>,
    patch_start_day: u32,
}

/// Sibling metadata path for a TSEB file.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(".csv");
    PathBuf::from(s)
}

pub fn encode_tseb<'a, I>(rows: I, dim: usize) -> Result<Vec<u8>>
where
    I: ExactSizeIterator<Item = &'a [f32]>,
{
    let count = rows.len();
    let mut buf = Vec::with_capacity(HEADER_LEN as usize + count * dim * 4);
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(count as u64).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for (i, row) in rows.enumerate() {
        if row.len() != dim {
            return Err(Error::Shape(format!(
                "row {i} has dimension {}, expected {dim}",
                row.len()
            )));
        }
        for &v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Decode a TSEB buffer into `(dim, rows)`. Nothing is returned unless the
/// whole buffer is valid.
pub fn decode_tseb(bytes: &[u8]) -> Result<(usize, Vec<Vec<f32>>)> {
    let mut r = Reader::new(bytes);
    r.magic(EMBEDDING_MAGIC)?;
    let at = r.offset();
    let version = r.u32()?;
    if version != EMBEDDING_VERSION {
        return Err(Error::format(
            at,
            FormatErrorKind::BadVersion {
                expected: EMBEDDING_VERSION,
                found: version,
            },
        ));
    }
    let count = r.u64()?;
    let dim = r.u32()? as usize;
    let row_bytes = dim as u64 * 4;
    let needed = count
        .checked_mul(row_bytes)
        .ok_or_else(|| Error::format(8, FormatErrorKind::Malformed("record count overflows".into())))?;
    let available = r.remaining() as u64;
    if available < needed {
        // name the first row that is cut short
        let full_rows = if row_bytes == 0 { 0 } else { available / row_bytes };
        return Err(Error::format(
            HEADER_LEN + full_rows * row_bytes,
            FormatErrorKind::Truncated { needed, available },
        ));
    }
    let mut rows = Vec::with_capacity(count as usize);
    for i in 0..count {
        let at = r.offset();
        let row = r.f32s(dim)?;
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                at + 4 * j as u64,
                FormatErrorKind::Malformed(format!("non-finite value in row {i}")),
            ));
        }
        rows.push(row);
    }
    r.finish()?;
    Ok((dim, rows))
}

pub fn save_embeddings(records: &[EmbeddingRecord], path: &Path) -> Result<()> {
    save_embeddings_with_metadata(records, path, &BTreeMap::new())
}

/// Write the binary file and its sibling manifest. `metadata` entries are
/// written as `# key=value` lines; `dim` is always written.
pub fn save_embeddings_with_metadata(
    records: &[EmbeddingRecord],
    path: &Path,
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    let bytes = encode_tseb(records.iter().map(|r| r.vector.as_slice()), dim)?;

    let mut header = format!("# dim={dim}\n");
    for (k, v) in metadata.iter().filter(|(k, _)| k.as_str() != "dim") {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Config(format!("metadata entry `{k}` is not a single line")));
        }
        header.push_str(&format!("# {k}={v}\n"));
    }
    let mut w = csv::Writer::from_writer(header.into_bytes());
    for (row, r) in records.iter().enumerate() {
        w.serialize(MetaRow {
            row: row as u64,
            patch_id: r.meta.patch_id.clone(),
            patient_id: r.meta.patient_id.clone(),
            domain: r.meta.domain,
            ga_weeks: r.meta.stored_label(),
            patch_start_day: r.meta.patch_start_day,
        })
        .map_err(|e| Error::Config(e.to_string()))?;
    }
    let manifest = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;

    fsutil::atomic_write(path, &bytes)?;
    fsutil::atomic_write(&manifest_path(path), &manifest)
}

pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    load_embeddings_with_metadata(path).map(|(records, _)| records)
}

/// Load a TSEB file and its manifest, validating magic, version, record
/// count and dimension against each other.
pub fn load_embeddings_with_metadata(
    path: &Path,
) -> Result<(Vec<EmbeddingRecord>, BTreeMap<String, String>)> {
    let manifest_file = manifest_path(path);
    let text = fsutil::read(&manifest_file)?;
    let text = String::from_utf8(text)
        .map_err(|_| Error::Config(format!("{} is not UTF-8", manifest_file.display())))?;

    let mut metadata = BTreeMap::new();
    for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
        if let Some((k, v)) = line.trim().split_once('=') {
            metadata.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let manifest_dim: u64 = metadata
        .get("dim")
        .ok_or_else(|| Error::Config(format!("{} lacks a `# dim=` line", manifest_file.display())))?
        .parse()
        .map_err(|_| Error::Config(format!("{}: bad dim", manifest_file.display())))?;

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let rows: Vec<MetaRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("{}: {e}", manifest_file.display())))?;

    let bytes = fsutil::read(path)?;
    // check the header against the manifest before decoding rows
    if bytes.len() >= HEADER_LEN as usize && &bytes[..4] == EMBEDDING_MAGIC {
        let header_count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_dim = u64::from(u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")));
        if header_dim != manifest_dim {
            return Err(Error::format(
                16,
                FormatErrorKind::DimensionMismatch {
                    header: header_dim,
                    expected: manifest_dim,
                },
            ));
        }
        if header_count != rows.len() as u64 {
            return Err(Error::format(
                8,
                FormatErrorKind::CountMismatch {
                    header: header_count,
                    expected: rows.len() as u64,
                },
            ));
        }
    }
    let (_, vectors) = decode_tseb(&bytes)?;

    let mut records: Vec<Option<EmbeddingRecord>> = vec![None; vectors.len()];
    let mut vectors: Vec<Option<Vec<f32>>> = vectors.into_iter().map(Some).collect();
    for row in rows {
        let idx = row.row as usize;
        let vector = vectors.get_mut(idx).and_then(Option::take).ok_or_else(|| {
            Error::Config(format!(
                "{}: row index {} missing or repeated",
                manifest_file.display(),
                row.row
            ))
        })?;
        records[idx] = Some(EmbeddingRecord {
            vector,
            meta: RecordMeta::new(
                row.patch_id,
                row.patient_id,
                row.domain,
                row.ga_weeks,
                row.patch_start_day,
            ),
        });
    }
    let records = records.into_iter().map(|r| r.expect("every row filled")).collect();
    Ok((records, metadata))
}
