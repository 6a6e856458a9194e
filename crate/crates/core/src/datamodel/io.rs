//! Patch files: a CSV manifest with one row per patch plus a "TSPX" binary
//! values file.
//!
//! TSPX layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TSPX"
//! 4       4     version (u32) = 1
//! 8       8     patch count (u64)
//! 16      4     patch length L (u32)
//! 20      ...   count * L f32 values, row-major
//! ```
//!
//! Manifest columns: `patch_id,patient_id,domain,ga_weeks,patch_start_day,values_ref`
//! where `ga_weeks` is empty when absent and `values_ref` is
//! `<values file name>#<row>`, resolved relative to the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Domain, RecordMeta, TimeSeriesPatch};
use crate::error::{Error, FormatErrorKind, Result};
use crate::fsutil::{self, Reader};

pub const PATCH_MAGIC: &[u8; 4] = b"TSPX";
pub const PATCH_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    patch_id: String,
    patient_id: String,
    domain: Domain,
    ga_weeks: Option<u16>,
    patch_start_day: u32,
    values_ref: String,
}

pub fn encode_patch_values(patches: &[TimeSeriesPatch]) -> Result<Vec<u8>> {
    let len = patches.first().map_or(0, TimeSeriesPatch::len);
    for p in patches {
        p.check_length(len)?;
    }
    let mut buf = Vec::with_capacity(20 + patches.len() * len * 4);
    buf.extend_from_slice(PATCH_MAGIC);
    buf.extend_from_slice(&PATCH_VERSION.to_le_bytes());
    buf.extend_from_slice(&(patches.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(len as u32).to_le_bytes());
    for p in patches {
        for &v in &p.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

/// Decode a TSPX buffer into rows of values.
pub fn decode_patch_values(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let mut r = Reader::new(bytes);
    r.magic(PATCH_MAGIC)?;
    let at = r.offset();
    let version = r.u32()?;
    if version != PATCH_VERSION {
        return Err(Error::format(
            at,
            FormatErrorKind::BadVersion {
                expected: PATCH_VERSION,
                found: version,
            },
        ));
    }
    let count = r.u64()? as usize;
    let len = r.u32()? as usize;
    let needed = count
        .checked_mul(len)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(8, FormatErrorKind::Malformed("patch count overflows".into())))?;
    if r.remaining() < needed {
        return Err(Error::format(
            r.offset(),
            FormatErrorKind::Truncated {
                needed: needed as u64,
                available: r.remaining() as u64,
            },
        ));
    }
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        rows.push(r.f32s(len)?.into_iter().map(f64::from).collect());
    }
    r.finish()?;
    Ok(rows)
}

fn values_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("tspx")
}

/// Write `patches` as `<stem>.csv` + `<stem>.tspx`, atomically.
///
/// `manifest` is the CSV path; the values file sits next to it.
pub fn write_patches(manifest: &Path, patches: &[TimeSeriesPatch]) -> Result<()> {
    let values = values_path(manifest);
    let values_name = values
        .file_name()
        .expect("values path has a file name")
        .to_string_lossy()
        .into_owned();

    let mut w = csv::Writer::from_writer(Vec::new());
    for (row, p) in patches.iter().enumerate() {
        w.serialize(ManifestRow {
            patch_id: p.meta.patch_id.clone(),
            patient_id: p.meta.patient_id.clone(),
            domain: p.meta.domain,
            ga_weeks: p.meta.stored_label(),
            patch_start_day: p.meta.patch_start_day,
            values_ref: format!("{values_name}#{row}"),
        })
        .map_err(|e| Error::Config(e.to_string()))?;
    }
    let csv_bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;

    fsutil::atomic_write(&values, &encode_patch_values(patches)?)?;
    fsutil::atomic_write(manifest, &csv_bytes)
}

/// Read a patch manifest and the values it references.
pub fn read_patches(manifest: &Path) -> Result<Vec<TimeSeriesPatch>> {
    let text = fsutil::read(manifest)?;
    let mut reader = csv::Reader::from_reader(text.as_slice());
    let rows: Vec<ManifestRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("{}: {e}", manifest.display())))?;

    let dir = manifest.parent().unwrap_or(Path::new(""));
    let mut loaded: Option<(String, Vec<Vec<f64>>)> = None;
    let mut patches = Vec::with_capacity(rows.len());
    for row in rows {
        let (file, index) = row.values_ref.rsplit_once('#').ok_or_else(|| {
            Error::Config(format!("bad values_ref `{}`", row.values_ref))
        })?;
        let index: usize = index
            .parse()
            .map_err(|_| Error::Config(format!("bad values_ref `{}`", row.values_ref)))?;
        if loaded.as_ref().map(|(f, _)| f.as_str()) != Some(file) {
            let bytes = fsutil::read(&dir.join(file))?;
            loaded = Some((file.to_string(), decode_patch_values(&bytes)?));
        }
        let values = &loaded.as_ref().expect("just loaded").1;
        let row_values = values.get(index).ok_or_else(|| {
            Error::Config(format!("values_ref `{}` points past the end", row.values_ref))
        })?;
        patches.push(TimeSeriesPatch::new(
            row_values.clone(),
            RecordMeta::new(
                row.patch_id,
                row.patient_id,
                row.domain,
                row.ga_weeks,
                row.patch_start_day,
            ),
        )?);
    }
    Ok(patches)
}
