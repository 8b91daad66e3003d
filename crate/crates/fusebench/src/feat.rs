//! FEAT feature tables.
//!
//! ```text
//! 0..4    b"FEAT"
//! 4..8    version, u32 LE (= 1)
//! 8..12   n, u32 LE
//! 12..16  d, u32 LE
//! 16..    n·d f32 LE, row-major
//! then    n u32 LE sample ids (optional on read; ids default to 0..n)
//! ```

use std::path::Path;

use fusebench_core::data::FeatureTable;
use fusebench_core::Matrix;

use crate::error::{read_file, write_atomic, Error, Result};

pub const MAGIC: &[u8; 4] = b"FEAT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode_features(table: &FeatureTable) -> Vec<u8> {
    let (n, d) = table.features().shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * d + 4 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in table.features().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for id in table.ids() {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

/// Parses a FEAT image; `what` names the source in error messages.
pub fn decode_features(bytes: &[u8], what: &str) -> Result<FeatureTable> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(what, bytes.len() as u64, "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(what, 0, "bad magic, expected FEAT"));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::format(
            what,
            4,
            format!("unsupported version {version}"),
        ));
    }
    let n = u32_at(bytes, 8) as usize;
    let d = u32_at(bytes, 12) as usize;
    let payload_end = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(what, 8, "n·d overflows"))?;
    if bytes.len() < payload_end {
        return Err(Error::format(
            what,
            bytes.len() as u64,
            format!("truncated payload, expected {payload_end} bytes"),
        ));
    }
    let with_ids = payload_end + 4 * n;
    if bytes.len() != payload_end && bytes.len() != with_ids {
        let at = if bytes.len() < with_ids {
            bytes.len()
        } else {
            with_ids
        };
        return Err(Error::format(
            what,
            at as u64,
            "id block has the wrong length",
        ));
    }

    let mut data = Vec::with_capacity(n * d);
    for (i, chunk) in bytes[HEADER_LEN..payload_end].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::format(
                what,
                (HEADER_LEN + 4 * i) as u64,
                format!("non-finite value {v}"),
            ));
        }
        data.push(v);
    }
    let ids: Vec<u32> = if bytes.len() == with_ids {
        bytes[payload_end..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect()
    } else {
        (0..n as u32).collect()
    };
    let features = Matrix::new(n, d, data)?;
    FeatureTable::new(ids, features)
        .map_err(|e| Error::format(what, payload_end as u64, e.to_string()))
}

pub fn read_features(path: &Path) -> Result<FeatureTable> {
    decode_features(&read_file(path)?, &path.display().to_string())
}

/// Refuses non-finite tables before touching the filesystem.
pub fn write_features(table: &FeatureTable, path: &Path) -> Result<()> {
    if !table.features().all_finite() {
        return Err(fusebench_core::Error::Numeric(
            "feature table holds a non-finite value".into(),
        )
        .into());
    }
    write_atomic(path, &encode_features(table))
}
