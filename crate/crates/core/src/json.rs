//! JSON helpers: floats are written with 17 significant digits so that every
//! `f64` survives a write/read cycle bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::ser::{Error as _, SerializeSeq};
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::Result;
use crate::scalar::Scalar;

/// Formats a finite double as `d.dddddddddddddddde±x` (17 significant digits).
pub fn format_f64(x: f64) -> Option<String> {
    x.is_finite().then(|| format!("{x:.16e}"))
}

pub(crate) struct Float17(pub f64);

impl Serialize for Float17 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let text = format_f64(self.0)
            .ok_or_else(|| S::Error::custom(format!("non-finite float {}", self.0)))?;
        let raw = RawValue::from_string(text).map_err(S::Error::custom)?;
        raw.serialize(serializer)
    }
}

pub(crate) fn serialize_scalar<T: Scalar, S: Serializer>(
    value: &T,
    serializer: S,
) -> Result<S::Ok, S::Error> {
    Float17(value.to_f64_lossless()).serialize(serializer)
}

pub(crate) fn serialize_scalars<T: Scalar, S: Serializer>(
    values: &[T],
    serializer: S,
) -> Result<S::Ok, S::Error> {
    let mut seq = serializer.serialize_seq(Some(values.len()))?;
    for v in values {
        seq.serialize_element(&Float17(v.to_f64_lossless()))?;
    }
    seq.end()
}

/// Writes `contents` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_json_string<V: Serialize>(value: &V) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

pub fn to_json_pretty<V: Serialize>(value: &V) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}
