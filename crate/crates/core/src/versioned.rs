//! Versioned file envelope: a `# rlam <kind> v<version>` header line followed
//! by a JSON body.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

fn header(kind: &str, version: u32) -> String {
    format!("# rlam {kind} v{version}")
}

pub fn to_string<T: Serialize>(kind: &str, version: u32, value: &T) -> Result<String> {
    let mut out = header(kind, version);
    out.push('\n');
    out.push_str(&serde_json::to_string(value)?);
    out.push('\n');
    Ok(out)
}

pub fn from_str<T: DeserializeOwned>(path: &Path, kind: &str, version: u32, text: &str) -> Result<T> {
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    let expected = header(kind, version);
    if first.trim_end() != expected {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: format!("expected header `{expected}`, found `{}`", first.trim_end()),
        });
    }
    Ok(serde_json::from_str(body)?)
}

pub fn write<T: Serialize>(path: &Path, kind: &str, version: u32, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, to_string(kind, version, value)?).map_err(|e| Error::io(path, e))
}

pub fn read<T: DeserializeOwned>(path: &Path, kind: &str, version: u32) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(path, kind, version, &text)
}
