//! Atomic file output: write to a temp file in the target directory, then
//! rename over the destination.

use std::io::Write;
use std::path::Path;

use volt::error::{Result, VoltError};

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| VoltError::Io(std::io::Error::other(e)))?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| VoltError::Io(std::io::Error::other(e)))?;
    Ok(())
}
