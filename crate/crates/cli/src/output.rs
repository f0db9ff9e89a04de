//! Artifact writing. Every CSV a command emits carries a header row and a
//! trailing metadata comment tying it to the run's seed and config hash.

use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Write `header` plus `rows` and the `# seed=.. config_hash=..` trailer.
/// Returns the final path inside `dir`.
pub fn write_csv(
    dir: &Path,
    name: &str,
    header: &str,
    rows: &[String],
    seed: u64,
    config_hash: &str,
) -> Result<PathBuf, CliError> {
    let mut text = String::with_capacity(rows.iter().map(|r| r.len() + 1).sum::<usize>() + 64);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    text.push_str(&format!("# seed={seed} config_hash={config_hash}\n"));
    let path = dir.join(name);
    fs::write(&path, text)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

/// Create the output directory if needed.
pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}
