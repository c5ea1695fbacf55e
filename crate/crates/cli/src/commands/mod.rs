//! One module per subcommand. Every command writes its artifacts under the
//! configured output directory and returns the report it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, WithPath};

mod edges;
mod eval;
mod iep;
mod refine;
mod synth;

pub use edges::{cmd_edges, EdgesReport};
pub use eval::{cmd_eval, EvalReport};
pub use iep::{cmd_iep, IepReport, StepValue};
pub use refine::{cmd_refine, RefineReport};
pub use synth::{cmd_synth, SynthReport};

/// Name of the mask index inside a mask directory.
pub const MASK_INDEX: &str = "masks.jsonl";

/// One line of a mask index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    /// Raster path relative to the index.
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).at(dir)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn read_mask_index(dir: &Path) -> Result<Vec<MaskRecord>, CliError> {
    let path = dir.join(MASK_INDEX);
    let text = fs::read_to_string(&path).at(&path)?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line)
                .map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

pub fn write_mask_index(dir: &Path, records: &[MaskRecord]) -> Result<(), CliError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| CliError::Internal(e.to_string()))?);
        text.push('\n');
    }
    let path = dir.join(MASK_INDEX);
    fs::write(&path, text).at(&path)
}

/// Files of `dir` with extension `ext`, sorted by name.
pub(crate) fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

/// Subdirectories of `dir`, sorted by name.
pub(crate) fn list_dirs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub(crate) fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}
