//! File formats.
//!
//! | data | format |
//! |------|--------|
//! | shape model | JSON: `format_version` (`"1"`), `n_vertices`, `n_modes`, `mean` (3N floats, x-block/y-block/z-block), `modes` (3N·M floats, column-major), `eigenvalues` (M floats), `triangles` (`[[i, j, k], …]`), optional `vertex_labels` (N ints), optional `units` (default millimetres) |
//! | mesh | ASCII OFF, triangles only |
//! | points | CSV with mandatory header `x,y,z` or `x,y,z,label` |
//! | fit result | JSON: `format_version`, `variant`, `eta`, `alpha`, `sigma2` (null for ICP), `iterations`, `converged`, `fallback_count`, `q_trace` (EM) or `residual_trace` (ICP), `wall_times` |
//! | metrics report | JSON: `dsc`, `surface_avg`, `surface_max`, `vertex_rmse` (absent metrics are null) |
//! | run manifest | JSON: `format_version`, `model`, `points`, `output`, `config` |
//!
//! Floats are written in their shortest round-trip decimal form, so every
//! save/load cycle reproduces finite doubles bit for bit.

mod manifest;
mod mesh;
mod model;
mod points;
mod report;
mod result;

use std::fs;
use std::path::Path;

pub use manifest::{load_manifest, save_manifest, FitSettings, IcpSettings, ManifestConfig, RunManifest};
pub use mesh::{load_off, parse_off, save_off, write_off};
pub use model::{load_model, model_from_json, model_to_json, save_model};
pub use points::{load_points, parse_points, save_points, write_points};
pub use report::{save_report, MetricsReport};
pub use result::{load_result, result_from_json, result_to_json, save_result};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "1";

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Byte offset of a 1-based (line, column) position as reported by serde_json.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

pub(crate) fn json_error(path: &Path, text: &str, e: serde_json::Error) -> Error {
    use serde_json::error::Category;
    match e.classify() {
        Category::Syntax | Category::Eof => Error::Parse {
            path: path.to_path_buf(),
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        },
        _ => Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    }
}

pub(crate) fn check_version(found: &str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: found.to_owned(),
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}
