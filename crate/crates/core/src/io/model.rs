use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_version, json_error, read_text, write_text, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::geometry::MeshTopology;
use crate::model::ShapeModel;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: String,
    n_vertices: usize,
    n_modes: usize,
    mean: Vec<f64>,
    modes: Vec<f64>,
    eigenvalues: Vec<f64>,
    triangles: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vertex_labels: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    units: Option<String>,
}

pub fn model_to_json(model: &ShapeModel) -> String {
    let file = ModelFile {
        format_version: FORMAT_VERSION.to_owned(),
        n_vertices: model.num_vertices(),
        n_modes: model.num_modes(),
        mean: model.mean().as_slice().to_vec(),
        modes: model.modes().as_slice().to_vec(),
        eigenvalues: model.eigenvalues().as_slice().to_vec(),
        triangles: model.topology().triangles().to_vec(),
        vertex_labels: model.vertex_labels().map(<[i64]>::to_vec),
        units: model.units().map(str::to_owned),
    };
    serde_json::to_string(&file).expect("model arrays are finite")
}

/// Parses a model document; `path` is only used in error messages.
pub fn model_from_json(text: &str, path: &Path) -> Result<ShapeModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| json_error(path, text, e))?;
    check_version(&file.format_version)?;
    let (n, m) = (file.n_vertices, file.n_modes);
    let expect = |what: &'static str, expected: usize, found: usize| {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { what, expected, found })
        }
    };
    expect("mean length (3N)", 3 * n, file.mean.len())?;
    expect("mode entries (3N x M)", 3 * n * m, file.modes.len())?;
    expect("eigenvalue count", m, file.eigenvalues.len())?;
    let topology = MeshTopology::new(file.triangles, n)?;
    Ok(ShapeModel::new(
        DVector::from_vec(file.mean),
        DMatrix::from_vec(3 * n, m, file.modes),
        DVector::from_vec(file.eigenvalues),
        topology,
        file.vertex_labels,
    )?
    .with_units(file.units))
}

pub fn load_model(path: &Path) -> Result<ShapeModel> {
    let text = read_text(path)?;
    model_from_json(&text, path)
}

pub fn save_model(model: &ShapeModel, path: &Path) -> Result<()> {
    write_text(path, &model_to_json(model))
}
