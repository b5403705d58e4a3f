//! The point distribution model `y(alpha) = mean + modes * alpha`.
//!
//! Shape vectors use coordinate-block stacking, i.e. the column
//! concatenation of an `N x 3` vertex matrix: entries `0..N` hold the x
//! coordinates, `N..2N` the y coordinates and `2N..3N` the z coordinates.
//! The three rows of vertex `i` are therefore `i`, `N + i` and `2N + i`.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{MeshTopology, Vec3};

const ORTHONORMAL_TOL: f64 = 1e-8;
const RELATIVE_EIGEN_CUTOFF: f64 = 1e-12;

/// Shape deformation parameters, one entry per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationParams(DVector<f64>);

impl DeformationParams {
    pub fn new(alpha: DVector<f64>) -> Result<Self> {
        if !alpha.iter().all(|a| a.is_finite()) {
            return Err(Error::invalid("deformation parameters must be finite"));
        }
        Ok(DeformationParams(alpha))
    }

    pub fn zeros(num_modes: usize) -> Self {
        DeformationParams(DVector::zeros(num_modes))
    }

    pub fn from_slice(alpha: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(alpha))
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl Deref for DeformationParams {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl From<DVector<f64>> for DeformationParams {
    fn from(v: DVector<f64>) -> Self {
        DeformationParams(v)
    }
}

/// Point distribution model over a fixed mesh.
#[derive(Debug, Clone)]
pub struct ShapeModel {
    mean: DVector<f64>,
    modes: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    topology: MeshTopology,
    vertex_labels: Option<Vec<i64>>,
    units: Option<String>,
}

impl ShapeModel {
    pub fn new(
        mean: DVector<f64>,
        modes: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        topology: MeshTopology,
        vertex_labels: Option<Vec<i64>>,
    ) -> Result<Self> {
        let n3 = mean.len();
        if n3 == 0 || !n3.is_multiple_of(3) {
            return Err(Error::invalid(format!("mean length {n3} is not a positive multiple of 3")));
        }
        let n = n3 / 3;
        if modes.nrows() != n3 {
            return Err(Error::DimensionMismatch {
                what: "mode matrix rows",
                expected: n3,
                found: modes.nrows(),
            });
        }
        if eigenvalues.len() != modes.ncols() {
            return Err(Error::DimensionMismatch {
                what: "eigenvalue count",
                expected: modes.ncols(),
                found: eigenvalues.len(),
            });
        }
        if topology.num_vertices() != n {
            return Err(Error::DimensionMismatch {
                what: "topology vertex count",
                expected: n,
                found: topology.num_vertices(),
            });
        }
        if let Some(l) = &vertex_labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "vertex labels",
                    expected: n,
                    found: l.len(),
                });
            }
        }
        if !mean.iter().chain(modes.iter()).all(|x| x.is_finite()) {
            return Err(Error::invalid("model arrays contain non-finite values"));
        }
        for (m, w) in eigenvalues.as_slice().windows(2).enumerate() {
            if w[1] > w[0] {
                return Err(Error::invalid(format!(
                    "eigenvalues must be non-increasing (lambda_{} < lambda_{})",
                    m + 1,
                    m + 2
                )));
            }
        }
        if let Some(m) = eigenvalues.iter().position(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::invalid(format!("eigenvalue {m} is not strictly positive")));
        }
        let gram = modes.transpose() * &modes;
        let dev = (gram - DMatrix::identity(modes.ncols(), modes.ncols())).amax();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "mode columns are not orthonormal (max deviation {dev:e})"
            )));
        }
        Ok(ShapeModel {
            mean,
            modes,
            eigenvalues,
            topology,
            vertex_labels,
            units: None,
        })
    }

    pub fn with_units(mut self, units: Option<String>) -> Self {
        self.units = units;
        self
    }

    pub fn num_vertices(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn num_modes(&self) -> usize {
        self.modes.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    pub fn vertex_labels(&self) -> Option<&[i64]> {
        self.vertex_labels.as_deref()
    }

    pub fn units(&self) -> Option<&str> {
        self.units.as_deref()
    }

    /// Mode `m` displacement of vertex `v`, i.e. column `m` of `Phi_v`.
    #[inline]
    pub fn vertex_mode(&self, v: usize, m: usize) -> Vec3 {
        let n = self.num_vertices();
        Vec3::new(self.modes[(v, m)], self.modes[(n + v, m)], self.modes[(2 * n + v, m)])
    }

    pub fn mean_vertex(&self, v: usize) -> Vec3 {
        let n = self.num_vertices();
        Vec3::new(self.mean[v], self.mean[n + v], self.mean[2 * n + v])
    }

    pub fn mean_positions(&self) -> Vec<Vec3> {
        unstack(&self.mean)
    }

    fn check_alpha(&self, alpha: &DVector<f64>) -> Result<()> {
        if alpha.len() != self.num_modes() {
            return Err(Error::DimensionMismatch {
                what: "deformation parameters",
                expected: self.num_modes(),
                found: alpha.len(),
            });
        }
        Ok(())
    }

    /// Stacked shape vector `mean + modes * alpha`.
    pub fn deform_stacked(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_alpha(alpha)?;
        let mut y = self.mean.clone();
        y.gemv(1.0, &self.modes, alpha, 1.0);
        Ok(y)
    }

    /// Vertex positions of the deformed shape.
    pub fn deform(&self, alpha: &DVector<f64>) -> Result<Vec<Vec3>> {
        Ok(unstack(&self.deform_stacked(alpha)?))
    }

    /// `y_i(alpha) = mean_i + Phi_i alpha` for a single vertex.
    pub fn deform_vertex(&self, v: usize, alpha: &DVector<f64>) -> Result<Vec3> {
        self.check_alpha(alpha)?;
        let mut y = self.mean_vertex(v);
        for m in 0..self.num_modes() {
            y += self.vertex_mode(v, m) * alpha[m];
        }
        Ok(y)
    }

    /// `log N(alpha | 0, diag(lambda))`, normalising constant included.
    pub fn prior_log_density(&self, alpha: &DVector<f64>) -> Result<f64> {
        self.check_alpha(alpha)?;
        Ok(alpha
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(a, l)| -0.5 * ((2.0 * std::f64::consts::PI * l).ln() + a * a / l))
            .sum())
    }

    /// Draws `alpha_m ~ N(0, lambda_m)` independently.
    pub fn sample_alpha<R: Rng + ?Sized>(&self, rng: &mut R) -> DeformationParams {
        DeformationParams(DVector::from_iterator(
            self.num_modes(),
            self.eigenvalues.iter().map(|l| {
                let z: f64 = rng.sample(StandardNormal);
                z * l.sqrt()
            }),
        ))
    }
}

/// Stacks vertex positions into a `3N` shape vector (coordinate blocks).
pub fn stack(positions: &[Vec3]) -> DVector<f64> {
    let n = positions.len();
    let mut v = DVector::zeros(3 * n);
    for (i, p) in positions.iter().enumerate() {
        v[i] = p.x;
        v[n + i] = p.y;
        v[2 * n + i] = p.z;
    }
    v
}

/// Inverse of [`stack`].
pub fn unstack(v: &DVector<f64>) -> Vec<Vec3> {
    let n = v.len() / 3;
    (0..n).map(|i| Vec3::new(v[i], v[n + i], v[2 * n + i])).collect()
}

/// Builds a PDM by PCA over `K` corresponded, pre-aligned training shapes.
///
/// The eigenproblem is solved on the `K x K` Gram matrix of the centred data;
/// the `3N x 3N` covariance is never formed. Modes whose eigenvalue falls
/// below `1e-12 * lambda_1` are dropped with a warning.
pub fn build_pdm(
    training_shapes: &[Vec<Vec3>],
    num_modes: usize,
    topology: MeshTopology,
) -> Result<ShapeModel> {
    let k = training_shapes.len();
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 training shapes, got {k}")));
    }
    let n = training_shapes[0].len();
    if let Some(bad) = training_shapes.iter().position(|s| s.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "training shape vertex count",
            expected: n,
            found: training_shapes[bad].len(),
        });
    }
    if num_modes == 0 || num_modes > (3 * n).min(k - 1) {
        return Err(Error::invalid(format!(
            "number of modes must be in 1..={}, got {num_modes}",
            (3 * n).min(k - 1)
        )));
    }

    let columns: Vec<DVector<f64>> = training_shapes.iter().map(|s| stack(s)).collect();
    let data = DMatrix::from_columns(&columns);
    let mean = data.column_mean();
    let mut centred = data.clone();
    for mut c in centred.column_iter_mut() {
        c -= &mean;
    }
    let spread = centred.norm();
    if !(spread > 1e-12 * data.norm().max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateModel("training shapes have zero variance".into()));
    }

    let scale = 1.0 / (k as f64 - 1.0);
    let gram = centred.transpose() * &centred * scale;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let lambda_max = eig.eigenvalues[order[0]];

    let mut modes = Vec::with_capacity(num_modes);
    let mut eigenvalues = Vec::with_capacity(num_modes);
    for &idx in order.iter().take(num_modes) {
        let lambda = eig.eigenvalues[idx];
        if lambda < RELATIVE_EIGEN_CUTOFF * lambda_max {
            log::warn!(
                "dropping mode {} onwards: eigenvalue {lambda:e} below {RELATIVE_EIGEN_CUTOFF:e} * lambda_1",
                eigenvalues.len() + 1
            );
            break;
        }
        let v = eig.eigenvectors.column(idx);
        let phi = &centred * v;
        let norm = phi.norm();
        modes.push(phi / norm);
        eigenvalues.push(lambda);
    }

    ShapeModel::new(
        mean,
        DMatrix::from_columns(&modes),
        DVector::from_vec(eigenvalues),
        topology,
        None,
    )
}
