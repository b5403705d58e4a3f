//! Mesh topology, vertex normals, surface-aligned covariances and the
//! synthetic observation models (surface samples, slice contours, noise).

mod contour;
mod sampling;

pub use contour::{contour_inplane_noise, slice_contour, slice_contour_at, Contour, Polyline};
pub use sampling::{
    add_gaussian_noise, barycentric_point, sample_surface_points, sample_surface_points_traced,
    triangle_area, SurfaceSample,
};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Oriented triangle mesh connectivity together with the designated
/// normal neighbours of every vertex.
///
/// For vertex `i` the pair `(i2, i3)` is taken from the lowest-indexed
/// triangle containing `i`, in that triangle's stored orientation, so
/// `(i, i2, i3)` is always a cyclic rotation of a mesh triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshTopology {
    triangles: Vec<[usize; 3]>,
    normal_neighbors: Vec<(usize, usize)>,
}

impl MeshTopology {
    pub fn new(triangles: Vec<[usize; 3]>, num_vertices: usize) -> Result<Self> {
        let mut neighbors: Vec<Option<(usize, usize)>> = vec![None; num_vertices];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= num_vertices {
                    return Err(Error::invalid(format!(
                        "triangle {t} references vertex {v} but the mesh has {num_vertices} vertices"
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::invalid(format!("triangle {t} repeats a vertex: {tri:?}")));
            }
            for k in 0..3 {
                let slot = &mut neighbors[tri[k]];
                if slot.is_none() {
                    *slot = Some((tri[(k + 1) % 3], tri[(k + 2) % 3]));
                }
            }
        }
        let normal_neighbors = neighbors
            .into_iter()
            .enumerate()
            .map(|(v, n)| {
                n.ok_or_else(|| Error::invalid(format!("vertex {v} is not part of any triangle")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MeshTopology {
            triangles,
            normal_neighbors,
        })
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_vertices(&self) -> usize {
        self.normal_neighbors.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// The designated `(i2, i3)` of vertex `i`.
    pub fn normal_neighbors(&self, i: usize) -> (usize, usize) {
        self.normal_neighbors[i]
    }

    pub fn all_normal_neighbors(&self) -> &[(usize, usize)] {
        &self.normal_neighbors
    }
}

/// The observed sparse points, optionally tagged with an object label.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePointSet {
    points: Vec<Vec3>,
    labels: Option<Vec<i64>>,
}

impl SparsePointSet {
    pub fn new(points: Vec<Vec3>, labels: Option<Vec<i64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point set must contain at least one point"));
        }
        if let Some(j) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("point {j} has non-finite coordinates")));
        }
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::DimensionMismatch {
                    what: "point labels",
                    expected: points.len(),
                    found: l.len(),
                });
            }
        }
        Ok(SparsePointSet { points, labels })
    }

    pub fn unlabeled(points: Vec<Vec3>) -> Result<Self> {
        Self::new(points, None)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks that every point label is carried by at least one component.
    pub fn check_labels(&self, component_labels: Option<&[i64]>) -> Result<()> {
        let Some(labels) = &self.labels else {
            return Ok(());
        };
        let Some(comp) = component_labels else {
            return Err(Error::UnknownLabel {
                point: 0,
                label: labels[0],
            });
        };
        for (j, l) in labels.iter().enumerate() {
            if !comp.contains(l) {
                return Err(Error::UnknownLabel { point: j, label: *l });
            }
        }
        Ok(())
    }

    /// Concatenates point sets; labels are kept only if every part has them.
    pub fn concat(parts: &[SparsePointSet]) -> Result<Self> {
        let points: Vec<Vec3> = parts.iter().flat_map(|p| p.points.iter().copied()).collect();
        let labels = if parts.iter().all(|p| p.labels.is_some()) {
            Some(
                parts
                    .iter()
                    .flat_map(|p| p.labels.as_ref().unwrap().iter().copied())
                    .collect(),
            )
        } else {
            None
        };
        Self::new(points, labels)
    }
}

/// Unnormalised triangle normal `(b - a) x (c - a)` together with the
/// scale-aware degeneracy verdict.
fn raw_normal(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Vec3> {
    let e1 = b - a;
    let e2 = c - a;
    let cross = e1.cross(&e2);
    let max_edge2 = e1
        .norm_squared()
        .max(e2.norm_squared())
        .max((c - b).norm_squared());
    if !(cross.norm() >= 1e-12 * max_edge2) || max_edge2 == 0.0 {
        return None;
    }
    Some(cross)
}

/// Unit normal at vertex `i` from its designated triangle `(i, i2, i3)`.
pub fn vertex_normal(positions: &[Vec3], topology: &MeshTopology, i: usize) -> Result<Vec3> {
    let (i2, i3) = topology.normal_neighbors(i);
    let b = raw_normal(&positions[i], &positions[i2], &positions[i3])
        .ok_or(Error::DegenerateNormal { vertex: i })?;
    Ok(b / b.norm())
}

fn check_aniso_args(n: &Vec3, eta: f64) -> Result<()> {
    if !(eta >= 1.0) || !eta.is_finite() {
        return Err(Error::invalid(format!("anisotropy weight must be >= 1, got {eta}")));
    }
    if (n.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "normal must have unit length, got norm {}",
            n.norm()
        )));
    }
    Ok(())
}

/// Surface-aligned covariance `(1/eta - 1) n n^T + I`.
pub fn aniso_covariance(n: &Vec3, eta: f64) -> Result<Matrix3<f64>> {
    check_aniso_args(n, eta)?;
    Ok(Matrix3::identity() + (1.0 / eta - 1.0) * n * n.transpose())
}

/// Precision matrix `(eta - 1) n n^T + I`, the inverse of [`aniso_covariance`].
pub fn aniso_precision(n: &Vec3, eta: f64) -> Result<Matrix3<f64>> {
    check_aniso_args(n, eta)?;
    Ok(precision_unchecked(n, eta))
}

#[inline]
pub(crate) fn precision_unchecked(n: &Vec3, eta: f64) -> Matrix3<f64> {
    Matrix3::identity() + (eta - 1.0) * n * n.transpose()
}

/// Per-vertex normals; degenerate designated triangles yield `None`.
pub fn vertex_normals(positions: &[Vec3], topology: &MeshTopology) -> Vec<Option<Vec3>> {
    (0..positions.len())
        .map(|i| vertex_normal(positions, topology, i).ok())
        .collect()
}

/// Precision matrices for all vertices. Vertices whose designated triangle
/// is degenerate get the identity; their count is returned alongside.
pub fn precisions_with_fallback(
    positions: &[Vec3],
    topology: &MeshTopology,
    eta: f64,
) -> (Vec<Matrix3<f64>>, usize) {
    let mut degenerate = 0;
    let w = vertex_normals(positions, topology)
        .into_iter()
        .map(|n| match n {
            Some(n) => precision_unchecked(&n, eta),
            None => {
                degenerate += 1;
                Matrix3::identity()
            }
        })
        .collect();
    (w, degenerate)
}

/// Axis-aligned bounding box of a vertex set.
pub fn bounding_box(positions: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

pub fn bounding_box_diagonal(positions: &[Vec3]) -> f64 {
    let (lo, hi) = bounding_box(positions);
    (hi - lo).norm()
}

/// `[u]_x`, the matrix with `[u]_x v = u x v`.
pub fn skew(u: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0)
}
