//! Ray-parity voxelisation of closed triangle meshes.

use crate::error::{Error, Result};
use crate::geometry::{bounding_box, MeshTopology, Vec3};

/// Placement of a regular grid: voxel `(i, j, k)` has its centre at
/// `origin + (index + 0.5) * spacing`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    /// Grid covering the bounding box of all given vertex sets, padded by
    /// two voxels on every side.
    pub fn covering(sets: &[&[Vec3]], spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::invalid(format!("voxel spacing must be positive, got {spacing}")));
        }
        let all: Vec<Vec3> = sets.iter().flat_map(|s| s.iter().copied()).collect();
        if all.is_empty() {
            return Err(Error::invalid("cannot build a grid around an empty vertex set"));
        }
        let (lo, hi) = bounding_box(&all);
        let pad = 2.0 * spacing;
        let origin = lo - Vec3::repeat(pad);
        let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a] + 2.0 * pad) / spacing).ceil().max(1.0) as usize);
        Ok(GridSpec {
            origin,
            spacing,
            dims,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, axis: usize, index: usize) -> f64 {
        self.origin[axis] + (index as f64 + 0.5) * self.spacing
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }
}

/// Boolean occupancy of voxel centres.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    spec: GridSpec,
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(spec: GridSpec, occupancy: Vec<bool>) -> Result<Self> {
        if !(spec.spacing > 0.0) {
            return Err(Error::invalid("voxel spacing must be positive"));
        }
        if occupancy.len() != spec.len() {
            return Err(Error::DimensionMismatch {
                what: "voxel occupancy",
                expected: spec.len(),
                found: occupancy.len(),
            });
        }
        Ok(VoxelGrid { spec, occupancy })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|o| **o).count()
    }

    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.spec.spacing.powi(3)
    }
}

/// Crossing parameters of one axis-aligned ray with the mesh.
enum Hits {
    Clean(Vec<f64>),
    Grazing,
}

struct Projected {
    /// Triangle vertices as (along-ray, b, c) coordinates.
    tris: Vec<[[f64; 3]; 3]>,
}

fn ray_hits(proj: &Projected, candidates: &[usize], b: f64, c: f64) -> Hits {
    let mut out = Vec::new();
    for &t in candidates {
        let [v0, v1, v2] = proj.tris[t];
        let edge = |p: &[f64; 3], q: &[f64; 3]| (q[1] - p[1]) * (c - p[2]) - (q[2] - p[2]) * (b - p[1]);
        let w0 = edge(&v1, &v2);
        let w1 = edge(&v2, &v0);
        let w2 = edge(&v0, &v1);
        let area = w0 + w1 + w2;
        let scale = [v0, v1, v2]
            .iter()
            .flat_map(|v| [v[1].abs(), v[2].abs()])
            .fold(b.abs().max(c.abs()), f64::max)
            .max(1.0);
        let eps = 1e-12 * scale * scale;
        if area.abs() <= eps {
            // triangle is parallel to the ray
            continue;
        }
        let s = area.signum();
        let (a0, a1, a2) = (w0 * s, w1 * s, w2 * s);
        if a0 < -eps || a1 < -eps || a2 < -eps {
            continue;
        }
        if a0 <= eps || a1 <= eps || a2 <= eps {
            return Hits::Grazing;
        }
        out.push((w0 * v0[0] + w1 * v1[0] + w2 * v2[0]) / area);
    }
    out.sort_by(f64::total_cmp);
    Hits::Clean(out)
}

/// For rays along `axis` through every voxel-centre line of the grid,
/// returns the sorted crossing coordinates. Rays that graze an edge or a
/// vertex are nudged by a small deterministic offset and retried.
fn cast_rays(positions: &[Vec3], topology: &MeshTopology, spec: &GridSpec, axis: usize) -> Vec<Vec<f64>> {
    let (ab, ac) = ((axis + 1) % 3, (axis + 2) % 3);
    let proj = Projected {
        tris: topology
            .triangles()
            .iter()
            .map(|t| t.map(|i| [positions[i][axis], positions[i][ab], positions[i][ac]]))
            .collect(),
    };
    let (nb, nc) = (spec.dims[ab], spec.dims[ac]);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); nb * nc];
    let h = spec.spacing;
    let to_index = |coord: f64, a: usize, n: usize| -> (usize, usize) {
        let lo = ((coord - spec.origin[a]) / h - 0.5 - 1.0).floor();
        (lo.max(0.0) as usize, (lo + 3.0).clamp(0.0, n as f64) as usize)
    };
    for (t, tri) in proj.tris.iter().enumerate() {
        let bmin = tri.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min);
        let bmax = tri.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max);
        let cmin = tri.iter().map(|v| v[2]).fold(f64::INFINITY, f64::min);
        let cmax = tri.iter().map(|v| v[2]).fold(f64::NEG_INFINITY, f64::max);
        let (b0, _) = to_index(bmin, ab, nb);
        let (_, b1) = to_index(bmax, ab, nb);
        let (c0, _) = to_index(cmin, ac, nc);
        let (_, c1) = to_index(cmax, ac, nc);
        for ic in c0..c1.min(nc) {
            for ib in b0..b1.min(nb) {
                buckets[ib + nb * ic].push(t);
            }
        }
    }
    let mut lines = Vec::with_capacity(nb * nc);
    for ic in 0..nc {
        for ib in 0..nb {
            let cand = &buckets[ib + nb * ic];
            let (b, c) = (spec.center(ab, ib), spec.center(ac, ic));
            let mut hits = Vec::new();
            for attempt in 0..8 {
                let k = attempt as f64;
                let (db, dc) = (1e-4 * h * k * 0.618_033_988_7, 1e-4 * h * k * 0.414_213_562_4);
                match ray_hits(&proj, cand, b + db, c + dc) {
                    Hits::Clean(x) => {
                        hits = x;
                        break;
                    }
                    Hits::Grazing => continue,
                }
            }
            lines.push(hits);
        }
    }
    lines
}

/// Occupancy of voxel centres on a given grid, by parity of +x ray crossings.
///
/// Closedness is checked by casting rays along all three axes: any ray with
/// an odd number of crossings means the mesh has a boundary.
pub fn voxelize_on(positions: &[Vec3], topology: &MeshTopology, spec: &GridSpec) -> Result<VoxelGrid> {
    for axis in [2, 1] {
        if cast_rays(positions, topology, spec, axis).iter().any(|l| l.len() % 2 == 1) {
            return Err(Error::NonClosedMesh {
                axis: ['x', 'y', 'z'][axis],
            });
        }
    }
    let lines = cast_rays(positions, topology, spec, 0);
    let mut occupancy = vec![false; spec.len()];
    let (nx, ny, nz) = (spec.dims[0], spec.dims[1], spec.dims[2]);
    for k in 0..nz {
        for j in 0..ny {
            let hits = &lines[j + ny * k];
            if hits.len() % 2 == 1 {
                return Err(Error::NonClosedMesh { axis: 'x' });
            }
            let mut next = 0;
            for i in 0..nx {
                let x = spec.center(0, i);
                while next < hits.len() && hits[next] < x {
                    next += 1;
                }
                occupancy[spec.linear_index(i, j, k)] = next % 2 == 1;
            }
        }
    }
    VoxelGrid::new(*spec, occupancy)
}

/// Voxelises a closed mesh on its own bounding box padded by two voxels.
pub fn voxelize(positions: &[Vec3], topology: &MeshTopology, spacing: f64) -> Result<VoxelGrid> {
    let spec = GridSpec::covering(&[positions], spacing)?;
    voxelize_on(positions, topology, &spec)
}

/// `2 |A ∩ B| / (|A| + |B|)`; 1 when both are empty.
pub fn dice(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::GridMismatch);
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (x, y) in a.occupancy.iter().zip(&b.occupancy) {
        na += *x as usize;
        nb += *y as usize;
        both += (*x && *y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}
