//! Synthetic meshes and shape models.
//!
//! These are used by the command line (`synth-model`), the tests and the
//! benchmark. All generators are deterministic given their rng.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{MeshTopology, SparsePointSet, Vec3};
use crate::model::{build_pdm, stack, unstack, ShapeModel};

/// UV sphere of radius `r` with two poles and `stacks - 1` rings of
/// `slices` vertices; `N = 2 + (stacks - 1) * slices`. Triangles are
/// oriented counter-clockwise seen from outside.
pub fn uv_sphere(stacks: usize, slices: usize, r: f64) -> (Vec<Vec3>, MeshTopology) {
    assert!(stacks >= 2 && slices >= 3, "uv_sphere needs stacks >= 2, slices >= 3");
    let mut pos = vec![Vec3::new(0.0, 0.0, r)];
    for s in 1..stacks {
        let theta = PI * s as f64 / stacks as f64;
        for k in 0..slices {
            let phi = 2.0 * PI * k as f64 / slices as f64;
            pos.push(r * Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()));
        }
    }
    pos.push(Vec3::new(0.0, 0.0, -r));
    let south = pos.len() - 1;
    let ring = |s: usize, k: usize| 1 + (s - 1) * slices + (k % slices);

    let mut tris = Vec::new();
    for k in 0..slices {
        tris.push([0, ring(1, k), ring(1, k + 1)]);
    }
    for s in 1..stacks - 1 {
        for k in 0..slices {
            let (a, b) = (ring(s, k), ring(s, k + 1));
            let (c, d) = (ring(s + 1, k), ring(s + 1, k + 1));
            tris.push([a, c, d]);
            tris.push([a, d, b]);
        }
    }
    for k in 0..slices {
        tris.push([south, ring(stacks - 1, k + 1), ring(stacks - 1, k)]);
    }
    let topo = MeshTopology::new(tris, pos.len()).expect("uv sphere topology is valid");
    (pos, topo)
}

/// The axis-aligned unit cube `[0, 1]^3`, 8 vertices and 12 outward triangles.
pub fn unit_cube() -> (Vec<Vec3>, MeshTopology) {
    let pos: Vec<Vec3> = (0..8)
        .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    let tris = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    (pos, MeshTopology::new(tris, 8).expect("cube topology is valid"))
}

/// Sphere resolution whose vertex count is close to `n` (at least 14).
fn sphere_resolution(n: usize) -> (usize, usize) {
    let n = n.max(14) as f64;
    let slices = ((2.0 * (n - 2.0)).sqrt().round() as usize).max(4);
    let stacks = (((n - 2.0) / slices as f64).round() as usize + 1).max(3);
    (stacks, slices)
}

/// A random model on a jittered sphere of about `n` vertices with `m`
/// random orthonormal modes. Eigenvalues are small enough that deformed
/// shapes drawn from the prior keep all designated triangles well-formed.
pub fn random_model<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<ShapeModel> {
    let (stacks, slices) = sphere_resolution(n);
    let (pos, topo) = uv_sphere(stacks, slices, 1.0);
    let nv = pos.len();
    if m == 0 || m > 3 * nv {
        return Err(Error::invalid(format!("cannot build {m} modes on {nv} vertices")));
    }
    let h = 0.2 / slices as f64;
    let jittered: Vec<Vec3> = pos
        .iter()
        .map(|p| p * (1.0 + 0.5 * rng.random::<f64>()) + h * random_unit(rng))
        .collect();
    let g = DMatrix::from_fn(3 * nv, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let mut lam: Vec<f64> = (0..m).map(|_| h * h * (0.2 + rng.random::<f64>())).collect();
    lam.sort_by(|a, b| b.total_cmp(a));
    ShapeModel::new(stack(&jittered), q, DVector::from_vec(lam), topo, None)
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if v.norm() > 1e-8 {
            return v.normalize();
        }
    }
}

/// Parameters of the synthetic ellipsoid population.
#[derive(Debug, Clone)]
pub struct EllipsoidSpec {
    /// Target number of vertices (the sphere resolution is rounded).
    pub vertices: usize,
    pub modes: usize,
    /// Number of training shapes; must exceed `modes`.
    pub training_shapes: usize,
    /// Mean semi-axes.
    pub radii: Vec3,
    /// Relative standard deviation of each semi-axis.
    pub axis_sd: f64,
    /// Standard deviation of the low-frequency normal displacements,
    /// relative to the smallest mean semi-axis.
    pub bump_sd: f64,
    pub center: Vec3,
}

impl Default for EllipsoidSpec {
    fn default() -> Self {
        EllipsoidSpec {
            vertices: 1000,
            modes: 8,
            training_shapes: 40,
            radii: Vec3::new(40.0, 30.0, 25.0),
            axis_sd: 0.12,
            bump_sd: 0.06,
            center: Vec3::zeros(),
        }
    }
}

const BUMPS: usize = 15;

/// Low-frequency displacement basis on the unit sphere: harmonic
/// polynomials of degree 1 to 3 in the coordinates of the direction.
fn bump_basis(d: &Vec3) -> [f64; BUMPS] {
    let (x, y, z) = (d.x, d.y, d.z);
    [
        x,
        y,
        z,
        x * y,
        y * z,
        x * z,
        x * x - y * y,
        3.0 * z * z - 1.0,
        x * (x * x - 3.0 * y * y),
        y * (3.0 * x * x - y * y),
        z * (x * x - y * y),
        x * y * z,
        x * (5.0 * z * z - 1.0),
        y * (5.0 * z * z - 1.0),
        z * (5.0 * z * z - 3.0),
    ]
}

fn ellipsoid_training_shapes<R: Rng + ?Sized>(
    spec: &EllipsoidSpec,
    dirs: &[Vec3],
    rng: &mut R,
) -> Vec<Vec<Vec3>> {
    let rmin = spec.radii.min();
    (0..spec.training_shapes)
        .map(|_| {
            let scale = Vec3::from_fn(|k, _| {
                let g: f64 = rng.sample(StandardNormal);
                spec.radii[k] * (1.0 + spec.axis_sd * g).max(0.3)
            });
            let amps: Vec<f64> = (0..BUMPS)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * spec.bump_sd * rmin)
                .collect();
            dirs.iter()
                .map(|d| {
                    let surf = d.component_mul(&scale);
                    // displacement along the ellipsoid normal direction
                    let normal = d.component_div(&scale).normalize();
                    let bump: f64 = bump_basis(d).iter().zip(&amps).map(|(b, a)| b * a).sum();
                    spec.center + surf + normal * bump
                })
                .collect()
        })
        .collect()
}

/// PCA model of a population of deformed ellipsoids (closed UV-sphere mesh).
pub fn ellipsoid_model<R: Rng + ?Sized>(spec: &EllipsoidSpec, rng: &mut R) -> Result<ShapeModel> {
    if spec.training_shapes <= spec.modes {
        return Err(Error::invalid("need more training shapes than modes"));
    }
    let (stacks, slices) = sphere_resolution(spec.vertices);
    let (dirs, topo) = uv_sphere(stacks, slices, 1.0);
    let shapes = ellipsoid_training_shapes(spec, &dirs, rng);
    Ok(build_pdm(&shapes, spec.modes, topo)?.with_units(Some("mm".into())))
}

/// Several ellipsoids side by side along x, one object label per
/// ellipsoid, modelled jointly so that their shape variations share modes.
pub fn multi_ellipsoid_model<R: Rng + ?Sized>(
    objects: usize,
    spec: &EllipsoidSpec,
    rng: &mut R,
) -> Result<ShapeModel> {
    if objects == 0 {
        return Err(Error::invalid("need at least one object"));
    }
    if spec.training_shapes <= spec.modes {
        return Err(Error::invalid("need more training shapes than modes"));
    }
    let per = spec.vertices / objects;
    let (stacks, slices) = sphere_resolution(per);
    let (dirs, topo) = uv_sphere(stacks, slices, 1.0);
    let nv = dirs.len();
    let gap = 2.5 * spec.radii.x;
    let parts: Vec<Vec<Vec<Vec3>>> = (0..objects)
        .map(|o| {
            let mut s = spec.clone();
            s.center = spec.center + Vec3::new(gap * o as f64, 0.0, 0.0);
            ellipsoid_training_shapes(&s, &dirs, rng)
        })
        .collect();
    let shapes: Vec<Vec<Vec3>> = (0..spec.training_shapes)
        .map(|k| parts.iter().flat_map(|p| p[k].iter().copied()).collect())
        .collect();
    let tris = (0..objects)
        .flat_map(|o| {
            topo.triangles()
                .iter()
                .map(move |t| [t[0] + o * nv, t[1] + o * nv, t[2] + o * nv])
        })
        .collect();
    let joined = MeshTopology::new(tris, nv * objects)?;
    let model = build_pdm(&shapes, spec.modes, joined)?;
    let labels = (0..objects).flat_map(|o| std::iter::repeat_n(o as i64, nv)).collect();
    Ok(ShapeModel::new(
        model.mean().clone(),
        model.modes().clone(),
        model.eigenvalues().clone(),
        model.topology().clone(),
        Some(labels),
    )?
    .with_units(Some("mm".into())))
}

/// The didactic rectangle: a 12-vertex outline (4 segments along the
/// width, 2 along the height) in the `z = 0` plane.
///
/// To make the surface normal well-defined in 3D the outline is extruded
/// into a prism of two identical rings at `z = +-RECT_HALF_DEPTH`; ring
/// vertex `k` is model vertex `k` (upper) and `12 + k` (lower). The two
/// modes stretch the rectangle along x and along y.
pub const RECT_OUTLINE: usize = 12;
pub const RECT_HALF_DEPTH: f64 = 0.5;
pub const RECT_WIDTH: f64 = 4.0;
pub const RECT_HEIGHT: f64 = 2.0;

/// Counter-clockwise outline of a `w x h` rectangle centred at the origin.
pub fn rectangle_outline(w: f64, h: f64) -> Vec<[f64; 2]> {
    let (x0, y0) = (-w / 2.0, -h / 2.0);
    let mut out = Vec::with_capacity(RECT_OUTLINE);
    for k in 0..4 {
        out.push([x0 + w * k as f64 / 4.0, y0]);
    }
    for k in 0..2 {
        out.push([-x0, y0 + h * k as f64 / 2.0]);
    }
    for k in 0..4 {
        out.push([-x0 - w * k as f64 / 4.0, -y0]);
    }
    for k in 0..2 {
        out.push([x0, -y0 - h * k as f64 / 2.0]);
    }
    out
}

fn prism(outline: &[[f64; 2]]) -> Vec<Vec3> {
    let up = outline.iter().map(|p| Vec3::new(p[0], p[1], RECT_HALF_DEPTH));
    let down = outline.iter().map(|p| Vec3::new(p[0], p[1], -RECT_HALF_DEPTH));
    up.chain(down).collect()
}

/// Side-wall triangulation of the prism, oriented outward.
pub fn rectangle_topology() -> MeshTopology {
    let n = RECT_OUTLINE;
    let mut tris = Vec::with_capacity(2 * n);
    for i in 0..n {
        let j = (i + 1) % n;
        tris.push([i, n + i, j]);
        tris.push([j, n + i, n + j]);
    }
    MeshTopology::new(tris, 2 * n).expect("prism topology is valid")
}

/// Rectangle PDM with two modes (width and height stretch), learnt from
/// rectangles whose sides vary independently by `+-spread`.
pub fn rectangle2d_model() -> Result<ShapeModel> {
    let spread = 0.5;
    let shapes: Vec<Vec<Vec3>> = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
        .iter()
        .map(|(a, b)| {
            prism(&rectangle_outline(
                RECT_WIDTH + a * spread,
                RECT_HEIGHT + b * spread,
            ))
        })
        .collect();
    build_pdm(&shapes, 2, rectangle_topology())
}

/// In-plane outline (`z = 0` section) of a deformed rectangle model.
pub fn rectangle_polygon(positions: &[Vec3]) -> Vec<[f64; 2]> {
    (0..RECT_OUTLINE)
        .map(|k| {
            let m = 0.5 * (positions[k] + positions[RECT_OUTLINE + k]);
            [m.x, m.y]
        })
        .collect()
}

/// Observations for the rectangle fixture: a target rectangle whose sides
/// differ from the mean by a random stretch, observed through one point per
/// outline edge, placed strictly between the edge's two vertices.
pub fn rectangle_points<R: Rng + ?Sized>(rng: &mut R) -> Result<SparsePointSet> {
    let w = RECT_WIDTH * (1.0 + 0.08 * (2.0 * rng.random::<f64>() - 1.0));
    let h = RECT_HEIGHT * (1.0 + 0.08 * (2.0 * rng.random::<f64>() - 1.0));
    let outline = rectangle_outline(w, h);
    let pts = (0..RECT_OUTLINE)
        .map(|k| {
            let a = outline[k];
            let b = outline[(k + 1) % RECT_OUTLINE];
            let t = 0.3 + 0.4 * rng.random::<f64>();
            Vec3::new(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), 0.0)
        })
        .collect();
    SparsePointSet::unlabeled(pts)
}

/// Distance from a 2D point to the closed polygon's boundary.
pub fn point_polygon_distance(p: [f64; 2], polygon: &[[f64; 2]]) -> f64 {
    let n = polygon.len();
    (0..n)
        .map(|k| {
            let a = polygon[k];
            let b = polygon[(k + 1) % n];
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let len2 = ex * ex + ey * ey;
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (dx, dy) = (p[0] - a[0] - t * ex, p[1] - a[1] - t * ey);
            (dx * dx + dy * dy).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Mean distance from the observed points to the model's in-plane outline.
pub fn rectangle_fit_error(positions: &[Vec3], points: &SparsePointSet) -> f64 {
    let poly = rectangle_polygon(positions);
    let total: f64 = points
        .points()
        .iter()
        .map(|p| point_polygon_distance([p.x, p.y], &poly))
        .sum();
    total / points.len() as f64
}

/// Convenience: vertex positions of `model` at `alpha` given as a slice.
pub fn positions_at(model: &ShapeModel, alpha: &[f64]) -> Result<Vec<Vec3>> {
    Ok(unstack(&model.deform_stacked(&DVector::from_column_slice(alpha))?))
}
