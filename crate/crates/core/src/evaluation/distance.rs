use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{sample_surface_points_traced, MeshTopology, Vec3};

/// Closest point on triangle `(a, b, c)` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Exact distance from `p` to the closest point of the mesh.
pub fn point_mesh_distance(p: &Vec3, positions: &[Vec3], topology: &MeshTopology) -> f64 {
    topology
        .triangles()
        .iter()
        .map(|t| {
            let q = closest_point_on_triangle(p, &positions[t[0]], &positions[t[1]], &positions[t[2]]);
            (p - q).norm_squared()
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Symmetric sampled surface distance between two meshes.
///
/// `n_samples` area-weighted points are drawn on each surface and their
/// exact point-to-triangle distance to the other surface is computed.
/// Returns the mean over all `2 n_samples` distances and their maximum
/// (a Hausdorff estimate).
pub fn surface_distance<R: Rng + ?Sized>(
    positions_a: &[Vec3],
    topology_a: &MeshTopology,
    positions_b: &[Vec3],
    topology_b: &MeshTopology,
    n_samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if n_samples == 0 {
        return Err(Error::invalid("need at least one surface sample"));
    }
    if positions_a == positions_b && topology_a == topology_b {
        return Ok((0.0, 0.0));
    }
    let sa = sample_surface_points_traced(positions_a, topology_a, n_samples, rng)?;
    let sb = sample_surface_points_traced(positions_b, topology_b, n_samples, rng)?;
    let da: Vec<f64> = sa
        .par_iter()
        .map(|s| point_mesh_distance(&s.point, positions_b, topology_b))
        .collect();
    let db: Vec<f64> = sb
        .par_iter()
        .map(|s| point_mesh_distance(&s.point, positions_a, topology_a))
        .collect();
    let all = da.iter().chain(&db);
    let mean = all.clone().sum::<f64>() / (2 * n_samples) as f64;
    let max = all.fold(0.0f64, |m, d| m.max(*d));
    Ok((mean, max))
}

/// `sqrt(mean_i |a_i - b_i|^2)`.
pub fn vertex_rmse(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "vertex count",
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::invalid("no vertices"));
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum();
    Ok((s / a.len() as f64).sqrt())
}
