use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{MeshTopology, SparsePointSet, Vec3};
use crate::error::{Error, Result};

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Uniform point in triangle `(a, b, c)` from two uniform variates
/// (Osada et al.): `(1 - sqrt r1) a + sqrt r1 (1 - r2) b + sqrt r1 r2 c`.
pub fn barycentric_point(a: &Vec3, b: &Vec3, c: &Vec3, r1: f64, r2: f64) -> Vec3 {
    let s = r1.sqrt();
    a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
}

/// One surface sample and where it came from.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    pub point: Vec3,
    pub triangle: usize,
    /// Barycentric weights of the triangle's three vertices.
    pub weights: [f64; 3],
}

/// Area-weighted uniform samples on a triangle mesh, with provenance.
pub fn sample_surface_points_traced<R: Rng + ?Sized>(
    positions: &[Vec3],
    topology: &MeshTopology,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SurfaceSample>> {
    let tris = topology.triangles();
    let areas: Vec<f64> = tris
        .iter()
        .map(|t| triangle_area(&positions[t[0]], &positions[t[1]], &positions[t[2]]))
        .collect();
    let picker = WeightedIndex::new(&areas)
        .map_err(|_| Error::DegenerateMesh("all triangles have zero area".into()))?;
    Ok((0..count)
        .map(|_| {
            let t = picker.sample(rng);
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            let [a, b, c] = tris[t];
            let s = r1.sqrt();
            SurfaceSample {
                point: barycentric_point(&positions[a], &positions[b], &positions[c], r1, r2),
                triangle: t,
                weights: [1.0 - s, s * (1.0 - r2), s * r2],
            }
        })
        .collect())
}

/// Area-weighted uniform surface samples. When `vertex_labels` is given,
/// each point takes the label of its triangle's first vertex.
pub fn sample_surface_points<R: Rng + ?Sized>(
    positions: &[Vec3],
    topology: &MeshTopology,
    vertex_labels: Option<&[i64]>,
    count: usize,
    rng: &mut R,
) -> Result<SparsePointSet> {
    let samples = sample_surface_points_traced(positions, topology, count, rng)?;
    let labels = vertex_labels.map(|vl| {
        samples
            .iter()
            .map(|s| vl[topology.triangles()[s.triangle][0]])
            .collect()
    });
    SparsePointSet::new(samples.into_iter().map(|s| s.point).collect(), labels)
}

/// Displaces every point by an independent isotropic Gaussian draw.
pub fn add_gaussian_noise<R: Rng + ?Sized>(
    points: &SparsePointSet,
    sigma: f64,
    rng: &mut R,
) -> Result<SparsePointSet> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("noise level must be >= 0, got {sigma}")));
    }
    let moved = points
        .points()
        .iter()
        .map(|p| {
            let g = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            p + g * sigma
        })
        .collect();
    SparsePointSet::new(moved, points.labels().map(<[i64]>::to_vec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn barycentric_corners() {
        let (a, b, c) = (Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 2.0), Vec3::new(4.0, 4.0, 4.0));
        assert_eq!(barycentric_point(&a, &b, &c, 0.0, 0.3), a);
        assert_eq!(barycentric_point(&a, &b, &c, 1.0, 0.0), b);
        assert_eq!(barycentric_point(&a, &b, &c, 1.0, 1.0), c);
    }

    #[test]
    fn samples_lie_on_their_triangle() {
        let (pos, topo) = crate::synth::uv_sphere(6, 9, 1.0);
        let mut rng = crate::rng_from_seed(5);
        for s in sample_surface_points_traced(&pos, &topo, 2000, &mut rng).unwrap() {
            let w = s.weights;
            assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
            assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            let [a, b, c] = topo.triangles()[s.triangle];
            let rebuilt = pos[a] * w[0] + pos[b] * w[1] + pos[c] * w[2];
            assert_relative_eq!(rebuilt, s.point, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_degenerate_triangles_rejected() {
        let pos = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        let topo = MeshTopology::new(vec![[0, 1, 2]], 3).unwrap();
        let mut rng = crate::rng_from_seed(0);
        assert!(matches!(
            sample_surface_points(&pos, &topo, None, 3, &mut rng),
            Err(Error::DegenerateMesh(_))
        ));
    }

    #[test]
    fn noise_zero_is_identity_and_seeded() {
        let pts = SparsePointSet::unlabeled(vec![Vec3::new(1.0, 2.0, 3.0); 4]).unwrap();
        let mut rng = crate::rng_from_seed(1);
        assert_eq!(add_gaussian_noise(&pts, 0.0, &mut rng).unwrap(), pts);
        let a = add_gaussian_noise(&pts, 2.0, &mut crate::rng_from_seed(9)).unwrap();
        let b = add_gaussian_noise(&pts, 2.0, &mut crate::rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
        assert!(add_gaussian_noise(&pts, -1.0, &mut rng).is_err());
    }

    #[test]
    fn noise_variance_monte_carlo() {
        let n = 100_000;
        let sigma = 1.5;
        let pts = SparsePointSet::unlabeled(vec![Vec3::new(3.0, -1.0, 0.5); n]).unwrap();
        let noisy = add_gaussian_noise(&pts, sigma, &mut crate::rng_from_seed(77)).unwrap();
        for axis in 0..3 {
            let vals: Vec<f64> = noisy.points().iter().map(|p| p[axis]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "axis {axis}: {var}");
        }
    }
}
