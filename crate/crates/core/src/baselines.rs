//! Regularised ICP baselines.
//!
//! Each iteration matches every point to its nearest model vertex, then
//! solves the Tikhonov-regularised least-squares problem
//! `min |A alpha - b|^2 + alpha^T Lambda^-1 alpha` with `A` the stacked
//! mode rows of the matched vertices and `b = p - mean` at those vertices.
//! The anisotropic variant only changes the matching metric.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{vertex_normals, SparsePointSet, Vec3};
use crate::model::{stack, ShapeModel};
use crate::result::{FitResult, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcpVariant {
    Icp,
    Aicp,
}

impl fmt::Display for IcpVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IcpVariant::Icp => "ICP",
            IcpVariant::Aicp => "AICP",
        })
    }
}

impl FromStr for IcpVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "icp" => Ok(IcpVariant::Icp),
            "aicp" => Ok(IcpVariant::Aicp),
            _ => Err(Error::invalid(format!("unknown ICP variant {s:?} (expected icp or aicp)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpConfig {
    pub variant: IcpVariant,
    /// Anisotropy weight of the matching metric (AICP only).
    pub eta: f64,
    pub max_iters: usize,
    /// Stop when `|alpha_new - alpha| < tol`.
    pub tol: f64,
    pub seed: u64,
}

impl IcpConfig {
    pub fn new(variant: IcpVariant, eta: f64) -> Self {
        IcpConfig {
            variant,
            eta,
            max_iters: 100,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// Matching metric for [`nearest_neighbours`].
#[derive(Debug, Clone, Copy)]
pub enum Metric<'a> {
    Euclidean,
    /// `|d|^2 + (eta - 1)(n_i . d)^2`, i.e. `d^T W_i d`. A zero normal
    /// makes vertex `i` isotropic.
    Anisotropic { normals: &'a [Vec3], eta: f64 },
}

/// Index of the closest vertex for every point (ties go to the smallest
/// index). With point labels only vertices with the same label qualify.
pub fn nearest_neighbours(
    positions: &[Vec3],
    points: &SparsePointSet,
    vertex_labels: Option<&[i64]>,
    metric: Metric,
) -> Result<Vec<usize>> {
    if positions.is_empty() {
        return Err(Error::invalid("no vertices to match against"));
    }
    if let Metric::Anisotropic { normals, eta } = metric {
        if normals.len() != positions.len() {
            return Err(Error::DimensionMismatch {
                what: "normals",
                expected: positions.len(),
                found: normals.len(),
            });
        }
        if !(eta >= 1.0) {
            return Err(Error::invalid(format!("eta must be >= 1, got {eta}")));
        }
    }
    points.check_labels(vertex_labels)?;
    let labels = points.labels();
    points
        .points()
        .par_iter()
        .enumerate()
        .map(|(j, p)| {
            let want = labels.map(|l| l[j]);
            let mut best: Option<(f64, usize)> = None;
            for (i, y) in positions.iter().enumerate() {
                if want.is_some() && vertex_labels.map(|vl| vl[i]) != want {
                    continue;
                }
                let d = p - y;
                let dist = match metric {
                    Metric::Euclidean => d.norm_squared(),
                    Metric::Anisotropic { normals, eta } => {
                        let nd = normals[i].dot(&d);
                        d.norm_squared() + (eta - 1.0) * nd * nd
                    }
                };
                if best.is_none_or(|(b, _)| dist < b) {
                    best = Some((dist, i));
                }
            }
            best.map(|(_, i)| i).ok_or(Error::UnknownLabel {
                point: j,
                label: want.unwrap_or_default(),
            })
        })
        .collect()
}

/// Solves `(A^T A + Lambda^-1) alpha = A^T b` for the given matching.
/// Returns `alpha` and the regularised residual at `alpha`.
pub fn regularized_solve(
    model: &ShapeModel,
    points: &SparsePointSet,
    matches: &[usize],
) -> Result<(DVector<f64>, f64)> {
    let n = model.num_vertices();
    let phi = model.modes();
    let mut count = vec![0.0; n];
    let mut u = vec![Vec3::zeros(); n];
    for (p, &i) in points.points().iter().zip(matches) {
        count[i] += 1.0;
        u[i] += p - model.mean_vertex(i);
    }
    let mut ata = DMatrix::from_diagonal(&model.eigenvalues().map(|l| 1.0 / l));
    let mut scaled = DMatrix::zeros(n, model.num_modes());
    for a in 0..3 {
        let block = phi.rows(a * n, n);
        scaled.copy_from(&block);
        for (mut row, c) in scaled.row_iter_mut().zip(&count) {
            row *= *c;
        }
        ata += block.tr_mul(&scaled);
    }
    let atb = phi.tr_mul(&stack(&u));
    // positive definite because every eigenvalue is positive
    let chol = ata
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("regularised normal equations"))?;
    let alpha = chol.solve(&atb);
    let y = model.deform_stacked(&alpha)?;
    let residual: f64 = points
        .points()
        .iter()
        .zip(matches)
        .map(|(p, &i)| (Vec3::new(y[i], y[n + i], y[2 * n + i]) - p).norm_squared())
        .sum::<f64>()
        + alpha
            .iter()
            .zip(model.eigenvalues().iter())
            .map(|(a, l)| a * a / l)
            .sum::<f64>();
    Ok((alpha, residual))
}

/// Regularised ICP / anisotropic ICP starting from the mean shape.
pub fn icp_fit(model: &ShapeModel, points: &SparsePointSet, config: &IcpConfig) -> Result<FitResult> {
    if !(config.eta >= 1.0) || !config.eta.is_finite() {
        return Err(Error::invalid(format!("eta must be >= 1, got {}", config.eta)));
    }
    if !(config.tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    let method = match config.variant {
        IcpVariant::Icp => Method::Icp,
        IcpVariant::Aicp => Method::Aicp,
    };
    let start = Instant::now();
    let mut result = FitResult::new(method, config.eta);
    let mut alpha = DVector::zeros(model.num_modes());
    result.alpha_trace.push(alpha.clone());
    for iteration in 1..=config.max_iters {
        let pos = model.deform(&alpha)?;
        let matches = match config.variant {
            IcpVariant::Icp => nearest_neighbours(&pos, points, model.vertex_labels(), Metric::Euclidean)?,
            IcpVariant::Aicp => {
                let normals: Vec<Vec3> = vertex_normals(&pos, model.topology())
                    .into_iter()
                    .map(|n| n.unwrap_or_else(Vec3::zeros))
                    .collect();
                let metric = Metric::Anisotropic {
                    normals: &normals,
                    eta: config.eta,
                };
                nearest_neighbours(&pos, points, model.vertex_labels(), metric)?
            }
        };
        let (next, residual) = regularized_solve(model, points, &matches)?;
        let step = (&next - &alpha).norm();
        alpha = next;
        result.residual_trace.push(residual);
        result.wall_times.push(start.elapsed().as_secs_f64());
        result.alpha_trace.push(alpha.clone());
        result.iterations = iteration;
        if step < config.tol {
            result.converged = true;
            break;
        }
    }
    result.alpha = alpha;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_points(rng: &mut crate::Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect()
    }

    #[test]
    fn coincident_point_matches_its_vertex() {
        let pos = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let pts = SparsePointSet::unlabeled(vec![Vec3::y(), Vec3::x()]).unwrap();
        assert_eq!(nearest_neighbours(&pos, &pts, None, Metric::Euclidean).unwrap(), vec![2, 1]);
    }

    #[test]
    fn ties_go_to_smallest_index() {
        let pos = vec![Vec3::x(), -Vec3::x(), Vec3::x()];
        let pts = SparsePointSet::unlabeled(vec![Vec3::zeros()]).unwrap();
        assert_eq!(nearest_neighbours(&pos, &pts, None, Metric::Euclidean).unwrap(), vec![0]);
    }

    #[test]
    fn matches_brute_force_and_isotropic_metric() {
        let mut rng = crate::rng_from_seed(1);
        let pos = random_points(&mut rng, 50);
        let pts = SparsePointSet::unlabeled(random_points(&mut rng, 30)).unwrap();
        let nn = nearest_neighbours(&pos, &pts, None, Metric::Euclidean).unwrap();
        for (j, p) in pts.points().iter().enumerate() {
            let mut best = 0;
            for i in 1..pos.len() {
                if (p - pos[i]).norm() < (p - pos[best]).norm() {
                    best = i;
                }
            }
            assert_eq!(nn[j], best);
        }
        let normals: Vec<Vec3> = (0..50).map(|_| Vec3::new(rng.random(), 1.0, 0.0).normalize()).collect();
        let aniso = nearest_neighbours(&pos, &pts, None, Metric::Anisotropic { normals: &normals, eta: 1.0 }).unwrap();
        assert_eq!(aniso, nn);
    }

    #[test]
    fn permutation_of_points_permutes_matches() {
        let mut rng = crate::rng_from_seed(2);
        let pos = random_points(&mut rng, 40);
        let raw = random_points(&mut rng, 20);
        let nn = nearest_neighbours(&pos, &SparsePointSet::unlabeled(raw.clone()).unwrap(), None, Metric::Euclidean).unwrap();
        let rev: Vec<Vec3> = raw.iter().rev().copied().collect();
        let mut nn_rev = nearest_neighbours(&pos, &SparsePointSet::unlabeled(rev).unwrap(), None, Metric::Euclidean).unwrap();
        nn_rev.reverse();
        assert_eq!(nn, nn_rev);
    }

    #[test]
    fn labels_restrict_matching() {
        let pos = vec![Vec3::zeros(), Vec3::x() * 10.0];
        let pts = SparsePointSet::new(vec![Vec3::zeros()], Some(vec![5])).unwrap();
        assert_eq!(nearest_neighbours(&pos, &pts, Some(&[4, 5]), Metric::Euclidean).unwrap(), vec![1]);
    }

    fn small_model() -> ShapeModel {
        crate::synth::random_model(40, 4, &mut crate::rng_from_seed(3)).unwrap()
    }

    #[test]
    fn mean_vertices_give_zero_alpha() {
        let model = small_model();
        let pts = SparsePointSet::unlabeled(model.mean_positions()[..10].to_vec()).unwrap();
        let r = icp_fit(&model, &pts, &IcpConfig::new(IcpVariant::Icp, 1.0)).unwrap();
        assert!(r.alpha.amax() == 0.0);
        assert!(r.converged);
    }

    #[test]
    fn zero_iterations_return_mean() {
        let model = small_model();
        let pts = SparsePointSet::unlabeled(vec![Vec3::new(3.0, 0.0, 0.0)]).unwrap();
        let cfg = IcpConfig {
            max_iters: 0,
            ..IcpConfig::new(IcpVariant::Icp, 1.0)
        };
        let r = icp_fit(&model, &pts, &cfg).unwrap();
        assert_eq!(r.alpha, DVector::zeros(4));
    }

    #[test]
    fn known_correspondence_solve() {
        let model = small_model();
        let mut rng = crate::rng_from_seed(4);
        let truth = model.sample_alpha(&mut rng).into_inner();
        let pos = model.deform(&truth).unwrap();
        let pts = SparsePointSet::unlabeled(pos.clone()).unwrap();
        let matches: Vec<usize> = (0..pos.len()).collect();
        let (alpha, _) = regularized_solve(&model, &pts, &matches).unwrap();
        // with every vertex observed: (Phi^T Phi + Lambda^-1) alpha = Phi^T Phi alpha* = alpha*
        let lhs = DMatrix::identity(4, 4) + DMatrix::from_diagonal(&model.eigenvalues().map(|l| 1.0 / l));
        let oracle = lhs.lu().solve(&truth).unwrap();
        assert_relative_eq!(alpha, oracle, epsilon = 1e-10);
    }

    #[test]
    fn solve_minimises_regularised_residual() {
        let model = small_model();
        let mut rng = crate::rng_from_seed(5);
        let pts = SparsePointSet::unlabeled(
            model.mean_positions().iter().take(25).map(|p| p * 1.05).collect(),
        )
        .unwrap();
        let matches: Vec<usize> = (0..25).collect();
        let (alpha, best) = regularized_solve(&model, &pts, &matches).unwrap();
        let n = model.num_vertices();
        let cost = |a: &DVector<f64>| {
            let y = model.deform_stacked(a).unwrap();
            let data: f64 = pts
                .points()
                .iter()
                .zip(&matches)
                .map(|(p, &i)| (Vec3::new(y[i], y[n + i], y[2 * n + i]) - p).norm_squared())
                .sum();
            data + a.iter().zip(model.eigenvalues().iter()).map(|(a, l)| a * a / l).sum::<f64>()
        };
        assert_relative_eq!(cost(&alpha), best, max_relative = 1e-12);
        for _ in 0..20 {
            let other = &alpha + DVector::from_fn(4, |_, _| 1e-3 * (rng.random::<f64>() - 0.5));
            assert!(cost(&other) >= best);
        }
    }
}
