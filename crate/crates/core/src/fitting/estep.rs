use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::geometry::{SparsePointSet, Vec3};

/// Posterior probabilities `r[j, i]` that component `i` generated point `j`.
///
/// Rows correspond to points, columns to mixture components (model
/// vertices). Besides the matrix the E-step records
/// `sum_ji r_ji (ln pi_i - ln r_ji)`, the mixing-weight and entropy part of
/// the EM lower bound, so that the recorded objective is the full bound.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    matrix: DMatrix<f64>,
    entropy_term: f64,
}

impl Responsibilities {
    /// Wraps an explicit row-stochastic matrix (uniform mixing weights are
    /// assumed for the bound bookkeeping).
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.ncols();
        if n == 0 || matrix.nrows() == 0 {
            return Err(Error::invalid("responsibility matrix must be non-empty"));
        }
        let ln_pi = -(n as f64).ln();
        let mut entropy_term = 0.0;
        for (j, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::invalid(format!("responsibility row {j} has entries outside [0, 1]")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("responsibility row {j} sums to {s}")));
            }
            entropy_term += row
                .iter()
                .filter(|r| **r > 0.0)
                .map(|r| r * (ln_pi - r.ln()))
                .sum::<f64>();
        }
        Ok(Responsibilities {
            matrix,
            entropy_term,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn num_points(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_components(&self) -> usize {
        self.matrix.ncols()
    }

    pub(crate) fn entropy_term(&self) -> f64 {
        self.entropy_term
    }
}

/// Allowed components per point under the object-label constraint.
/// Returns, per point, the label to match (or `None` for unconstrained) and
/// the log of the uniform mixing weight over the allowed components.
fn label_constraints(
    points: &SparsePointSet,
    vertex_labels: Option<&[i64]>,
    n: usize,
) -> Result<Vec<(Option<i64>, f64)>> {
    match points.labels() {
        None => Ok(vec![(None, -(n as f64).ln()); points.len()]),
        Some(labels) => {
            points.check_labels(vertex_labels)?;
            let vl = vertex_labels.expect("checked above");
            if vl.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "vertex labels",
                    expected: n,
                    found: vl.len(),
                });
            }
            let mut counts: HashMap<i64, usize> = HashMap::new();
            for l in vl {
                *counts.entry(*l).or_default() += 1;
            }
            Ok(labels
                .iter()
                .map(|l| (Some(*l), -(counts[l] as f64).ln()))
                .collect())
        }
    }
}

/// Computes responsibilities
/// `r_ji ∝ exp(-(p_j - y_i)^T W_i (p_j - y_i) / (2 sigma^2))`, normalised
/// over components in log-space.
///
/// Normalising constants of the component densities are omitted: every
/// surface-aligned covariance has determinant `1/eta`, so they cancel.
/// When the points carry labels, components with a different vertex label
/// receive exactly zero and normalisation runs over the matching ones.
pub fn e_step(
    positions: &[Vec3],
    precisions: &[Matrix3<f64>],
    sigma2: f64,
    points: &SparsePointSet,
    vertex_labels: Option<&[i64]>,
) -> Result<Responsibilities> {
    let n = positions.len();
    if precisions.len() != n {
        return Err(Error::DimensionMismatch {
            what: "precision matrices",
            expected: n,
            found: precisions.len(),
        });
    }
    if n == 0 {
        return Err(Error::invalid("model has no vertices"));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::invalid(format!("sigma^2 must be positive and finite, got {sigma2}")));
    }
    let constraints = label_constraints(points, vertex_labels, n)?;
    let p = points.len();
    let scale = -0.5 / sigma2;
    let mut matrix = DMatrix::zeros(p, n);
    let mut logw = vec![f64::NEG_INFINITY; n];
    let mut shifted = vec![0.0; n];
    let mut entropy_term = 0.0;

    for (j, pt) in points.points().iter().enumerate() {
        let (label, ln_pi) = constraints[j];
        let mut max = f64::NEG_INFINITY;
        let mut any = false;
        for i in 0..n {
            if let Some(l) = label {
                if vertex_labels.map(|vl| vl[i]) != Some(l) {
                    logw[i] = f64::NEG_INFINITY;
                    continue;
                }
            }
            any = true;
            let d = pt - positions[i];
            let v = scale * d.dot(&(precisions[i] * d));
            logw[i] = v;
            if v > max {
                max = v;
            }
        }
        if !any {
            return Err(Error::UnknownLabel {
                point: j,
                label: label.unwrap_or_default(),
            });
        }
        if !max.is_finite() {
            return Err(Error::ResponsibilityUnderflow { point: j });
        }
        let mut sum = 0.0;
        for (e, v) in shifted.iter_mut().zip(&logw) {
            // exp(-inf) is exactly 0 for label-excluded components
            *e = (v - max).exp();
            sum += *e;
        }
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::ResponsibilityUnderflow { point: j });
        }
        let ln_sum = sum.ln();
        for i in 0..n {
            let r = shifted[i] / sum;
            if r > 0.0 {
                matrix[(j, i)] = r;
                entropy_term += r * (ln_pi - (logw[i] - max - ln_sum));
            }
        }
    }
    Ok(Responsibilities {
        matrix,
        entropy_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn eye(n: usize) -> Vec<Matrix3<f64>> {
        vec![Matrix3::identity(); n]
    }

    #[test]
    fn single_component_takes_everything() {
        let pts = SparsePointSet::unlabeled(vec![Vec3::new(5.0, 1.0, 0.0), Vec3::zeros()]).unwrap();
        let r = e_step(&[Vec3::x()], &eye(1), 0.1, &pts, None).unwrap();
        assert_eq!(r.matrix().as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn equidistant_components_split_evenly() {
        let pts = SparsePointSet::unlabeled(vec![Vec3::zeros()]).unwrap();
        let r = e_step(&[Vec3::x(), -Vec3::x()], &eye(2), 0.7, &pts, None).unwrap();
        assert_relative_eq!(r.matrix()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(r.matrix()[(0, 1)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn two_component_example() {
        let pts = SparsePointSet::unlabeled(vec![Vec3::new(0.25, 0.0, 0.0)]).unwrap();
        let r = e_step(&[Vec3::zeros(), Vec3::x()], &eye(2), 1.0, &pts, None).unwrap();
        let expected = 1.0 / (1.0 + (-0.25f64).exp());
        assert_relative_eq!(r.matrix()[(0, 0)], expected, epsilon = 1e-15);
        assert_relative_eq!(r.matrix()[(0, 0)], 0.562177, epsilon = 1e-6);
    }

    #[test]
    fn far_points_do_not_underflow() {
        // naive exponentiation would give 0/0 here
        let pts = SparsePointSet::unlabeled(vec![Vec3::new(1e4, 0.0, 0.0)]).unwrap();
        let r = e_step(&[Vec3::zeros(), Vec3::x()], &eye(2), 1e-3, &pts, None).unwrap();
        assert_eq!(r.matrix()[(0, 1)], 1.0);
        assert_eq!(r.matrix()[(0, 0)], 0.0);
    }

    #[test]
    fn labels_constrain_assignment() {
        let pos = [Vec3::zeros(), Vec3::x(), Vec3::y()];
        let pts = SparsePointSet::new(vec![Vec3::zeros(), Vec3::zeros()], Some(vec![1, 2])).unwrap();
        let vl = [1, 2, 2];
        let r = e_step(&pos, &eye(3), 1.0, &pts, Some(&vl)).unwrap();
        assert_eq!(r.matrix()[(0, 0)], 1.0);
        assert_eq!(r.matrix()[(0, 1)], 0.0);
        assert_eq!(r.matrix()[(1, 0)], 0.0);
        assert_relative_eq!(r.matrix()[(1, 1)], 0.5, epsilon = 1e-15);

        let bad = SparsePointSet::new(vec![Vec3::zeros()], Some(vec![7])).unwrap();
        assert!(matches!(
            e_step(&pos, &eye(3), 1.0, &bad, Some(&vl)),
            Err(Error::UnknownLabel { point: 0, label: 7 })
        ));
    }

    #[test]
    fn rejects_bad_sigma() {
        let pts = SparsePointSet::unlabeled(vec![Vec3::zeros()]).unwrap();
        assert!(e_step(&[Vec3::x()], &eye(1), 0.0, &pts, None).is_err());
        assert!(e_step(&[Vec3::x()], &eye(1), f64::NAN, &pts, None).is_err());
    }

    #[test]
    fn entropy_term_matches_direct_sum() {
        let mut rng = crate::rng_from_seed(8);
        let pos: Vec<Vec3> = (0..7).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let pts: Vec<Vec3> = (0..5).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let pts = SparsePointSet::unlabeled(pts).unwrap();
        let r = e_step(&pos, &eye(7), 0.3, &pts, None).unwrap();
        let again = Responsibilities::from_matrix(r.matrix().clone()).unwrap();
        assert_relative_eq!(r.entropy_term(), again.entropy_term(), epsilon = 1e-12);
    }

    #[test]
    fn from_matrix_validates_rows() {
        assert!(Responsibilities::from_matrix(DMatrix::from_row_slice(1, 2, &[0.5, 0.6])).is_err());
        assert!(Responsibilities::from_matrix(DMatrix::from_row_slice(1, 2, &[0.5, 0.5])).is_ok());
    }
}
