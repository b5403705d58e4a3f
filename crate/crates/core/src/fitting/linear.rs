use nalgebra::{DMatrix, DVector, Matrix3};

use super::objective::{Objective, Precisions, SufficientStats};
use super::FitState;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::model::{stack, ShapeModel};

/// Assembles `A = sigma^2 Lambda^-1 + sum_i m_i Phi_i^T W_i Phi_i` and
/// `b = sum_i Phi_i^T W_i (s_i - m_i mean_i)` from collapsed statistics.
///
/// The sum over vertices is `Phi^T B` with `B_i = m_i W_i Phi_i`, a single
/// dense product.
pub(crate) fn linear_system(
    model: &ShapeModel,
    stats: &SufficientStats,
    precisions: &[Matrix3<f64>],
    sigma2: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = model.num_vertices();
    let mm = model.num_modes();
    let phi = model.modes();

    let mut weighted = DMatrix::zeros(3 * n, mm);
    for c in 0..mm {
        let src = phi.column(c);
        let mut dst = weighted.column_mut(c);
        for i in 0..n {
            let m = stats.mass[i];
            if m == 0.0 {
                continue;
            }
            let v = precisions[i] * Vec3::new(src[i], src[n + i], src[2 * n + i]) * m;
            dst[i] = v.x;
            dst[n + i] = v.y;
            dst[2 * n + i] = v.z;
        }
    }
    let mut a_mat = phi.transpose() * weighted;
    for k in 0..mm {
        a_mat[(k, k)] += sigma2 / model.eigenvalues()[k];
    }
    // symmetrise away rounding differences before the Cholesky solve
    let a_mat = (&a_mat + a_mat.transpose()) * 0.5;

    let u: Vec<_> = (0..n)
        .map(|i| {
            let m = stats.mass[i];
            precisions[i] * ((stats.centroid[i] - model.mean_vertex(i)) * m)
        })
        .collect();
    let rhs = phi.tr_mul(&stack(&u));
    (a_mat, rhs)
}

pub(crate) fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let chol = a.cholesky().ok_or(Error::NotPositiveDefinite(what))?;
    Ok(chol.solve(b))
}

/// Maximiser of the concave surrogate (precisions frozen at the state's
/// `alpha`), found by solving `A alpha = b` with a Cholesky factorisation.
pub fn m_step_linear(state: &FitState) -> Result<DVector<f64>> {
    let (a, b) = linear_system(state.model, &state.stats, &state.precisions, state.sigma2);
    solve_spd(a, &b, "linear M-step system")
}

/// True iff the exact objective at `alpha_new` is not below the objective
/// at the state's `alpha` (relative tolerance `1e-12`). A candidate whose
/// designated normal triangles degenerate fails the check.
pub fn check_ascent(alpha_new: &DVector<f64>, state: &FitState) -> Result<bool> {
    let obj = Objective {
        model: state.model,
        stats: &state.stats,
        eta: state.eta,
        sigma2: state.sigma2,
    };
    let q_old = obj.value(&state.alpha, Precisions::Frozen(&state.precisions))?;
    let q_new = match obj.value(alpha_new, Precisions::Exact) {
        Ok(q) => q,
        Err(Error::DegenerateNormal { .. }) => return Ok(false),
        Err(e) => return Err(e),
    };
    Ok(q_new >= q_old - 1e-12 * q_old.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{e_step, q_value, NormalsAt};
    use crate::geometry::{MeshTopology, SparsePointSet, Vec3};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn state_for<'a>(
        model: &'a ShapeModel,
        points: &'a SparsePointSet,
        eta: f64,
        alpha: DVector<f64>,
        sigma2: f64,
    ) -> FitState<'a> {
        let pos = model.deform(&alpha).unwrap();
        let (w, _) = crate::geometry::precisions_with_fallback(&pos, model.topology(), eta);
        let resp = e_step(&pos, &w, sigma2, points, None).unwrap();
        FitState::new(model, points, eta, alpha, sigma2, resp).unwrap()
    }

    fn random_setup(seed: u64, eta: f64) -> (ShapeModel, SparsePointSet, DVector<f64>, f64) {
        let mut rng = crate::rng_from_seed(seed);
        let model = crate::synth::random_model(60, 5, &mut rng).unwrap();
        let truth = model.sample_alpha(&mut rng).into_inner();
        let pos = model.deform(&truth).unwrap();
        let pts: Vec<Vec3> = (0..20)
            .map(|_| pos[rng.random_range(0..pos.len())] + 0.05 * Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let alpha0 = model.sample_alpha(&mut rng).into_inner() * 0.5;
        let _ = eta;
        (model, SparsePointSet::unlabeled(pts).unwrap(), alpha0, 0.02)
    }

    #[test]
    fn linear_step_is_stationary_for_surrogate() {
        let eta = 8.0;
        let (model, pts, alpha0, s2) = random_setup(1, eta);
        let state = state_for(&model, &pts, eta, alpha0, s2);
        let a = m_step_linear(&state).unwrap();
        let obj = Objective {
            model: &model,
            stats: &state.stats,
            eta,
            sigma2: s2,
        };
        let (_, g) = obj.value_and_gradient(&a, Precisions::Frozen(&state.precisions)).unwrap();
        let (_, g0) = obj.value_and_gradient(&state.alpha, Precisions::Frozen(&state.precisions)).unwrap();
        assert!(g.amax() <= 1e-8 * g0.amax().max(1.0), "{}", g.amax());
    }

    #[test]
    fn isotropic_linear_step_matches_direct_formula() {
        let (model, pts, alpha0, s2) = random_setup(2, 1.0);
        let state = state_for(&model, &pts, 1.0, alpha0, s2);
        let a = m_step_linear(&state).unwrap();
        // (sigma^2 Lambda^-1 + sum_ij r Phi_i^T Phi_i) alpha = sum_ij r Phi_i^T (p_j - mean_i)
        let mm = model.num_modes();
        let mut lhs = DMatrix::from_diagonal(&model.eigenvalues().map(|l| s2 / l));
        let mut rhs = DVector::zeros(mm);
        let r = state.responsibilities.matrix();
        for (j, p) in pts.points().iter().enumerate() {
            for i in 0..model.num_vertices() {
                let phi = DMatrix::from_fn(3, mm, |c, m| model.vertex_mode(i, m)[c]);
                lhs += phi.tr_mul(&phi) * r[(j, i)];
                let d = p - model.mean_vertex(i);
                rhs += phi.tr_mul(&DVector::from_column_slice(d.as_slice())) * r[(j, i)];
            }
        }
        let oracle = lhs.lu().solve(&rhs).unwrap();
        assert_relative_eq!(a, oracle, epsilon = 1e-10 * oracle.amax().max(1.0));
    }

    #[test]
    fn single_point_least_squares_limit() {
        // one vertex observed by one point; huge prior variance
        let topo = MeshTopology::new(vec![[0, 1, 2], [0, 2, 1]], 3).unwrap();
        let pos = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let mut rng = crate::rng_from_seed(3);
        let g = DMatrix::from_fn(9, 2, |_, _| rng.random::<f64>() - 0.5);
        let q = g.qr().q();
        let model = ShapeModel::new(stack(&pos), q, DVector::from_vec(vec![1e12, 1e12]), topo, None).unwrap();
        let target = Vec3::new(0.3, -0.2, 0.4);
        let pts = SparsePointSet::unlabeled(vec![target]).unwrap();
        let resp = crate::fitting::Responsibilities::from_matrix(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0])).unwrap();
        let state = FitState::new(&model, &pts, 1.0, DVector::zeros(2), 1.0, resp).unwrap();
        let a = m_step_linear(&state).unwrap();
        let phi0 = DMatrix::from_fn(3, 2, |c, m| model.vertex_mode(0, m)[c]);
        let oracle = phi0.pseudo_inverse(1e-14).unwrap() * DVector::from_column_slice(target.as_slice());
        assert_relative_eq!(a, oracle, epsilon = 1e-8);
    }

    #[test]
    fn ascent_check_examples() {
        let (model, pts, alpha0, s2) = random_setup(4, 1.0);
        let state = state_for(&model, &pts, 1.0, alpha0.clone(), s2);
        assert!(check_ascent(&alpha0, &state).unwrap());
        let a = m_step_linear(&state).unwrap();
        assert!(check_ascent(&a, &state).unwrap());
        let q_old = q_value(&alpha0, s2, &state.responsibilities, &model, &pts, 1.0, NormalsAt::Candidate).unwrap();
        let q_new = q_value(&a, s2, &state.responsibilities, &model, &pts, 1.0, NormalsAt::Candidate).unwrap();
        assert!(q_new >= q_old);
    }
}
