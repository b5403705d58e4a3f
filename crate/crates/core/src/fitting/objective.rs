//! The MAP objective of the EM fit and its gradient.
//!
//! For fixed responsibilities the data term only depends on three
//! per-component statistics: the responsibility mass `m_i`, the weighted
//! centroid `c_i` and the centred scatter `S_i = sum_j r_ji (p_j - c_i)(p_j - c_i)^T`.
//! With `delta_i = c_i - y_i`,
//!
//! `sum_j r_ji (p_j - y_i)^T W_i (p_j - y_i) = tr(W_i S_i) + m_i delta_i^T W_i delta_i`,
//!
//! so evaluating the objective or its gradient costs `O(NM)` once the
//! statistics have been collected in `O(NP)`.

use nalgebra::{DVector, Matrix3};

use super::estep::Responsibilities;
use crate::error::{Error, Result};
use crate::geometry::{precisions_with_fallback, MeshTopology, SparsePointSet, Vec3};
use crate::model::{stack, unstack, ShapeModel};

/// Where the precision matrices of the data term are evaluated.
#[derive(Debug, Clone, Copy)]
pub enum NormalsAt<'a> {
    /// At the candidate `alpha` itself: the exact objective.
    Candidate,
    /// Frozen at the expansion point `alpha_n`: the concave surrogate.
    Expansion(&'a DVector<f64>),
}

/// Per-component sufficient statistics of a responsibility matrix.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    pub(crate) mass: Vec<f64>,
    pub(crate) centroid: Vec<Vec3>,
    pub(crate) scatter: Vec<Matrix3<f64>>,
    pub(crate) num_points: usize,
}

impl SufficientStats {
    pub fn new(resp: &Responsibilities, points: &SparsePointSet) -> Result<Self> {
        let r = resp.matrix();
        if r.nrows() != points.len() {
            return Err(Error::DimensionMismatch {
                what: "responsibility rows",
                expected: points.len(),
                found: r.nrows(),
            });
        }
        let pts = points.points();
        let n = r.ncols();
        let mut mass = vec![0.0; n];
        let mut centroid = vec![Vec3::zeros(); n];
        let mut scatter = vec![Matrix3::zeros(); n];
        for i in 0..n {
            let col = r.column(i);
            let mut m = 0.0;
            let mut s = Vec3::zeros();
            for (rj, p) in col.iter().zip(pts) {
                m += rj;
                s += p * *rj;
            }
            if m > 0.0 {
                let c = s / m;
                let mut sc = Matrix3::zeros();
                for (rj, p) in col.iter().zip(pts) {
                    if *rj > 0.0 {
                        let d = p - c;
                        sc += (d * d.transpose()) * *rj;
                    }
                }
                centroid[i] = c;
                scatter[i] = sc;
            }
            mass[i] = m;
        }
        Ok(SufficientStats {
            mass,
            centroid,
            scatter,
            num_points: pts.len(),
        })
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn centroids(&self) -> &[Vec3] {
        &self.centroid
    }

    /// `sum_j r_ji (p_j - y)^T W (p_j - y)` for component `i`.
    #[inline]
    pub(crate) fn energy(&self, i: usize, y: &Vec3, w: &Matrix3<f64>) -> f64 {
        let m = self.mass[i];
        if m == 0.0 {
            return 0.0;
        }
        let d = self.centroid[i] - y;
        (w.component_mul(&self.scatter[i])).sum() + m * d.dot(&(w * d))
    }
}

/// Unnormalised normal `b_i` of vertex `i` and its norm, or `None` when the
/// designated triangle is degenerate.
#[inline]
fn raw_normal(pos: &[Vec3], topo: &MeshTopology, i: usize) -> Option<(Vec3, Vec3, Vec3, f64)> {
    let (i2, i3) = topo.normal_neighbors(i);
    let v2 = pos[i2] - pos[i];
    let v3 = pos[i3] - pos[i];
    let b = v2.cross(&v3);
    let max_edge2 = v2
        .norm_squared()
        .max(v3.norm_squared())
        .max((pos[i3] - pos[i2]).norm_squared());
    let nb = b.norm();
    if max_edge2 == 0.0 || !(nb >= 1e-12 * max_edge2) {
        return None;
    }
    Some((b / nb, v2, v3, nb))
}

/// Strict precisions at the given positions; degenerate normals are errors.
pub(crate) fn strict_precisions(
    pos: &[Vec3],
    topo: &MeshTopology,
    eta: f64,
) -> Result<Vec<Matrix3<f64>>> {
    (0..pos.len())
        .map(|i| {
            raw_normal(pos, topo, i)
                .map(|(n, ..)| Matrix3::identity() + (eta - 1.0) * n * n.transpose())
                .ok_or(Error::DegenerateNormal { vertex: i })
        })
        .collect()
}

/// Objective `Q(alpha)` for fixed responsibilities (through their
/// statistics) and fixed `sigma^2`, with the additive constant set to 0.
pub(crate) struct Objective<'a> {
    pub model: &'a ShapeModel,
    pub stats: &'a SufficientStats,
    pub eta: f64,
    pub sigma2: f64,
}

/// Precisions used by [`Objective`]: re-evaluated at the candidate or frozen.
#[derive(Clone, Copy)]
pub(crate) enum Precisions<'a> {
    Exact,
    Frozen(&'a [Matrix3<f64>]),
}

impl Objective<'_> {
    fn check(&self, alpha: &DVector<f64>) -> Result<()> {
        if alpha.len() != self.model.num_modes() {
            return Err(Error::DimensionMismatch {
                what: "deformation parameters",
                expected: self.model.num_modes(),
                found: alpha.len(),
            });
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::invalid(format!("sigma^2 must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }

    fn prior_and_scale(&self, alpha: &DVector<f64>) -> f64 {
        let prior: f64 = alpha
            .iter()
            .zip(self.model.eigenvalues().iter())
            .map(|(a, l)| a * a / l)
            .sum();
        -0.5 * prior - 1.5 * self.stats.num_points as f64 * self.sigma2.ln()
    }

    /// Weighted residual energy `sum_ij r_ji d^T W_i d` at the given positions.
    pub fn data_energy(&self, pos: &[Vec3], prec: Precisions) -> Result<f64> {
        let topo = self.model.topology();
        let mut e = 0.0;
        for (i, y) in pos.iter().enumerate() {
            e += match prec {
                Precisions::Frozen(w) => self.stats.energy(i, y, &w[i]),
                Precisions::Exact => {
                    if self.stats.mass[i] == 0.0 {
                        continue;
                    }
                    let (n, ..) = raw_normal(pos, topo, i).ok_or(Error::DegenerateNormal { vertex: i })?;
                    let w = Matrix3::identity() + (self.eta - 1.0) * n * n.transpose();
                    self.stats.energy(i, y, &w)
                }
            };
        }
        Ok(e)
    }

    /// Objective with frozen precisions at already deformed positions.
    pub fn frozen_value(&self, alpha: &DVector<f64>, pos: &[Vec3], w: &[Matrix3<f64>]) -> f64 {
        let e: f64 = pos
            .iter()
            .enumerate()
            .map(|(i, y)| self.stats.energy(i, y, &w[i]))
            .sum();
        self.prior_and_scale(alpha) - 0.5 / self.sigma2 * e
    }

    pub fn value(&self, alpha: &DVector<f64>, prec: Precisions) -> Result<f64> {
        self.check(alpha)?;
        let pos = unstack(&self.model.deform_stacked(alpha)?);
        Ok(self.prior_and_scale(alpha) - 0.5 / self.sigma2 * self.data_energy(&pos, prec)?)
    }

    /// Value and gradient with respect to `alpha`.
    ///
    /// In exact mode the gradient includes the dependence of every `W_i`
    /// on `alpha` through the normal `n_i = b_i / |b_i|`,
    /// `b_i = (y_i2 - y_i) x (y_i3 - y_i)`. It is accumulated in adjoint
    /// form: first the derivative of the data energy with respect to every
    /// vertex position (`G`), then `Phi^T vec(G)`.
    pub fn value_and_gradient(
        &self,
        alpha: &DVector<f64>,
        prec: Precisions,
    ) -> Result<(f64, DVector<f64>)> {
        self.check(alpha)?;
        let model = self.model;
        let topo = model.topology();
        let pos = unstack(&model.deform_stacked(alpha)?);
        let n = pos.len();
        let c = 2.0 * (self.eta - 1.0);
        let mut grad_pos = vec![Vec3::zeros(); n];
        let mut energy = 0.0;

        for i in 0..n {
            let m = self.stats.mass[i];
            if m == 0.0 {
                continue;
            }
            let delta = self.stats.centroid[i] - pos[i];
            match prec {
                Precisions::Frozen(w) => {
                    energy += self.stats.energy(i, &pos[i], &w[i]);
                    grad_pos[i] -= 2.0 * m * (w[i] * delta);
                }
                Precisions::Exact => {
                    let (nrm, v2, v3, nb) =
                        raw_normal(&pos, topo, i).ok_or(Error::DegenerateNormal { vertex: i })?;
                    let w = Matrix3::identity() + (self.eta - 1.0) * nrm * nrm.transpose();
                    energy += self.stats.energy(i, &pos[i], &w);
                    grad_pos[i] -= 2.0 * m * (w * delta);
                    if c != 0.0 {
                        // derivative of the energy with respect to the unit normal / (eta - 1) / 2
                        let g = self.stats.scatter[i] * nrm + delta * (m * nrm.dot(&delta));
                        let gt = (g - nrm * nrm.dot(&g)) / nb;
                        let a2 = v3.cross(&gt) * c;
                        let a3 = gt.cross(&v2) * c;
                        let (i2, i3) = topo.normal_neighbors(i);
                        grad_pos[i2] += a2;
                        grad_pos[i3] += a3;
                        grad_pos[i] -= a2 + a3;
                    }
                }
            }
        }

        let value = self.prior_and_scale(alpha) - 0.5 / self.sigma2 * energy;
        let prior_grad = alpha.component_div(model.eigenvalues());
        let data_grad = model.modes().tr_mul(&stack(&grad_pos));
        Ok((value, -prior_grad - data_grad * (0.5 / self.sigma2)))
    }
}

/// `sigma^2 = 1/(3NP) sum_ij |p_j - mean_i|^2`.
pub fn init_sigma2(model: &ShapeModel, points: &SparsePointSet) -> f64 {
    let mean = model.mean_positions();
    let total: f64 = points
        .points()
        .iter()
        .map(|p| mean.iter().map(|x| (p - x).norm_squared()).sum::<f64>())
        .sum();
    total / (3.0 * mean.len() as f64 * points.len() as f64)
}

fn precisions_for(
    model: &ShapeModel,
    eta: f64,
    normals_at: NormalsAt,
) -> Result<Option<Vec<Matrix3<f64>>>> {
    match normals_at {
        NormalsAt::Candidate => Ok(None),
        NormalsAt::Expansion(a0) => {
            let pos0 = model.deform(a0)?;
            Ok(Some(strict_precisions(&pos0, model.topology(), eta)?))
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 1.0) || !eta.is_finite() {
        return Err(Error::invalid(format!("anisotropy weight must be >= 1, got {eta}")));
    }
    Ok(())
}

/// The MAP objective
/// `-1/2 alpha^T Lambda^-1 alpha - (3P/2) ln sigma^2 - 1/(2 sigma^2) sum_ij r_ji d_ji^T W_i d_ji`
/// (additive constant 0), with `W_i` evaluated where `normals_at` says.
pub fn q_value(
    alpha: &DVector<f64>,
    sigma2: f64,
    resp: &Responsibilities,
    model: &ShapeModel,
    points: &SparsePointSet,
    eta: f64,
    normals_at: NormalsAt,
) -> Result<f64> {
    check_eta(eta)?;
    let stats = SufficientStats::new(resp, points)?;
    let obj = Objective {
        model,
        stats: &stats,
        eta,
        sigma2,
    };
    match precisions_for(model, eta, normals_at)? {
        None => obj.value(alpha, Precisions::Exact),
        Some(w) => obj.value(alpha, Precisions::Frozen(&w)),
    }
}

/// Gradient of the exact objective with respect to `alpha`.
pub fn q_gradient(
    alpha: &DVector<f64>,
    sigma2: f64,
    resp: &Responsibilities,
    model: &ShapeModel,
    points: &SparsePointSet,
    eta: f64,
) -> Result<DVector<f64>> {
    check_eta(eta)?;
    let stats = SufficientStats::new(resp, points)?;
    let obj = Objective {
        model,
        stats: &stats,
        eta,
        sigma2,
    };
    Ok(obj.value_and_gradient(alpha, Precisions::Exact)?.1)
}

/// `sigma^2 = 1/(3P) sum_ij r_ji d_ji^T W_i(alpha) d_ji`, clamped at `floor`.
/// Vertices with a degenerate designated triangle use `W_i = I`.
pub fn sigma2_update(
    alpha: &DVector<f64>,
    resp: &Responsibilities,
    model: &ShapeModel,
    points: &SparsePointSet,
    eta: f64,
    floor: f64,
) -> Result<f64> {
    check_eta(eta)?;
    let stats = SufficientStats::new(resp, points)?;
    let pos = model.deform(alpha)?;
    let (w, _) = precisions_with_fallback(&pos, model.topology(), eta);
    Ok(sigma2_from_stats(&stats, &pos, &w, floor))
}

pub(crate) fn sigma2_from_stats(
    stats: &SufficientStats,
    pos: &[Vec3],
    w: &[Matrix3<f64>],
    floor: f64,
) -> f64 {
    let e: f64 = pos
        .iter()
        .enumerate()
        .map(|(i, y)| stats.energy(i, y, &w[i]))
        .sum();
    (e / (3.0 * stats.num_points as f64)).max(floor)
}

/// The parts of the EM lower bound that do not depend on `alpha` or
/// `sigma^2`: mixing weights and entropy of the responsibilities, the
/// Gaussian normalisers (`det C_i = 1/eta`) and the prior normaliser.
pub(crate) fn bound_constant(model: &ShapeModel, resp: &Responsibilities, eta: f64) -> f64 {
    let p = resp.num_points() as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    resp.entropy_term() - 1.5 * p * two_pi.ln() + 0.5 * p * eta.ln()
        - 0.5
            * model
                .eigenvalues()
                .iter()
                .map(|l| (two_pi * l).ln())
                .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::e_step;
    use crate::geometry::{skew, vertex_normal};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, Matrix3xX};
    use rand::Rng;

    struct Instance {
        model: ShapeModel,
        points: SparsePointSet,
        resp: Responsibilities,
        alpha: DVector<f64>,
        sigma2: f64,
    }

    fn instance(seed: u64, n: usize, m: usize, p: usize, eta: f64) -> Instance {
        let mut rng = crate::rng_from_seed(seed);
        let model = crate::synth::random_model(n, m, &mut rng).unwrap();
        let alpha = model.sample_alpha(&mut rng).into_inner();
        let pos = model.deform(&alpha).unwrap();
        let pts: Vec<Vec3> = (0..p)
            .map(|_| pos[rng.random_range(0..pos.len())] + 0.1 * Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let points = SparsePointSet::unlabeled(pts).unwrap();
        let sigma2 = 0.01 + 0.05 * rng.random::<f64>();
        let (w, _) = precisions_with_fallback(&pos, model.topology(), eta);
        let resp = e_step(&pos, &w, sigma2, &points, None).unwrap();
        let alpha0 = model.sample_alpha(&mut rng).into_inner() * 0.5;
        Instance {
            model,
            points,
            resp,
            alpha: alpha0,
            sigma2,
        }
    }

    /// Literal triple-loop evaluation of the objective.
    fn q_brute(inst: &Instance, alpha: &DVector<f64>, w_alpha: &DVector<f64>, eta: f64) -> f64 {
        let model = &inst.model;
        let pos = model.deform(alpha).unwrap();
        let wpos = model.deform(w_alpha).unwrap();
        let mut data = 0.0;
        for (j, p) in inst.points.points().iter().enumerate() {
            for i in 0..model.num_vertices() {
                let n = vertex_normal(&wpos, model.topology(), i).unwrap();
                let w = crate::geometry::aniso_precision(&n, eta).unwrap();
                let d = p - pos[i];
                data += inst.resp.matrix()[(j, i)] * (d.transpose() * w * d)[(0, 0)];
            }
        }
        let lam = model.eigenvalues();
        let prior: f64 = (0..alpha.len()).map(|m| alpha[m] * alpha[m] / lam[m]).sum();
        -0.5 * prior - 1.5 * inst.points.len() as f64 * inst.sigma2.ln() - data / (2.0 * inst.sigma2)
    }

    /// Per-mode gradient built from the explicit derivative chain
    /// db -> dn -> dW with skew-symmetric matrices.
    fn gradient_literal(inst: &Instance, alpha: &DVector<f64>, eta: f64) -> DVector<f64> {
        let model = &inst.model;
        let pos = model.deform(alpha).unwrap();
        let topo = model.topology();
        let lam = model.eigenvalues();
        let mm = model.num_modes();
        let mut grad = DVector::zeros(mm);
        for m in 0..mm {
            let mut acc = 0.0;
            for i in 0..model.num_vertices() {
                let (i2, i3) = topo.normal_neighbors(i);
                let b = (pos[i2] - pos[i]).cross(&(pos[i3] - pos[i]));
                let nb = b.norm();
                let n = b / nb;
                let w = Matrix3::identity() + (eta - 1.0) * n * n.transpose();
                let phi = |v: usize| model.vertex_mode(v, m);
                let db = skew(&(phi(i2) - phi(i))) * (pos[i3] - pos[i])
                    + skew(&(pos[i2] - pos[i])) * (phi(i3) - phi(i));
                let dnb = n.dot(&db);
                let dn = (db * nb - b * dnb) / (nb * nb);
                let dw = (eta - 1.0) * (dn * n.transpose() + n * dn.transpose());
                for (j, p) in inst.points.points().iter().enumerate() {
                    let r = inst.resp.matrix()[(j, i)];
                    let d = p - pos[i];
                    acc += r * (d.dot(&(dw * d)) - 2.0 * phi(i).dot(&(w * d)));
                }
            }
            grad[m] = -alpha[m] / lam[m] - acc / (2.0 * inst.sigma2);
        }
        grad
    }

    #[test]
    fn init_sigma2_examples() {
        let topo = MeshTopology::new(vec![[0, 1, 2]], 3).unwrap();
        let pos = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let mut modes = DMatrix::zeros(9, 1);
        modes[(0, 0)] = 1.0;
        let model = ShapeModel::new(stack(&pos), modes, DVector::from_element(1, 1.0), topo, None).unwrap();
        let pts = SparsePointSet::unlabeled(vec![Vec3::new(0.0, 0.0, 2.0)]).unwrap();
        // distances^2 from (0,0,2): 4, 5, 5
        assert_relative_eq!(init_sigma2(&model, &pts), 14.0 / 9.0, epsilon = 1e-15);

        let inst = instance(2, 30, 3, 7, 1.0);
        let mean = inst.model.mean_positions();
        let mut brute = 0.0;
        for p in inst.points.points() {
            for x in &mean {
                brute += (p - x).norm_squared();
            }
        }
        brute /= 3.0 * mean.len() as f64 * inst.points.len() as f64;
        assert_relative_eq!(init_sigma2(&inst.model, &inst.points), brute, epsilon = 1e-12);
    }

    #[test]
    fn q_matches_triple_loop() {
        for (seed, eta) in [(1, 1.0), (2, 4.0), (3, 64.0)] {
            let inst = instance(seed, 40, 4, 9, eta);
            let a0 = inst.alpha.clone();
            let a1 = &a0 * 0.3;
            let exact = q_value(&a1, inst.sigma2, &inst.resp, &inst.model, &inst.points, eta, NormalsAt::Candidate).unwrap();
            assert_relative_eq!(exact, q_brute(&inst, &a1, &a1, eta), max_relative = 1e-10);
            let frozen = q_value(&a1, inst.sigma2, &inst.resp, &inst.model, &inst.points, eta, NormalsAt::Expansion(&a0)).unwrap();
            assert_relative_eq!(frozen, q_brute(&inst, &a1, &a0, eta), max_relative = 1e-10);
        }
    }

    #[test]
    fn exact_and_frozen_agree_at_expansion_point_and_when_isotropic() {
        let inst = instance(4, 50, 5, 10, 8.0);
        let a = &inst.alpha;
        let args = (inst.sigma2, &inst.resp, &inst.model, &inst.points);
        let q = q_value(a, args.0, args.1, args.2, args.3, 8.0, NormalsAt::Candidate).unwrap();
        let qt = q_value(a, args.0, args.1, args.2, args.3, 8.0, NormalsAt::Expansion(a)).unwrap();
        assert_eq!(q, qt);
        let other = a * -0.7;
        let q1 = q_value(&other, args.0, args.1, args.2, args.3, 1.0, NormalsAt::Candidate).unwrap();
        let qt1 = q_value(&other, args.0, args.1, args.2, args.3, 1.0, NormalsAt::Expansion(a)).unwrap();
        assert_eq!(q1, qt1);
    }

    #[test]
    fn gradient_matches_literal_derivative_chain() {
        for (seed, eta) in [(5, 2.0), (6, 8.0), (7, 64.0)] {
            let inst = instance(seed, 30, 3, 8, eta);
            let g = q_gradient(&inst.alpha, inst.sigma2, &inst.resp, &inst.model, &inst.points, eta).unwrap();
            let oracle = gradient_literal(&inst, &inst.alpha, eta);
            assert_relative_eq!(g, oracle, max_relative = 1e-9, epsilon = 1e-9 * oracle.amax());
        }
    }

    #[test]
    fn isotropic_gradient_oracle() {
        let inst = instance(9, 40, 4, 12, 1.0);
        let g = q_gradient(&inst.alpha, inst.sigma2, &inst.resp, &inst.model, &inst.points, 1.0).unwrap();
        // -Lambda^-1 alpha + 1/sigma^2 sum_ij r_ji Phi_i^T (p_j - y_i)
        let pos = inst.model.deform(&inst.alpha).unwrap();
        let mut oracle = -inst.alpha.component_div(inst.model.eigenvalues());
        for (j, p) in inst.points.points().iter().enumerate() {
            for (i, y) in pos.iter().enumerate() {
                let phi = Matrix3xX::from_fn(inst.model.num_modes(), |r, m| {
                    inst.model.vertex_mode(i, m)[r]
                });
                oracle += phi.tr_mul(&(p - y)) * (inst.resp.matrix()[(j, i)] / inst.sigma2);
            }
        }
        assert_relative_eq!(g, oracle, max_relative = 1e-9, epsilon = 1e-9 * oracle.amax());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, eta) in [(10, 1.0), (11, 4.0), (12, 64.0)] {
            let inst = instance(seed, 60, 6, 15, eta);
            let g = q_gradient(&inst.alpha, inst.sigma2, &inst.resp, &inst.model, &inst.points, eta).unwrap();
            let q = |a: &DVector<f64>| {
                q_value(a, inst.sigma2, &inst.resp, &inst.model, &inst.points, eta, NormalsAt::Candidate).unwrap()
            };
            for m in 0..g.len() {
                let h = 1e-6 * (1.0 + inst.alpha[m].abs());
                let mut ap = inst.alpha.clone();
                let mut am = inst.alpha.clone();
                ap[m] += h;
                am[m] -= h;
                let fd = (q(&ap) - q(&am)) / (2.0 * h);
                assert!((fd - g[m]).abs() <= 1e-5 * g.amax(), "mode {m}: fd {fd} vs {}", g[m]);
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_exact_fit_without_prior_pull() {
        let topo = MeshTopology::new(vec![[0, 1, 2], [0, 2, 1]], 3).unwrap();
        let pos = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let mut modes = DMatrix::zeros(9, 1);
        modes[(0, 0)] = 1.0;
        let model = ShapeModel::new(stack(&pos), modes, DVector::from_element(1, 1.0), topo, None).unwrap();
        let pts = SparsePointSet::unlabeled(pos.clone()).unwrap();
        let resp = Responsibilities::from_matrix(DMatrix::identity(3, 3)).unwrap();
        let g = q_gradient(&DVector::zeros(1), 0.5, &resp, &model, &pts, 4.0).unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn sigma2_update_examples() {
        let topo = MeshTopology::new(vec![[0, 1, 2], [0, 2, 1]], 3).unwrap();
        let pos = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let mut modes = DMatrix::zeros(9, 1);
        modes[(0, 0)] = 1.0;
        let model = ShapeModel::new(stack(&pos), modes, DVector::from_element(1, 1.0), topo, None).unwrap();
        let one_hot = Responsibilities::from_matrix(DMatrix::identity(3, 3)).unwrap();
        let exact = SparsePointSet::unlabeled(pos.clone()).unwrap();
        let zero = DVector::zeros(1);
        assert_eq!(sigma2_update(&zero, &one_hot, &model, &exact, 4.0, 1e-9).unwrap(), 1e-9);

        let moved: Vec<Vec3> = pos.iter().map(|p| p + Vec3::new(0.1, 0.2, 0.0)).collect();
        let moved = SparsePointSet::unlabeled(moved).unwrap();
        let s = sigma2_update(&zero, &one_hot, &model, &moved, 1.0, 1e-12).unwrap();
        assert_relative_eq!(s, 0.05 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn sigma2_update_matches_double_loop() {
        let eta = 4.0;
        let inst = instance(13, 40, 3, 11, eta);
        let s = sigma2_update(&inst.alpha, &inst.resp, &inst.model, &inst.points, eta, 0.0).unwrap();
        let pos = inst.model.deform(&inst.alpha).unwrap();
        let mut acc = 0.0;
        for (j, p) in inst.points.points().iter().enumerate() {
            for (i, y) in pos.iter().enumerate() {
                let n = vertex_normal(&pos, inst.model.topology(), i).unwrap();
                let w = crate::geometry::aniso_precision(&n, eta).unwrap();
                acc += inst.resp.matrix()[(j, i)] * (p - y).dot(&(w * (p - y)));
            }
        }
        assert_relative_eq!(s, acc / (3.0 * inst.points.len() as f64), max_relative = 1e-11);
    }
}
