//! EM fitting of a shape model to sparse points with surface-aligned
//! Gaussian components.
//!
//! Each outer iteration runs an E-step, updates `alpha` according to the
//! chosen [`Variant`], re-evaluates the normals and precisions at the new
//! shape and finally updates `sigma^2`.

mod bfgs;
mod estep;
mod linear;
mod objective;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix3};

pub use bfgs::{minimize, BfgsOptions, BfgsReport};
pub use estep::{e_step, Responsibilities};
pub use linear::{check_ascent, m_step_linear};
pub use objective::{init_sigma2, q_gradient, q_value, sigma2_update, NormalsAt, SufficientStats};

use crate::error::{Error, Result};
use crate::geometry::{bounding_box_diagonal, precisions_with_fallback, SparsePointSet, Vec3};
use crate::model::ShapeModel;
use crate::result::{FitResult, Method};
use objective::{bound_constant, sigma2_from_stats, Objective, Precisions};

/// Which `alpha`-update the EM loop uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Isotropic components (`eta` forced to 1), linear update.
    Iso,
    /// Linear update of the surrogate with frozen precisions.
    Aniso,
    /// As `Aniso`, but the step is checked against the exact objective and
    /// replaced by one quasi-Newton step when it fails to ascend.
    AnisoC,
    /// One quasi-Newton step on the exact objective.
    Gem,
    /// Full quasi-Newton maximisation of the exact objective.
    Ecm,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Iso, Variant::Aniso, Variant::AnisoC, Variant::Gem, Variant::Ecm];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Iso => "ISO",
            Variant::Aniso => "ANISO",
            Variant::AnisoC => "ANISOc",
            Variant::Gem => "GEM",
            Variant::Ecm => "ECM",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iso" => Ok(Variant::Iso),
            "aniso" => Ok(Variant::Aniso),
            "anisoc" => Ok(Variant::AnisoC),
            "gem" => Ok(Variant::Gem),
            "ecm" => Ok(Variant::Ecm),
            _ => Err(Error::invalid(format!(
                "unknown variant {s:?} (expected iso, aniso, anisoc, gem or ecm)"
            ))),
        }
    }
}

/// Initial inverse Hessian of the quasi-Newton M-steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialHessian {
    /// `I / (1 + |grad|)`.
    ScaledIdentity,
    /// The inverse Hessian of the frozen-precision surrogate,
    /// `sigma^2 A^-1`, which is exact when `eta = 1`.
    Surrogate,
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub variant: Variant,
    pub eta: f64,
    pub max_outer_iters: usize,
    /// Stop when `|Q_t - Q_{t-1}| < outer_tol * |Q_t|`.
    pub outer_tol: f64,
    pub qn_max_iters: usize,
    pub qn_grad_tol: f64,
    pub qn_initial_hessian: InitialHessian,
    /// Lower bound for `sigma^2`; `None` means `1e-12` times the squared
    /// bounding-box diagonal of the mean shape.
    pub sigma2_floor: Option<f64>,
    /// Optional wall-clock budget for the whole fit.
    pub time_budget: Option<Duration>,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(variant: Variant, eta: f64) -> Self {
        FitConfig {
            variant,
            eta,
            max_outer_iters: 200,
            outer_tol: 1e-8,
            qn_max_iters: 50,
            qn_grad_tol: 1e-6,
            qn_initial_hessian: InitialHessian::ScaledIdentity,
            sigma2_floor: None,
            time_budget: None,
            seed: 0,
        }
    }

    /// The anisotropy weight actually used (`ISO` always uses 1).
    pub fn effective_eta(&self) -> f64 {
        if self.variant == Variant::Iso {
            1.0
        } else {
            self.eta
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 1.0) || !self.eta.is_finite() {
            return Err(Error::invalid(format!("eta must be >= 1, got {}", self.eta)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::invalid("max_outer_iters must be positive"));
        }
        for (name, v) in [("outer_tol", self.outer_tol), ("qn_grad_tol", self.qn_grad_tol)] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.qn_max_iters == 0 {
            return Err(Error::invalid("qn_max_iters must be positive"));
        }
        if let Some(f) = self.sigma2_floor {
            if !(f > 0.0) {
                return Err(Error::invalid(format!("sigma2_floor must be positive, got {f}")));
            }
        }
        Ok(())
    }
}

/// Everything an M-step needs: the current parameters, the responsibilities
/// of the last E-step (with their collapsed statistics) and the precision
/// matrices at the current `alpha`.
#[derive(Debug, Clone)]
pub struct FitState<'a> {
    pub model: &'a ShapeModel,
    pub points: &'a SparsePointSet,
    pub eta: f64,
    pub alpha: DVector<f64>,
    pub sigma2: f64,
    pub responsibilities: Responsibilities,
    pub precisions: Vec<Matrix3<f64>>,
    pub(crate) stats: SufficientStats,
}

impl<'a> FitState<'a> {
    /// Builds a state; precisions are evaluated at `alpha`, with the
    /// identity substituted for degenerate normal triangles.
    pub fn new(
        model: &'a ShapeModel,
        points: &'a SparsePointSet,
        eta: f64,
        alpha: DVector<f64>,
        sigma2: f64,
        responsibilities: Responsibilities,
    ) -> Result<Self> {
        let pos = model.deform(&alpha)?;
        let (precisions, _) = precisions_with_fallback(&pos, model.topology(), eta);
        let stats = SufficientStats::new(&responsibilities, points)?;
        if responsibilities.num_components() != model.num_vertices() {
            return Err(Error::DimensionMismatch {
                what: "responsibility columns",
                expected: model.num_vertices(),
                found: responsibilities.num_components(),
            });
        }
        Ok(FitState {
            model,
            points,
            eta,
            alpha,
            sigma2,
            responsibilities,
            precisions,
            stats,
        })
    }

    fn objective(&self) -> Objective<'_> {
        Objective {
            model: self.model,
            stats: &self.stats,
            eta: self.eta,
            sigma2: self.sigma2,
        }
    }
}

/// Full quasi-Newton maximisation or a single step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QnMode {
    Full,
    SingleStep,
}

#[derive(Debug, Clone)]
pub struct QnOutcome {
    pub alpha: DVector<f64>,
    /// The line search failed; `alpha` is the last accepted iterate
    /// (the state's `alpha` when no step was accepted).
    pub stalled: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

/// BFGS on the exact objective (precisions follow `alpha`), starting at the
/// state's `alpha`. The returned `alpha` never has a lower objective.
pub fn m_step_quasi_newton(
    state: &FitState,
    mode: QnMode,
    opts: &BfgsOptions,
    initial: InitialHessian,
) -> Result<QnOutcome> {
    let obj = state.objective();
    let h0 = match initial {
        InitialHessian::ScaledIdentity => None,
        InitialHessian::Surrogate => {
            let (a, _) = linear::linear_system(state.model, &state.stats, &state.precisions, state.sigma2);
            let chol = a.cholesky().ok_or(Error::NotPositiveDefinite("surrogate Hessian"))?;
            Some(chol.inverse() * state.sigma2)
        }
    };
    let q0 = obj.value(&state.alpha, Precisions::Frozen(&state.precisions))?;
    let neg_q = |a: &DVector<f64>| match obj.value_and_gradient(a, Precisions::Exact) {
        Ok((q, g)) => Some((-q, -g)),
        Err(_) => None,
    };
    let report = bfgs::minimize(neg_q, &state.alpha, h0, mode == QnMode::SingleStep, opts);
    let Some(report) = report else {
        // the exact objective is undefined at the start (degenerate normal)
        return Ok(QnOutcome {
            alpha: state.alpha.clone(),
            stalled: true,
            iterations: 0,
            evaluations: 1,
        });
    };
    let ascended = -report.f >= q0 - 1e-12 * q0.abs();
    Ok(QnOutcome {
        alpha: if ascended { report.x } else { state.alpha.clone() },
        stalled: report.stalled || !ascended,
        iterations: report.iterations,
        evaluations: report.evaluations,
    })
}

fn default_sigma2_floor(model: &ShapeModel) -> f64 {
    let d = bounding_box_diagonal(&model.mean_positions());
    (1e-12 * d * d).max(f64::MIN_POSITIVE)
}

fn precisions_warn(model: &ShapeModel, pos: &[Vec3], eta: f64, iteration: usize) -> Vec<Matrix3<f64>> {
    let (w, degenerate) = precisions_with_fallback(pos, model.topology(), eta);
    if degenerate > 0 {
        log::warn!(
            "iteration {iteration}: {degenerate} degenerate normal triangle(s); using isotropic precision there"
        );
    }
    w
}

/// Fits the model to the points with the configured EM variant.
///
/// `q_trace[t]` holds the EM lower bound of the log posterior after
/// iteration `t` (entry 0 is the initial state): the objective `Q` plus the
/// terms that do not depend on `alpha` or `sigma^2` (mixing weights,
/// responsibility entropy, Gaussian normalisers). For the ascent variants
/// this sequence is non-decreasing. `wall_times[t]` is the cumulative time
/// in seconds at which entry `t` was produced.
pub fn fit(model: &ShapeModel, points: &SparsePointSet, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    points.check_labels(model.vertex_labels())?;
    let eta = config.effective_eta();
    let floor = config.sigma2_floor.unwrap_or_else(|| default_sigma2_floor(model));
    let labels = model.vertex_labels();
    let qn_opts = BfgsOptions {
        max_iters: config.qn_max_iters,
        grad_tol: config.qn_grad_tol,
        ..Default::default()
    };
    // at eta = 1 every variant reduces to the isotropic linear update
    let variant = if eta == 1.0 { Variant::Iso } else { config.variant };

    let start = Instant::now();
    let mut alpha = DVector::zeros(model.num_modes());
    let mut sigma2 = init_sigma2(model, points).max(floor);
    let mut pos = model.mean_positions();
    let mut precisions = precisions_warn(model, &pos, eta, 0);
    let mut resp = e_step(&pos, &precisions, sigma2, points, labels)?;

    let bound = |alpha: &DVector<f64>, sigma2: f64, pos: &[Vec3], w: &[Matrix3<f64>], stats: &SufficientStats, resp: &Responsibilities| {
        let obj = Objective { model, stats, eta, sigma2 };
        obj.frozen_value(alpha, pos, w) + bound_constant(model, resp, eta)
    };

    let mut stats = SufficientStats::new(&resp, points)?;
    let mut q_prev = bound(&alpha, sigma2, &pos, &precisions, &stats, &resp);
    let elapsed = |prev: Option<f64>| {
        let t = start.elapsed().as_secs_f64();
        match prev {
            Some(p) if t <= p => p + 1e-9,
            _ => t,
        }
    };
    let mut result = FitResult::new(Method::from(config.variant), config.eta);
    result.q_trace.push(q_prev);
    result.wall_times.push(elapsed(None));
    result.alpha_trace.push(alpha.clone());
    result.sigma2_trace.push(sigma2);
    let mut best = (q_prev, alpha.clone(), sigma2);
    let mut last_resp: Option<Responsibilities> = None;

    for iteration in 1..=config.max_outer_iters {
        let state = FitState {
            model,
            points,
            eta,
            alpha: alpha.clone(),
            sigma2,
            responsibilities: resp,
            precisions,
            stats,
        };
        let new_alpha = match variant {
            Variant::Iso | Variant::Aniso => m_step_linear(&state)?,
            Variant::AnisoC => {
                let candidate = m_step_linear(&state)?;
                if check_ascent(&candidate, &state)? {
                    candidate
                } else {
                    result.fallback_count += 1;
                    let qn = m_step_quasi_newton(&state, QnMode::SingleStep, &qn_opts, config.qn_initial_hessian)?;
                    if qn.stalled {
                        result.stalled_steps += 1;
                    }
                    qn.alpha
                }
            }
            Variant::Gem | Variant::Ecm => {
                let mode = if variant == Variant::Gem { QnMode::SingleStep } else { QnMode::Full };
                let qn = m_step_quasi_newton(&state, mode, &qn_opts, config.qn_initial_hessian)?;
                if qn.stalled {
                    result.stalled_steps += 1;
                }
                qn.alpha
            }
        };
        let FitState { responsibilities, stats: old_stats, .. } = state;
        alpha = new_alpha;
        pos = model.deform(&alpha)?;
        precisions = precisions_warn(model, &pos, eta, iteration);
        sigma2 = sigma2_from_stats(&old_stats, &pos, &precisions, floor);
        let q = bound(&alpha, sigma2, &pos, &precisions, &old_stats, &responsibilities);
        last_resp = Some(responsibilities);

        result.q_trace.push(q);
        result.wall_times.push(elapsed(result.wall_times.last().copied()));
        result.alpha_trace.push(alpha.clone());
        result.sigma2_trace.push(sigma2);
        result.iterations = iteration;
        if q > best.0 {
            best = (q, alpha.clone(), sigma2);
        }
        if (q - q_prev).abs() < config.outer_tol * q.abs() {
            result.converged = true;
            break;
        }
        q_prev = q;
        if iteration == config.max_outer_iters || config.time_budget.is_some_and(|b| start.elapsed() >= b) {
            break;
        }
        resp = e_step(&pos, &precisions, sigma2, points, labels)?;
        stats = SufficientStats::new(&resp, points)?;
    }
    result.responsibilities = last_resp.map(Responsibilities::into_matrix);

    if result.converged {
        result.alpha = alpha;
        result.sigma2 = Some(sigma2);
    } else {
        log::info!("{} did not converge in {} iterations", config.variant, result.iterations);
        result.alpha = best.1;
        result.sigma2 = Some(best.2);
    }
    Ok(result)
}

/// Responsibility matrix of a fitted result at its final parameters.
pub fn final_responsibilities(
    model: &ShapeModel,
    points: &SparsePointSet,
    result: &FitResult,
) -> Result<DMatrix<f64>> {
    let pos = model.deform(&result.alpha)?;
    let eta = if result.method == Method::Iso { 1.0 } else { result.eta };
    let (w, _) = precisions_with_fallback(&pos, model.topology(), eta);
    let sigma2 = result.sigma2.ok_or_else(|| Error::invalid("result has no sigma^2"))?;
    Ok(e_step(&pos, &w, sigma2, points, model.vertex_labels())?.into_matrix())
}
