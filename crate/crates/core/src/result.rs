use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fitting::Variant;

/// Fitting method that produced a [`FitResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Iso,
    Aniso,
    AnisoC,
    Gem,
    Ecm,
    Icp,
    Aicp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Iso => "ISO",
            Method::Aniso => "ANISO",
            Method::AnisoC => "ANISOc",
            Method::Gem => "GEM",
            Method::Ecm => "ECM",
            Method::Icp => "ICP",
            Method::Aicp => "AICP",
        }
    }

    pub fn is_icp(self) -> bool {
        matches!(self, Method::Icp | Method::Aicp)
    }

    /// The EM variant, if this is one.
    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::Iso => Some(Variant::Iso),
            Method::Aniso => Some(Variant::Aniso),
            Method::AnisoC => Some(Variant::AnisoC),
            Method::Gem => Some(Variant::Gem),
            Method::Ecm => Some(Variant::Ecm),
            Method::Icp | Method::Aicp => None,
        }
    }
}

impl From<Variant> for Method {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Iso => Method::Iso,
            Variant::Aniso => Method::Aniso,
            Variant::AnisoC => Method::AnisoC,
            Variant::Gem => Method::Gem,
            Variant::Ecm => Method::Ecm,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "icp" => Ok(Method::Icp),
            "aicp" => Ok(Method::Aicp),
            other => other
                .parse::<Variant>()
                .map(Method::from)
                .map_err(|_| Error::invalid(format!("unknown method {s:?}"))),
        }
    }
}

/// Outcome of a fit (EM variants or ICP baselines).
#[derive(Debug, Clone)]
pub struct FitResult {
    pub method: Method,
    pub eta: f64,
    pub alpha: DVector<f64>,
    /// Final `sigma^2`; `None` for the ICP baselines.
    pub sigma2: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Linear steps rejected by the ascent check (ANISOc only).
    pub fallback_count: usize,
    /// Quasi-Newton steps whose line search failed.
    pub stalled_steps: usize,
    /// EM bound per iteration (EM variants).
    pub q_trace: Vec<f64>,
    /// Regularised residual per iteration (ICP baselines).
    pub residual_trace: Vec<f64>,
    /// Cumulative seconds at which each trace entry was produced.
    pub wall_times: Vec<f64>,
    /// `alpha` after every iteration, starting with the initial value.
    pub alpha_trace: Vec<DVector<f64>>,
    /// `sigma^2` after every iteration (EM variants).
    pub sigma2_trace: Vec<f64>,
    /// Responsibilities used by the last M-step (EM variants).
    pub responsibilities: Option<DMatrix<f64>>,
}

impl FitResult {
    pub fn new(method: Method, eta: f64) -> Self {
        FitResult {
            method,
            eta,
            alpha: DVector::zeros(0),
            sigma2: None,
            iterations: 0,
            converged: false,
            fallback_count: 0,
            stalled_steps: 0,
            q_trace: Vec::new(),
            residual_trace: Vec::new(),
            wall_times: Vec::new(),
            alpha_trace: Vec::new(),
            sigma2_trace: Vec::new(),
            responsibilities: None,
        }
    }

    /// The per-iteration objective trace of this method.
    pub fn trace(&self) -> &[f64] {
        if self.method.is_icp() {
            &self.residual_trace
        } else {
            &self.q_trace
        }
    }
}
