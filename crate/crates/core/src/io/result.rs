use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{check_version, json_error, read_text, write_text, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::result::{FitResult, Method};

#[derive(Serialize, Deserialize)]
struct ResultFile {
    format_version: String,
    variant: String,
    eta: f64,
    alpha: Vec<f64>,
    sigma2: Option<f64>,
    iterations: usize,
    converged: bool,
    fallback_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_trace: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    residual_trace: Option<Vec<f64>>,
    wall_times: Vec<f64>,
}

/// Serialises a result. With `timings == false` every wall time is written
/// as 0 so that repeated runs produce identical files.
pub fn result_to_json(result: &FitResult, timings: bool) -> String {
    let icp = result.method.is_icp();
    let file = ResultFile {
        format_version: FORMAT_VERSION.to_owned(),
        variant: result.method.name().to_owned(),
        eta: result.eta,
        alpha: result.alpha.as_slice().to_vec(),
        sigma2: result.sigma2,
        iterations: result.iterations,
        converged: result.converged,
        fallback_count: result.fallback_count,
        q_trace: (!icp).then(|| result.q_trace.clone()),
        residual_trace: icp.then(|| result.residual_trace.clone()),
        wall_times: if timings {
            result.wall_times.clone()
        } else {
            vec![0.0; result.wall_times.len()]
        },
    };
    serde_json::to_string_pretty(&file).expect("result values are finite")
}

pub fn result_from_json(text: &str, path: &Path) -> Result<FitResult> {
    let file: ResultFile = serde_json::from_str(text).map_err(|e| json_error(path, text, e))?;
    check_version(&file.format_version)?;
    let method: Method = file.variant.parse().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: format!("unknown variant {:?}", file.variant),
    })?;
    let mut r = FitResult::new(method, file.eta);
    r.alpha = DVector::from_vec(file.alpha);
    r.sigma2 = file.sigma2;
    r.iterations = file.iterations;
    r.converged = file.converged;
    r.fallback_count = file.fallback_count;
    r.q_trace = file.q_trace.unwrap_or_default();
    r.residual_trace = file.residual_trace.unwrap_or_default();
    r.wall_times = file.wall_times;
    Ok(r)
}

pub fn load_result(path: &Path) -> Result<FitResult> {
    result_from_json(&read_text(path)?, path)
}

pub fn save_result(result: &FitResult, path: &Path, timings: bool) -> Result<()> {
    write_text(path, &result_to_json(result, timings))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut r = FitResult::new(Method::AnisoC, 8.0);
        r.alpha = DVector::from_vec(vec![0.1, -2.5e-9, 3.0]);
        r.sigma2 = Some(0.123456789);
        r.iterations = 3;
        r.fallback_count = 1;
        r.q_trace = vec![-10.0, -5.5, -5.25, -5.2];
        r.wall_times = vec![0.001, 0.002, 0.003, 0.004];
        let back = result_from_json(&result_to_json(&r, true), Path::new("r.json")).unwrap();
        assert_eq!(back.method, r.method);
        assert_eq!(back.alpha, r.alpha);
        assert_eq!(back.sigma2, r.sigma2);
        assert_eq!(back.q_trace, r.q_trace);
        assert_eq!(back.wall_times, r.wall_times);
        let v: serde_json::Value = serde_json::from_str(&result_to_json(&r, false)).unwrap();
        assert_eq!(v["wall_times"][2], 0.0);
        assert!(v.get("residual_trace").is_none());
    }

    #[test]
    fn icp_uses_residual_trace() {
        let mut r = FitResult::new(Method::Icp, 1.0);
        r.alpha = DVector::from_vec(vec![1.0]);
        r.residual_trace = vec![3.0, 2.0];
        r.wall_times = vec![0.1, 0.2];
        let text = result_to_json(&r, true);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["sigma2"].is_null());
        assert!(v.get("q_trace").is_none());
        let back = result_from_json(&text, Path::new("r.json")).unwrap();
        assert_eq!(back.residual_trace, r.residual_trace);
    }
}
