//! Convergence benchmark: objective-versus-time traces of several EM
//! variants on shared random problem instances.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fitting::{fit, FitConfig};
use crate::geometry::SparsePointSet;
use crate::model::ShapeModel;

/// One trace entry of one method in one run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRecord {
    pub method: String,
    pub run: usize,
    pub iteration: usize,
    pub elapsed_s: f64,
    pub q: f64,
    /// `(q - min) / (max - min)` over all methods of the same run.
    pub q_normalized: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkTable {
    pub records: Vec<BenchmarkRecord>,
    /// Runs left out because a method failed, with the reason.
    pub excluded: Vec<(usize, String)>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub runs: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Times each fit is repeated (at least 1). Fits are deterministic, so
    /// the repetitions produce the same iterates; each iteration is charged
    /// its fastest observed duration, which filters out scheduler noise.
    pub repeats: usize,
}

/// Cumulative times from the fastest duration of each trace entry over
/// repeated, identical traces.
fn fastest_times(traces: &[Vec<f64>]) -> Vec<f64> {
    let len = traces[0].len();
    if traces.iter().any(|t| t.len() != len) {
        return traces[0].clone();
    }
    let mut out = Vec::with_capacity(len);
    let mut total = 0.0;
    for k in 0..len {
        let step = traces
            .iter()
            .map(|t| if k == 0 { t[0] } else { t[k] - t[k - 1] })
            .fold(f64::INFINITY, f64::min);
        total += step;
        out.push(total);
    }
    out
}

/// Runs every method on `runs` random instances and normalises each run's
/// objective values jointly over all methods.
///
/// Run `r` draws `alpha*` from the prior and the observations from
/// `sampler`, using an rng seeded with `seed` on stream `r`, so results do
/// not depend on the number of threads.
pub fn benchmark_convergence<S>(
    model: &ShapeModel,
    sampler: S,
    methods: &[(String, FitConfig)],
    config: &BenchmarkConfig,
) -> Result<BenchmarkTable>
where
    S: Fn(&ShapeModel, &DVector<f64>, &mut crate::Rng) -> Result<SparsePointSet> + Sync,
{
    if methods.is_empty() {
        return Err(Error::invalid("benchmark needs at least one method"));
    }
    for (_, cfg) in methods {
        cfg.validate()?;
    }
    if config.repeats == 0 {
        return Err(Error::invalid("benchmark repeats must be at least 1"));
    }
    let one_run = |run: usize| -> std::result::Result<Vec<BenchmarkRecord>, String> {
        let mut rng = crate::Rng::seed_from_u64(config.seed);
        rng.set_stream(run as u64);
        let alpha = model.sample_alpha(&mut rng);
        let points = sampler(model, &alpha, &mut rng).map_err(|e| format!("sampling failed: {e}"))?;
        // Rotate the starting method so cache warm-up does not favour one,
        // and interleave the repeats so a slow stretch hits every method.
        let k = methods.len();
        let order: Vec<&(String, FitConfig)> = (0..k).map(|i| &methods[(run + i) % k]).collect();
        let mut results = Vec::with_capacity(k);
        let mut times: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
        for rep in 0..config.repeats {
            for (j, (label, cfg)) in order.iter().enumerate() {
                let res = fit(model, &points, cfg).map_err(|e| format!("{label} failed: {e}"))?;
                times[j].push(res.wall_times.clone());
                if rep == 0 {
                    results.push(res);
                }
            }
        }
        let mut records = Vec::new();
        for (((label, _), res), times) in order.iter().zip(&results).zip(&times) {
            let wall_times = fastest_times(times);
            for (it, (q, t)) in res.q_trace.iter().zip(&wall_times).enumerate() {
                records.push(BenchmarkRecord {
                    method: label.clone(),
                    run,
                    iteration: it,
                    elapsed_s: *t,
                    q: *q,
                    q_normalized: 0.0,
                });
            }
        }
        normalize(&mut records);
        Ok(records)
    };

    let outcomes: Vec<_> = match config.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
            pool.install(|| (0..config.runs).into_par_iter().map(one_run).collect())
        }
        None => (0..config.runs).into_par_iter().map(one_run).collect(),
    };
    let mut table = BenchmarkTable::default();
    for (run, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(r) => table.records.extend(r),
            Err(note) => {
                log::warn!("run {run} excluded: {note}");
                table.excluded.push((run, note));
            }
        }
    }
    Ok(table)
}

/// Min-max normalisation of `q` over all records (one run).
pub fn normalize(records: &mut [BenchmarkRecord]) {
    let lo = records.iter().map(|r| r.q).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.q).fold(f64::NEG_INFINITY, f64::max);
    for r in records {
        r.q_normalized = if hi > lo { (r.q - lo) / (hi - lo) } else { 1.0 };
    }
}

impl BenchmarkTable {
    pub fn methods(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.records {
            if !seen.contains(&r.method) {
                seen.push(r.method.clone());
            }
        }
        seen
    }

    pub fn runs(&self) -> Vec<usize> {
        let mut runs: Vec<usize> = self.records.iter().map(|r| r.run).collect();
        runs.sort_unstable();
        runs.dedup();
        runs
    }

    fn trace(&self, method: &str, run: usize) -> impl Iterator<Item = &BenchmarkRecord> {
        let method = method.to_owned();
        self.records
            .iter()
            .filter(move |r| r.run == run && r.method == method)
    }

    /// First time at which `method` reaches normalised objective `level`
    /// in `run`, if it does.
    pub fn time_to_level(&self, method: &str, run: usize, level: f64) -> Option<f64> {
        self.trace(method, run)
            .find(|r| r.q_normalized >= level)
            .map(|r| r.elapsed_s)
    }

    /// Median over runs of [`time_to_level`](Self::time_to_level); runs that
    /// never reach the level count as infinitely slow.
    pub fn median_time_to_level(&self, method: &str, level: f64) -> f64 {
        let mut t: Vec<f64> = self
            .runs()
            .into_iter()
            .map(|run| self.time_to_level(method, run, level).unwrap_or(f64::INFINITY))
            .collect();
        if t.is_empty() {
            return f64::INFINITY;
        }
        t.sort_by(f64::total_cmp);
        let n = t.len();
        if n % 2 == 1 {
            t[n / 2]
        } else {
            0.5 * (t[n / 2 - 1] + t[n / 2])
        }
    }

    /// Normalised objective of `method` averaged over runs at each time in
    /// `times` (the value of a run at time `t` is its last entry at or
    /// before `t`, or 0 before its first entry).
    pub fn averaged_curve(&self, method: &str, times: &[f64]) -> Vec<f64> {
        let runs = self.runs();
        if runs.is_empty() {
            return vec![0.0; times.len()];
        }
        let traces: BTreeMap<usize, Vec<(f64, f64)>> = runs
            .iter()
            .map(|&run| {
                (
                    run,
                    self.trace(method, run).map(|r| (r.elapsed_s, r.q_normalized)).collect(),
                )
            })
            .collect();
        times
            .iter()
            .map(|&t| {
                traces
                    .values()
                    .map(|tr| {
                        tr.iter()
                            .take_while(|(s, _)| *s <= t)
                            .last()
                            .map_or(0.0, |(_, q)| *q)
                    })
                    .sum::<f64>()
                    / traces.len() as f64
            })
            .collect()
    }
}
