//! The `ssmfit` command line.
//!
//! Exit codes: 0 on success, 1 for usage, input and file errors, 2 when
//! the numerical pipeline fails. Diagnostics go to standard error; data
//! goes to the files named by `--out` (or to standard output without it).

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::baselines::{icp_fit, IcpConfig, IcpVariant};
use crate::error::{Error, Result};
use crate::evaluation::{
    benchmark_convergence, mesh_dice, surface_distance, vertex_rmse, BenchmarkConfig, BenchmarkTable,
};
use crate::fitting::{fit, FitConfig, Variant};
use crate::geometry::{
    add_gaussian_noise, contour_inplane_noise, sample_surface_points, slice_contour, MeshTopology,
    SparsePointSet,
};
use crate::io;
use crate::model::{build_pdm, ShapeModel};
use crate::synth;

const THREADS_ENV: &str = "SSMFIT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "ssmfit", version, about = "Fit statistical shape models to sparse 3D points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a PCA shape model from corresponded, pre-aligned OFF meshes.
    BuildModel {
        /// Directory of OFF meshes sharing one triangulation.
        #[arg(long)]
        shapes: PathBuf,
        #[arg(long)]
        modes: usize,
        #[arg(long)]
        units: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic shape model.
    SynthModel {
        #[arg(long, value_enum)]
        kind: SynthKind,
        /// Approximate number of vertices (ellipsoid kinds).
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        modes: usize,
        /// Number of objects (multi-ellipsoid).
        #[arg(long, default_value_t = 2)]
        objects: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample observation points from a shape drawn from the model prior.
    Sample {
        #[arg(long)]
        model: PathBuf,
        /// Number of points (split evenly across contours in contour mode).
        #[arg(long)]
        count: usize,
        /// Isotropic Gaussian noise added to surface samples.
        #[arg(long, conflicts_with_all = ["contours", "arc", "inplane_noise"])]
        noise: Option<f64>,
        /// Number of slice contours instead of surface samples.
        #[arg(long)]
        contours: Option<usize>,
        /// Fraction of each contour that is kept.
        #[arg(long, default_value_t = 1.0, requires = "contours")]
        arc: f64,
        /// Standard deviation of the rigid in-plane shift of each contour.
        #[arg(long, default_value_t = 0.0, requires = "contours")]
        inplane_noise: f64,
        /// Slice axis for contours.
        #[arg(long, value_enum, default_value_t = Axis::Z)]
        axis: Axis,
        /// Sample from the mean shape instead of a random prior draw.
        #[arg(long)]
        mean: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to store the ground-truth deformation parameters.
        #[arg(long)]
        truth_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the model with one of the EM variants.
    Fit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long, value_enum)]
        variant: FitVariantArg,
        /// Anisotropy weight (ratio of tangential to normal variance).
        /// Always explicit; values that worked well on clinical shapes are
        /// about 8 for brain structures, 4 for femur, tibia and hip, and 2
        /// for liver.
        #[arg(long)]
        eta: f64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write zeros instead of measured wall times (reproducible files).
        #[arg(long)]
        no_timings: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the model with regularised ICP or anisotropic ICP.
    Icp {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long, value_enum)]
        variant: IcpVariantArg,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_timings: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a fitted shape with a ground truth.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Result file whose alpha defines the fitted shape.
        #[arg(long)]
        alpha_from: PathBuf,
        /// Ground truth: an OFF mesh, or a JSON file with an "alpha" array.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "dsc,surface,rmse")]
        metrics: Vec<MetricArg>,
        /// Surface samples per mesh for the surface distance.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Voxel spacing for Dice (default: bounding-box diagonal / 128).
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Objective-versus-time benchmark of several EM variants.
    Benchmark {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "aniso,anisoc,gem,ecm")]
        methods: Vec<FitVariantArg>,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Points per run.
        #[arg(long = "p", default_value_t = 30)]
        points: usize,
        #[arg(long, default_value_t = 8.0)]
        eta: f64,
        /// Isotropic noise added to the sampled points.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        /// Time each fit this many times and keep the fastest iterations.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Worker threads (default: number of cores; SSMFIT_THREADS overrides).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the run-averaged normalised objective over time.
        #[arg(long)]
        averaged_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    Rectangle2d,
    Ellipsoid,
    MultiEllipsoid,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FitVariantArg {
    Iso,
    Aniso,
    Anisoc,
    Gem,
    Ecm,
}

impl From<FitVariantArg> for Variant {
    fn from(v: FitVariantArg) -> Self {
        match v {
            FitVariantArg::Iso => Variant::Iso,
            FitVariantArg::Aniso => Variant::Aniso,
            FitVariantArg::Anisoc => Variant::AnisoC,
            FitVariantArg::Gem => Variant::Gem,
            FitVariantArg::Ecm => Variant::Ecm,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum IcpVariantArg {
    Icp,
    Aicp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Dsc,
    Surface,
    Rmse,
}

/// Ground-truth deformation parameters as written by `sample --truth-out`.
#[derive(Serialize, Deserialize)]
struct AlphaFile {
    format_version: String,
    alpha: Vec<f64>,
}

/// Runs the command line with the given arguments (including the program
/// name) and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|t| *t > 0)
            .map(Some)
            .ok_or_else(|| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(flag),
    }
}

fn read_alpha(path: &Path, model: &ShapeModel) -> Result<DVector<f64>> {
    let text = io::read_text(path)?;
    let file: AlphaFile = serde_json::from_str(&text).map_err(|e| io::json_error(path, &text, e))?;
    io::check_version(&file.format_version)?;
    if file.alpha.len() != model.num_modes() {
        return Err(Error::DimensionMismatch {
            what: "ground-truth alpha",
            expected: model.num_modes(),
            found: file.alpha.len(),
        });
    }
    Ok(DVector::from_vec(file.alpha))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::BuildModel {
            shapes,
            modes,
            units,
            out,
        } => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&shapes)
                .map_err(|source| Error::Io {
                    path: shapes.clone(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("off")))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::invalid(format!("no .off files in {}", shapes.display())));
            }
            let mut topology: Option<MeshTopology> = None;
            let mut training = Vec::with_capacity(files.len());
            for f in &files {
                let (pos, topo) = io::load_off(f)?;
                match &topology {
                    None => topology = Some(topo),
                    Some(t) if *t != topo => {
                        return Err(Error::Format {
                            path: f.clone(),
                            message: "triangulation differs from the first mesh (shapes must be in correspondence)".into(),
                        })
                    }
                    _ => {}
                }
                training.push(pos);
            }
            let model = build_pdm(&training, modes, topology.expect("at least one mesh"))?.with_units(units);
            emit(out.as_deref(), &io::model_to_json(&model))
        }

        Command::SynthModel {
            kind,
            n,
            modes,
            objects,
            seed,
            out,
        } => {
            let mut rng = crate::rng_from_seed(seed);
            let spec = synth::EllipsoidSpec {
                vertices: n,
                modes,
                training_shapes: (4 * modes).max(modes + 2),
                ..Default::default()
            };
            let model = match kind {
                SynthKind::Rectangle2d => {
                    if modes != 2 {
                        log::warn!("rectangle2d always has 2 modes; --modes ignored");
                    }
                    synth::rectangle2d_model()?
                }
                SynthKind::Ellipsoid => synth::ellipsoid_model(&spec, &mut rng)?,
                SynthKind::MultiEllipsoid => synth::multi_ellipsoid_model(objects, &spec, &mut rng)?,
            };
            emit(out.as_deref(), &io::model_to_json(&model))
        }

        Command::Sample {
            model,
            count,
            noise,
            contours,
            arc,
            inplane_noise,
            axis,
            mean,
            seed,
            truth_out,
            out,
        } => {
            let model = io::load_model(&model)?;
            let mut rng = crate::rng_from_seed(seed);
            let alpha = if mean {
                DVector::zeros(model.num_modes())
            } else {
                model.sample_alpha(&mut rng).into_inner()
            };
            let pos = model.deform(&alpha)?;
            let points = match contours {
                None => {
                    let pts = sample_surface_points(&pos, model.topology(), model.vertex_labels(), count, &mut rng)?;
                    add_gaussian_noise(&pts, noise.unwrap_or(0.0), &mut rng)?
                }
                Some(k) => {
                    if k == 0 || count < k {
                        return Err(Error::invalid("need at least one contour and one point per contour"));
                    }
                    let axis = axis as usize;
                    let mut parts = Vec::with_capacity(k);
                    for c in 0..k {
                        let n_pts = count / k + usize::from(c < count % k);
                        let contour = slice_contour(&pos, model.topology(), model.vertex_labels(), axis, &mut rng, arc, n_pts)?;
                        let (moved, _) = contour_inplane_noise(&contour.points, inplane_noise, &mut rng)?;
                        parts.push(moved);
                    }
                    SparsePointSet::concat(&parts)?
                }
            };
            if let Some(t) = truth_out {
                let file = AlphaFile {
                    format_version: io::FORMAT_VERSION.into(),
                    alpha: alpha.as_slice().to_vec(),
                };
                io::write_text(&t, &serde_json::to_string_pretty(&file).expect("finite alpha"))?;
            }
            emit(out.as_deref(), &io::write_points(&points))
        }

        Command::Fit {
            model,
            points,
            variant,
            eta,
            max_iters,
            tol,
            seed,
            no_timings,
            out,
        } => {
            let model = io::load_model(&model)?;
            let points = io::load_points(&points)?;
            let mut cfg = FitConfig::new(variant.into(), eta);
            cfg.max_outer_iters = max_iters;
            cfg.outer_tol = tol;
            cfg.seed = seed;
            let result = fit(&model, &points, &cfg)?;
            emit(out.as_deref(), &io::result_to_json(&result, !no_timings))
        }

        Command::Icp {
            model,
            points,
            variant,
            eta,
            max_iters,
            tol,
            seed,
            no_timings,
            out,
        } => {
            let model = io::load_model(&model)?;
            let points = io::load_points(&points)?;
            let variant = match variant {
                IcpVariantArg::Icp => IcpVariant::Icp,
                IcpVariantArg::Aicp => IcpVariant::Aicp,
            };
            let cfg = IcpConfig {
                variant,
                eta,
                max_iters,
                tol,
                seed,
            };
            let result = icp_fit(&model, &points, &cfg)?;
            emit(out.as_deref(), &io::result_to_json(&result, !no_timings))
        }

        Command::Evaluate {
            model,
            alpha_from,
            truth,
            metrics,
            samples,
            spacing,
            seed,
            out,
        } => {
            let model = io::load_model(&model)?;
            let fitted = io::load_result(&alpha_from)?;
            let fitted_pos = model.deform(&fitted.alpha)?;
            let is_off = truth.extension().is_some_and(|x| x.eq_ignore_ascii_case("off"));
            let (truth_pos, truth_topo) = if is_off {
                io::load_off(&truth)?
            } else {
                let alpha = read_alpha(&truth, &model)?;
                (model.deform(&alpha)?, model.topology().clone())
            };
            let mut rng = crate::rng_from_seed(seed);
            let mut report = io::MetricsReport::default();
            if metrics.contains(&MetricArg::Dsc) {
                report.dsc = Some(mesh_dice(&truth_pos, &truth_topo, &fitted_pos, model.topology(), spacing)?);
            }
            if metrics.contains(&MetricArg::Surface) {
                let (avg, max) = surface_distance(&fitted_pos, model.topology(), &truth_pos, &truth_topo, samples, &mut rng)?;
                report.surface_avg = Some(avg);
                report.surface_max = Some(max);
            }
            if metrics.contains(&MetricArg::Rmse) {
                report.vertex_rmse = Some(vertex_rmse(&fitted_pos, &truth_pos)?);
            }
            emit(out.as_deref(), &report.to_json())
        }

        Command::Benchmark {
            model,
            methods,
            runs,
            points,
            eta,
            noise,
            max_iters,
            repeats,
            threads,
            seed,
            averaged_out,
            out,
        } => {
            let model = io::load_model(&model)?;
            if methods.is_empty() {
                return Err(Error::invalid("--methods must name at least one variant"));
            }
            let methods: Vec<(String, FitConfig)> = methods
                .into_iter()
                .map(|m| {
                    let v = Variant::from(m);
                    let mut cfg = FitConfig::new(v, eta);
                    cfg.max_outer_iters = max_iters;
                    (v.name().to_string(), cfg)
                })
                .collect();
            let sampler = |m: &ShapeModel, alpha: &DVector<f64>, rng: &mut crate::Rng| {
                let pos = m.deform(alpha)?;
                let pts = sample_surface_points(&pos, m.topology(), m.vertex_labels(), points, rng)?;
                add_gaussian_noise(&pts, noise, rng)
            };
            let cfg = BenchmarkConfig {
                runs,
                seed,
                threads: thread_count(threads)?,
                repeats,
            };
            let table = benchmark_convergence(&model, sampler, &methods, &cfg)?;
            for (run, note) in &table.excluded {
                eprintln!("note: run {run} excluded: {note}");
            }
            if let Some(p) = averaged_out {
                io::write_text(&p, &averaged_csv(&table))?;
            }
            emit(out.as_deref(), &benchmark_csv(&table))
        }
    }
}

fn benchmark_csv(table: &BenchmarkTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "run", "iteration", "elapsed_s", "q", "q_normalized"])
        .expect("in-memory write");
    for r in &table.records {
        w.write_record([
            r.method.clone(),
            r.run.to_string(),
            r.iteration.to_string(),
            r.elapsed_s.to_string(),
            r.q.to_string(),
            r.q_normalized.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
}

/// Run-averaged normalised objective on a common time grid (100 steps up
/// to the longest trace).
fn averaged_csv(table: &BenchmarkTable) -> String {
    let t_max = table.records.iter().map(|r| r.elapsed_s).fold(0.0, f64::max);
    let times: Vec<f64> = (1..=100).map(|k| t_max * k as f64 / 100.0).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "elapsed_s", "mean_q_normalized"]).expect("in-memory write");
    for m in table.methods() {
        for (t, q) in times.iter().zip(table.averaged_curve(&m, &times)) {
            w.write_record([m.clone(), t.to_string(), q.to_string()]).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["ssmfit"]), 1);
        assert_eq!(run(["ssmfit", "fit", "--bogus"]), 1);
        assert_eq!(run(["ssmfit", "--help"]), 0);
    }

    #[test]
    fn missing_file_exits_with_one() {
        assert_eq!(
            run(["ssmfit", "fit", "--model", "/nonexistent/m.json", "--points", "p.csv", "--variant", "iso", "--eta", "1"]),
            1
        );
    }
}
