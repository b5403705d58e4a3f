use nalgebra::DVector;
use proptest::prelude::*;

use ssmfit::baselines::{icp_fit, IcpConfig, IcpVariant};
use ssmfit::fitting::{e_step, fit, FitConfig, Variant};
use ssmfit::geometry::{add_gaussian_noise, precisions_with_fallback, sample_surface_points};
use ssmfit::synth;
use ssmfit::{rng_from_seed, ShapeModel, SparsePointSet};

fn instance(seed: u64, n: usize, m: usize, p: usize) -> (ShapeModel, DVector<f64>, SparsePointSet) {
    let mut rng = rng_from_seed(seed);
    let model = synth::random_model(n, m, &mut rng).unwrap();
    let truth = model.sample_alpha(&mut rng).into_inner();
    let pos = model.deform(&truth).unwrap();
    let pts = sample_surface_points(&pos, model.topology(), None, p, &mut rng).unwrap();
    let pts = add_gaussian_noise(&pts, 0.01, &mut rng).unwrap();
    (model, truth, pts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ascent_variants_never_decrease_the_bound(seed in 0u64..10_000, eta in prop::sample::select(vec![2.0, 8.0, 64.0])) {
        let (model, _, pts) = instance(seed, 60, 4, 20);
        for variant in [Variant::Gem, Variant::AnisoC, Variant::Ecm] {
            let res = fit(&model, &pts, &FitConfig::new(variant, eta)).unwrap();
            for w in res.q_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{variant}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn traces_are_consistent(seed in 0u64..10_000, variant in prop::sample::select(Variant::ALL.to_vec())) {
        let (model, _, pts) = instance(seed, 50, 3, 15);
        let cfg = FitConfig::new(variant, 4.0);
        let res = fit(&model, &pts, &cfg).unwrap();
        let len = res.iterations + 1;
        prop_assert_eq!(res.q_trace.len(), len);
        prop_assert_eq!(res.wall_times.len(), len);
        prop_assert_eq!(res.alpha_trace.len(), len);
        prop_assert!(res.wall_times.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(res.sigma2_trace.iter().all(|s| *s > 0.0));
        prop_assert!(res.iterations <= cfg.max_outer_iters);
    }

    #[test]
    fn responsibilities_are_distributions(seed in 0u64..10_000, eta in 1.0..64.0f64) {
        let (model, truth, pts) = instance(seed, 40, 3, 12);
        let pos = model.deform(&truth).unwrap();
        let (w, _) = precisions_with_fallback(&pos, model.topology(), eta);
        let r = e_step(&pos, &w, 0.05, &pts, None).unwrap();
        for row in r.matrix().row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }
}

#[test]
fn fitting_recovers_a_noise_free_shape() {
    let mut rng = rng_from_seed(9);
    let spec = synth::EllipsoidSpec {
        vertices: 300,
        modes: 4,
        training_shapes: 16,
        ..Default::default()
    };
    let model = synth::ellipsoid_model(&spec, &mut rng).unwrap();
    let truth = model.sample_alpha(&mut rng).into_inner();
    let pos = model.deform(&truth).unwrap();
    let pts = sample_surface_points(&pos, model.topology(), None, 120, &mut rng).unwrap();
    let start_err = ssmfit::evaluation::vertex_rmse(&model.mean_positions(), &pos).unwrap();
    for variant in Variant::ALL {
        let res = fit(&model, &pts, &FitConfig::new(variant, 4.0)).unwrap();
        let err = ssmfit::evaluation::vertex_rmse(&model.deform(&res.alpha).unwrap(), &pos).unwrap();
        assert!(err < 0.5 * start_err, "{variant}: {err} vs {start_err}");
    }
}

#[test]
fn labelled_points_only_attract_their_object() {
    let spec = synth::EllipsoidSpec {
        vertices: 200,
        modes: 3,
        training_shapes: 12,
        ..Default::default()
    };
    let model = synth::multi_ellipsoid_model(2, &spec, &mut rng_from_seed(4)).unwrap();
    let mut rng = rng_from_seed(5);
    let pos = model.deform(&model.sample_alpha(&mut rng).into_inner()).unwrap();
    let pts = sample_surface_points(&pos, model.topology(), model.vertex_labels(), 30, &mut rng).unwrap();
    let res = fit(&model, &pts, &FitConfig::new(Variant::Aniso, 4.0)).unwrap();
    let r = res.responsibilities.expect("responsibilities are kept");
    let vl = model.vertex_labels().unwrap();
    let pl = pts.labels().unwrap();
    for j in 0..pts.len() {
        for i in 0..model.num_vertices() {
            if vl[i] != pl[j] {
                assert_eq!(r[(j, i)], 0.0);
            }
        }
    }
}

#[test]
fn icp_traces_have_one_residual_per_iteration() {
    let (model, _, pts) = instance(11, 120, 4, 40);
    for variant in [IcpVariant::Icp, IcpVariant::Aicp] {
        let res = icp_fit(&model, &pts, &IcpConfig::new(variant, 4.0)).unwrap();
        assert!(!res.residual_trace.is_empty());
        assert_eq!(res.alpha_trace.len(), res.residual_trace.len() + 1);
        assert_eq!(res.residual_trace.len(), res.iterations);
    }
}
