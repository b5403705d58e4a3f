use std::path::Path;

use proptest::prelude::*;

use ssmfit::fitting::{fit, FitConfig, Variant};
use ssmfit::io;
use ssmfit::{rng_from_seed, SparsePointSet, Vec3};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, -1.0..1.0f64, Just(0.0), Just(1e-300), Just(-123456.789)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn points_survive_csv(coords in prop::collection::vec((finite(), finite(), finite()), 1..40), labelled: bool) {
        let pts: Vec<Vec3> = coords.iter().map(|(x, y, z)| Vec3::new(*x, *y, *z)).collect();
        let labels = labelled.then(|| (0..pts.len() as i64).map(|k| k % 3 - 1).collect());
        let set = SparsePointSet::new(pts, labels).unwrap();
        let back = io::parse_points(&io::write_points(&set), Path::new("mem.csv")).unwrap();
        prop_assert_eq!(back, set);
    }
}

#[test]
fn model_files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let model = ssmfit::synth::random_model(80, 5, &mut rng_from_seed(1)).unwrap();
    let path = dir.path().join("m.json");
    io::save_model(&model, &path).unwrap();
    let back = io::load_model(&path).unwrap();
    assert_eq!(back.mean(), model.mean());
    assert_eq!(back.modes(), model.modes());
    assert_eq!(back.eigenvalues(), model.eigenvalues());
    assert_eq!(back.topology(), model.topology());
}

#[test]
fn meshes_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (pos, topo) = ssmfit::synth::uv_sphere(6, 9, 2.5);
    let path = dir.path().join("s.off");
    io::save_off(&pos, &topo, &path).unwrap();
    let (p2, t2) = io::load_off(&path).unwrap();
    assert_eq!(p2, pos);
    assert_eq!(t2, topo);
}

#[test]
fn results_round_trip_with_and_without_timings() {
    let mut rng = rng_from_seed(2);
    let model = ssmfit::synth::random_model(60, 3, &mut rng).unwrap();
    let pos = model.mean_positions();
    let pts = ssmfit::geometry::sample_surface_points(&pos, model.topology(), None, 25, &mut rng).unwrap();
    let res = fit(&model, &pts, &FitConfig::new(Variant::Gem, 4.0)).unwrap();
    let back = io::result_from_json(&io::result_to_json(&res, true), Path::new("r.json")).unwrap();
    assert_eq!(back.alpha, res.alpha);
    assert_eq!(back.q_trace, res.q_trace);
    assert_eq!(back.wall_times, res.wall_times);
    assert_eq!(back.sigma2, res.sigma2);

    let quiet = io::result_from_json(&io::result_to_json(&res, false), Path::new("r.json")).unwrap();
    assert!(quiet.wall_times.iter().all(|t| *t == 0.0));
    assert_eq!(quiet.alpha, res.alpha);
}

#[test]
fn corrupt_inputs_are_reported_not_panicked() {
    let p = Path::new("bad");
    assert!(io::model_from_json("{\"format_version\": \"1\"", p).is_err());
    assert!(io::parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n", p).is_err());
    assert!(io::parse_points("x,y\n1,2\n", p).is_err());
    assert!(io::result_from_json("[]", p).is_err());
}
