use syscat::model::{Basis, GeometrySpec, Kind, ModelGeometry, Profile};
use syscat::verify::{
    check_cor_f, check_thm_b, check_thm_d, summary_table, Pipeline, VerifyConfig,
};

fn ball(n: usize) -> ModelGeometry {
    ModelGeometry::new(GeometrySpec {
        kind: Kind::WarpedBall,
        n,
        profiles: vec![vec![0.0, 1.0]],
        basis: Basis::Poly,
        symmetric: false,
        length: None,
        conformal: vec![],
    })
    .unwrap()
}

#[test]
fn umbilic_volume_on_the_four_ball() {
    let cfg = VerifyConfig::default();
    let p = Pipeline::new(ball(3), 1e-12).unwrap();
    let reps = vec![
        check_thm_b(&p, &cfg),
        check_cor_f(&p, &Profile::poly(&[0.3]), "const", &cfg).unwrap(),
        check_cor_f(&p, &Profile::poly(&[0.3, -0.4, 0.2]), "radial", &cfg).unwrap(),
    ];
    // the hyperbolic ball has no log term
    assert!(reps[0].lhs.value.abs() < 1e-8);
    assert!(reps.iter().all(|r| r.passed()), "{}", summary_table(&reps));
}

#[test]
fn conformal_primitive_on_the_disk() {
    let cfg = VerifyConfig::default();
    let p = Pipeline::new(ball(2), 1e-12).unwrap();
    let r = check_thm_d(&p, &Profile::poly(&[1.0, -0.3, 0.15]), "radial", &cfg).unwrap();
    assert!(r.passed(), "{}", summary_table(&[r]));
}

#[test]
fn step_size_out_of_range_is_refused() {
    let cfg = VerifyConfig {
        alpha_step: 0.5,
        ..VerifyConfig::default()
    };
    let p = Pipeline::new(ball(2), 1e-12).unwrap();
    assert!(check_thm_d(&p, &Profile::poly(&[1.0]), "const", &cfg).is_err());
}
