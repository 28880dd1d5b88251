use gridsde::kernels::{eval, gram, gram_symmetric, points_1d, KernelSpec};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn reference_values() {
    let rbf = KernelSpec::rbf(1.0).unwrap();
    assert_eq!(eval(&rbf, &[0.3], &[0.3]).unwrap(), 1.0);
    assert!(close(
        eval(&rbf, &[0.0], &[1.0]).unwrap(),
        (-0.5f64).exp(),
        1e-15
    ));

    let m = KernelSpec::matern(1.0, 0.5).unwrap();
    for r in [0.1, 1.0, 3.0] {
        assert!(close(eval(&m, &[0.0], &[r]).unwrap(), (-r).exp(), 1e-12));
    }

    let per = KernelSpec::periodic(1.0, 1.0).unwrap();
    assert!(close(eval(&per, &[0.0], &[1.0]).unwrap(), 1.0, 1e-15));

    let ens = KernelSpec::ensemble(vec![rbf.clone(), per]).unwrap();
    assert_eq!(eval(&ens, &[2.0], &[2.0]).unwrap(), 2.0);
}

#[test]
fn two_point_gram() {
    let k = gram_symmetric(&KernelSpec::rbf(1.0).unwrap(), &points_1d(&[0.0, 1.0])).unwrap();
    let e = (-0.5f64).exp();
    assert_eq!(k, DMatrix::from_row_slice(2, 2, &[1.0, e, e, 1.0]));
}

#[test]
fn single_point_gram_is_diagonal_value() {
    let specs = [
        KernelSpec::rbf(0.4).unwrap(),
        KernelSpec::matern(2.0, 2.5).unwrap(),
        KernelSpec::rbf_plus_periodic(1.0, 1.0, 3.0).unwrap(),
    ];
    let x = points_1d(&[1.7]);
    for s in &specs {
        let k = gram(s, &x, &x).unwrap();
        assert_eq!(k.shape(), (1, 1));
        assert_eq!(k[(0, 0)], s.diagonal());
    }
}

#[test]
fn ensemble_json_shape() {
    let ens = KernelSpec::rbf_plus_periodic(1.0, 0.5, 2.0).unwrap();
    let v: serde_json::Value = serde_json::to_value(&ens).unwrap();
    assert_eq!(v["family"], "ensemble");
    assert_eq!(v["members"][0]["family"], "rbf");
    assert_eq!(v["members"][1]["period"], 2.0);
    let back: KernelSpec = serde_json::from_value(v).unwrap();
    assert_eq!(back, ens);
}

#[test]
fn periodic_on_plane_can_be_indefinite() {
    // sin² of the Euclidean norm is not a positive-definite function in 2-D.
    let k = KernelSpec::periodic(2.3853111840136094, 0.2).unwrap();
    let x = DMatrix::from_row_slice(
        3,
        2,
        &[
            2.8749764590150866,
            -1.3925519971759073,
            0.0,
            0.0,
            0.2035721864874179,
            0.0,
        ],
    );
    assert!(min_eigenvalue(gram_symmetric(&k, &x).unwrap()) < -1e-8);
}

#[test]
fn nested_ensemble_rejected() {
    let inner = KernelSpec::rbf_plus_periodic(1.0, 1.0, 1.0).unwrap();
    assert!(KernelSpec::ensemble(vec![inner, KernelSpec::rbf(1.0).unwrap()]).is_err());
    assert!(KernelSpec::ensemble(vec![KernelSpec::rbf(1.0).unwrap()]).is_err());
    let text = r#"{"family":"ensemble","members":[{"family":"rbf","length_scale":1.0}]}"#;
    assert!(serde_json::from_str::<KernelSpec>(text).is_err());
}

fn base_kernel() -> impl Strategy<Value = KernelSpec> {
    let l = 0.05f64..5.0;
    prop_oneof![
        l.clone().prop_map(|l| KernelSpec::rbf(l).unwrap()),
        (l.clone(), prop::sample::select(vec![0.5, 1.5, 2.5]))
            .prop_map(|(l, nu)| KernelSpec::matern(l, nu).unwrap()),
        (l.clone(), 0.1f64..10.0).prop_map(|(l, a)| KernelSpec::rational_quadratic(l, a).unwrap()),
        (l, 0.2f64..5.0).prop_map(|(l, p)| KernelSpec::periodic(l, p).unwrap()),
    ]
}

fn radial_kernel() -> impl Strategy<Value = KernelSpec> {
    base_kernel().prop_filter("periodic is only PSD on 1-D inputs", |k| {
        !matches!(k, KernelSpec::Periodic { .. })
    })
}

fn any_kernel() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        base_kernel(),
        prop::collection::vec(base_kernel(), 2..4).prop_map(|m| KernelSpec::ensemble(m).unwrap()),
    ]
}

fn min_eigenvalue(k: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(k).eigenvalues.min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn maximized_at_zero_distance(k in base_kernel(), x in -5.0f64..5.0, y in -5.0f64..5.0) {
        prop_assert!(eval(&k, &[x], &[x]).unwrap() >= eval(&k, &[x], &[y]).unwrap());
    }

    #[test]
    fn symmetric_gram(k in any_kernel(), xs in prop::collection::vec(-10.0f64..10.0, 1..20)) {
        let g = gram_symmetric(&k, &points_1d(&xs)).unwrap();
        prop_assert!((&g - g.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn gram_is_psd(k in any_kernel(), xs in prop::collection::vec(-10.0f64..10.0, 2..100)) {
        let g = gram_symmetric(&k, &points_1d(&xs)).unwrap();
        prop_assert!(min_eigenvalue(g) >= -1e-8);
    }

    #[test]
    fn radial_kernels_psd_in_two_dimensions(k in radial_kernel(), xs in prop::collection::vec(-3.0f64..3.0, 4..80)) {
        let n = xs.len() / 2;
        let x = DMatrix::from_row_slice(n, 2, &xs[..2 * n]);
        prop_assert!(min_eigenvalue(gram_symmetric(&k, &x).unwrap()) >= -1e-8);
    }

    #[test]
    fn ensemble_is_exact_sum(members in prop::collection::vec(base_kernel(), 2..4),
                             x in -4.0f64..4.0, y in -4.0f64..4.0) {
        let total: f64 = members.iter().map(|m| eval(m, &[x], &[y]).unwrap()).sum();
        let ens = KernelSpec::ensemble(members).unwrap();
        prop_assert_eq!(eval(&ens, &[x], &[y]).unwrap(), total);
    }

    #[test]
    fn matern_half_is_exponential(l in 0.05f64..5.0, r in 0.0f64..20.0) {
        let k = KernelSpec::matern(l, 0.5).unwrap();
        prop_assert!(close(eval(&k, &[0.0], &[r]).unwrap(), (-r / l).exp(), 1e-10));
    }

    #[test]
    fn rational_quadratic_approaches_rbf(l in 0.05f64..5.0, frac in 0.0f64..=3.0) {
        let r = frac * l;
        let rq = KernelSpec::rational_quadratic(l, 1e6).unwrap();
        let rbf = KernelSpec::rbf(l).unwrap();
        let a = eval(&rq, &[0.0], &[r]).unwrap();
        let b = eval(&rbf, &[0.0], &[r]).unwrap();
        prop_assert!(close(a, b, 1e-4));
    }

    #[test]
    fn json_round_trip(k in any_kernel()) {
        let text = serde_json::to_string(&k).unwrap();
        prop_assert_eq!(serde_json::from_str::<KernelSpec>(&text).unwrap(), k);
    }
}
