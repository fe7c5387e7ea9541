mod common;

use common::{agree, series, unit_series};
use proptest::prelude::*;
use syscat::scalar::Scalar;
use syscat::series::PolyLogSeries;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn multiplication_is_associative(a in series(1, 0), b in series(1, 0), c in series(1, 0)) {
        let l = a.mul(&b).mul(&c);
        let r = a.mul(&b.mul(&c));
        prop_assert!(agree(&l, &r));
    }

    #[test]
    fn multiplication_distributes(a in series(1, 0), b in series(1, 0), c in series(1, 0)) {
        let l = a.mul(&b.add(&c).unwrap());
        let r = a.mul(&b).add(&a.mul(&c)).unwrap();
        prop_assert!(agree(&l, &r));
    }

    #[test]
    fn multiplication_commutes(a in series(2, 0), b in series(2, 0)) {
        prop_assert!(agree(&a.mul(&b), &b.mul(&a)));
    }

    #[test]
    fn exp_log_round_trip(a in unit_series()) {
        let back = a.log().unwrap().exp().unwrap();
        prop_assert!(agree(&back, &a));
    }

    #[test]
    fn log_exp_round_trip(w in series(1, 1)) {
        let back = w.exp().unwrap().log().unwrap();
        prop_assert!(agree(&back, &w));
    }

    #[test]
    fn derivative_obeys_leibniz(a in series(2, 0), b in series(2, 0)) {
        let l = a.mul(&b).derivative();
        let r = a.derivative().mul(&b).add(&a.mul(&b.derivative())).unwrap();
        prop_assert!(agree(&l, &r));
    }

    #[test]
    fn float_mode_tracks_exact_mode(a in unit_series(), b in series(1, 0)) {
        let exact = a.mul(&b).add(&a.log().unwrap()).unwrap();
        let fa: PolyLogSeries<f64> = a.convert();
        let fb: PolyLogSeries<f64> = b.convert();
        let float = fa.mul(&fb).add(&fa.log().unwrap()).unwrap();
        prop_assert_eq!(exact.order(), float.order());
        for (k, j, c) in exact.terms() {
            let x = c.to_f64();
            let y = float.coeff(k, j);
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "k={} j={} {} vs {}", k, j, x, y);
        }
    }
}
