//! Series strategies shared by the property tests and the acceptance run.
#![allow(dead_code)]

use proptest::prelude::*;
use syscat::scalar::{rat, Rat};
use syscat::series::PolyLogSeries;

pub fn agree(a: &PolyLogSeries<Rat>, b: &PolyLogSeries<Rat>) -> bool {
    let k = a.order().min(b.order());
    let lo = a.valuation().min(b.valuation());
    (lo..=k).all(|kk| (0..=3).all(|j| a.coeff(kk, j) == b.coeff(kk, j)))
}

pub fn series(max_log: u32, min_k: i32) -> impl Strategy<Value = PolyLogSeries<Rat>> {
    (
        3i32..7,
        prop::collection::vec((min_k..7i32, 0..=max_log, -5i64..6, 1i64..5), 0..6),
    )
        .prop_map(move |(order, terms)| {
            let mut s = PolyLogSeries::zero(order);
            for (k, j, n, d) in terms {
                s.insert(k, j, rat(n, d));
            }
            s
        })
}

pub fn unit_series() -> impl Strategy<Value = PolyLogSeries<Rat>> {
    series(1, 1).prop_map(|w| w.add(&PolyLogSeries::one(w.order())).unwrap())
}
