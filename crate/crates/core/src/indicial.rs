//! Order-by-order solution of `L[v] = 0` for operators whose action on
//! `r^{α+m} log^j r` is triangular in j with diagonal I(m) (the indicial
//! polynomial). The response matrix at each order is measured by probing,
//! so the same routine serves the nonlinear Yamabe defect and the linear
//! scattering operator.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::series::PolyLogSeries;

fn max_log_at<T: Scalar>(s: &PolyLogSeries<T>, m: i32) -> Option<u32> {
    s.terms()
        .filter(|(k, _, c)| *k == m && !c.is_zero())
        .map(|(_, j, _)| j)
        .max()
}

/// Fill in orders `from..=to` of `init` so that `apply(v)` vanishes through
/// order `to`. At the resonant order (if any) the log-free coefficient is set
/// to the supplied value and the residual is absorbed by log terms.
pub fn solve_orders<T: Scalar>(
    apply: &dyn Fn(&PolyLogSeries<T>) -> Result<PolyLogSeries<T>>,
    init: PolyLogSeries<T>,
    from: i32,
    to: i32,
    resonance: Option<(i32, T)>,
    log_cap: u32,
) -> Result<PolyLogSeries<T>> {
    let mut v = init;
    for m in from..=to {
        let resonant = matches!(&resonance, Some((r, _)) if *r == m);
        if let Some((r, free)) = &resonance {
            if *r == m {
                v.set_coeff(m, 0, free.clone());
            }
        }
        let res = apply(&v)?;
        if res.order() < m {
            return Err(Error::Precondition(format!(
                "residual truncated below order {m}; raise the log cap"
            )));
        }
        let Some(jmax) = max_log_at(&res, m) else {
            continue;
        };
        let cols: Vec<u32> = if resonant {
            (1..=jmax + 1).collect()
        } else {
            (0..=jmax).collect()
        };
        if *cols.last().unwrap() > log_cap {
            return Err(Error::BeyondFirstLog {
                requested: m as usize,
                max: log_cap as usize,
            });
        }
        let mut a = vec![vec![T::zero(); cols.len()]; (jmax + 1) as usize];
        for (ci, &jc) in cols.iter().enumerate() {
            let d = apply(&v.add_term(m, jc, T::one()))?;
            for j in 0..=jmax {
                a[j as usize][ci] = d.coeff(m, j) - res.coeff(m, j);
            }
        }
        // triangular: unknown cols[row] pivots on residual row `row`
        let mut x = vec![T::zero(); cols.len()];
        for row in (0..=jmax as usize).rev() {
            let mut acc = -res.coeff(m, row as u32);
            for c2 in row + 1..cols.len() {
                acc = acc - a[row][c2].clone() * x[c2].clone();
            }
            x[row] = acc
                .try_div(&a[row][row])
                .ok_or(Error::IndicialCollision(m))?;
        }
        for (ci, &jc) in cols.iter().enumerate() {
            if !x[ci].is_zero() {
                v = v.add_term(m, jc, x[ci].clone());
            }
        }
    }
    Ok(v)
}
