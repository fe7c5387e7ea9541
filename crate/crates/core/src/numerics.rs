//! Quadrature, Chebyshev elements and small dense least-squares helpers.

use nalgebra::{DMatrix, DVector};

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if m == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// ∫_a^b f with an m-point Gauss–Legendre rule.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (h, c) = (0.5 * (b - a), 0.5 * (b + a));
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| w * f(c + h * x))
        .sum::<f64>()
        * h
}

/// Chebyshev–Gauss–Lobatto nodes on [-1, 1], ascending.
pub fn cheb_nodes(p: usize) -> Vec<f64> {
    (0..=p)
        .map(|j| -(std::f64::consts::PI * j as f64 / p as f64).cos())
        .collect()
}

/// Differentiation matrix on the given nodes (barycentric form).
pub fn diff_matrix(x: &[f64]) -> DMatrix<f64> {
    let m = x.len();
    let w = bary_weights(x);
    let mut d = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut s = 0.0;
        for j in 0..m {
            if i != j {
                d[(i, j)] = w[j] / w[i] / (x[i] - x[j]);
                s += d[(i, j)];
            }
        }
        d[(i, i)] = -s;
    }
    d
}

pub fn bary_weights(x: &[f64]) -> Vec<f64> {
    let m = x.len();
    (0..m)
        .map(|j| {
            let p: f64 = (0..m).filter(|&k| k != j).map(|k| x[j] - x[k]).product();
            1.0 / p
        })
        .collect()
}

/// Barycentric interpolation of nodal values `f` at `t`.
pub fn bary_eval(x: &[f64], w: &[f64], f: &[f64], t: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..x.len() {
        let d = t - x[j];
        if d == 0.0 {
            return f[j];
        }
        let q = w[j] / d;
        num += q * f[j];
        den += q;
    }
    num / den
}

/// Piecewise Chebyshev mesh on [a, b] with a geometric grading toward `a`.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub breaks: Vec<f64>,
    pub p: usize,
    pub ref_nodes: Vec<f64>,
    pub ref_weights: Vec<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
}

impl Mesh {
    /// Elements whose lengths grow by `ratio` from `a` until they reach
    /// `hmax`, then stay uniform.
    pub fn graded(a: f64, b: f64, h0: f64, ratio: f64, hmax: f64, p: usize) -> Mesh {
        let mut breaks = vec![a];
        let mut h = h0;
        let mut x = a;
        while x + h < b - 0.5 * h.min(hmax) {
            x += h;
            breaks.push(x);
            h = (h * ratio).min(hmax);
        }
        breaks.push(b);
        Self::from_breaks(breaks, p)
    }

    pub fn from_breaks(breaks: Vec<f64>, p: usize) -> Mesh {
        let ref_nodes = cheb_nodes(p);
        let ref_weights = bary_weights(&ref_nodes);
        let d1 = diff_matrix(&ref_nodes);
        let d2 = &d1 * &d1;
        Mesh {
            breaks,
            p,
            ref_nodes,
            ref_weights,
            d1,
            d2,
        }
    }

    pub fn elements(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn dofs(&self) -> usize {
        self.elements() * (self.p + 1)
    }

    pub fn interval(&self, e: usize) -> (f64, f64) {
        (self.breaks[e], self.breaks[e + 1])
    }

    /// Physical node positions of element e.
    pub fn nodes(&self, e: usize) -> Vec<f64> {
        let (a, b) = self.interval(e);
        self.ref_nodes
            .iter()
            .map(|t| 0.5 * (a + b) + 0.5 * (b - a) * t)
            .collect()
    }

    pub fn all_nodes(&self) -> Vec<f64> {
        (0..self.elements()).flat_map(|e| self.nodes(e)).collect()
    }

    /// Element containing x (clamped to the mesh).
    pub fn locate(&self, x: f64) -> usize {
        let m = self.elements();
        match self.breaks.binary_search_by(|b| b.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(m - 1),
            Err(i) => i.saturating_sub(1).min(m - 1),
        }
    }

    fn reference(&self, e: usize, x: f64) -> (f64, f64) {
        let (a, b) = self.interval(e);
        ((2.0 * x - a - b) / (b - a), 2.0 / (b - a))
    }

    /// Interpolate global nodal values at x.
    pub fn eval(&self, vals: &[f64], x: f64) -> f64 {
        let e = self.locate(x);
        let (t, _) = self.reference(e, x);
        let f = &vals[e * (self.p + 1)..(e + 1) * (self.p + 1)];
        bary_eval(&self.ref_nodes, &self.ref_weights, f, t)
    }

    /// Value, first and second derivative at x.
    pub fn eval_d2(&self, vals: &[f64], x: f64) -> (f64, f64, f64) {
        let e = self.locate(x);
        let (t, s) = self.reference(e, x);
        let f = &vals[e * (self.p + 1)..(e + 1) * (self.p + 1)];
        let fv = DVector::from_column_slice(f);
        let d1 = &self.d1 * &fv;
        let d2 = &self.d2 * &fv;
        (
            bary_eval(&self.ref_nodes, &self.ref_weights, f, t),
            s * bary_eval(&self.ref_nodes, &self.ref_weights, d1.as_slice(), t),
            s * s * bary_eval(&self.ref_nodes, &self.ref_weights, d2.as_slice(), t),
        )
    }

    /// Nodal first and second derivatives of element e.
    pub fn element_derivs(&self, vals: &[f64], e: usize) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = self.interval(e);
        let s = 2.0 / (b - a);
        let f = DVector::from_column_slice(&vals[e * (self.p + 1)..(e + 1) * (self.p + 1)]);
        let d1 = (&self.d1 * &f) * s;
        let d2 = (&self.d2 * &f) * (s * s);
        (d1.as_slice().to_vec(), d2.as_slice().to_vec())
    }

    /// ∫ over the mesh of g(x, i) where i is a mesh-sample callback, using
    /// Gauss–Legendre per element.
    pub fn integrate(&self, f: impl Fn(f64) -> f64, m: usize) -> f64 {
        let rule = gauss_legendre(m);
        (0..self.elements())
            .map(|e| {
                let (a, b) = self.interval(e);
                integrate(&f, a, b, &rule)
            })
            .sum()
    }
}

/// Least-squares solve `min |A x - b|` via SVD; returns (x, condition number).
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    // column scaling keeps the condition estimate meaningful
    let scales: Vec<f64> = (0..a.ncols())
        .map(|j| a.column(j).norm().max(f64::MIN_POSITIVE))
        .collect();
    let mut s = a.clone();
    for (j, sc) in scales.iter().enumerate() {
        s.column_mut(j).scale_mut(1.0 / sc);
    }
    let svd = s.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let mut x = svd.solve(b, 1e-300).expect("svd solve");
    for (j, sc) in scales.iter().enumerate() {
        x[j] /= sc;
    }
    (x, smax / smin)
}

/// Richardson extrapolation of values computed at steps h, h/2, h/4, ...
/// for an error expansion in powers h^{p0}, h^{p0+dp}, ...
/// Returns the final estimate and the last correction size.
pub fn richardson(vals: &[f64], p0: i32, dp: i32) -> (f64, f64) {
    let mut t: Vec<f64> = vals.to_vec();
    let mut p = p0;
    let mut last = f64::INFINITY;
    while t.len() > 1 {
        let f = 2f64.powi(p);
        let next: Vec<f64> = t
            .windows(2)
            .map(|w| (f * w[1] - w[0]) / (f - 1.0))
            .collect();
        last = (next[next.len() - 1] - t[t.len() - 1]).abs();
        t = next;
        p += dp;
    }
    (t[0], last)
}
