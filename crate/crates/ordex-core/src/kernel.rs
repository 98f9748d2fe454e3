//! Discretized algebra of piecewise-smooth two-variable kernels.
//!
//! A kernel here is the smooth part `f~(t', t)` of a causal distribution
//! `f~(t', t) Θ(t' - t)`, sampled on the lower triangle `t' >= t` of a
//! uniform grid (convention `Θ(0) = 1`, so the diagonal belongs to the
//! support). The product of two such kernels is the Volterra composition
//!
//! ```text
//! (f * g)(t', t) = ∫_t^{t'} f~(t', τ) g~(τ, t) dτ,
//! ```
//!
//! discretized with composite trapezoidal weights so that causality (strict
//! upper triangle identically zero) is preserved exactly and second-kind
//! Volterra equations solve by forward substitution.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Kernels at or above this node count parallelize row/column loops.
const PAR_THRESHOLD: usize = 128;

/// Maximum total jet order `q + r` supported by [`Kernel2::diag_jet`].
pub const MAX_JET_ORDER: usize = 4;

type JetCache = Arc<Mutex<HashMap<(usize, usize), Arc<DiagFn>>>>;

/// A smooth one-variable function sampled on the grid nodes.
#[derive(Debug, Clone)]
pub struct DiagFn {
    grid: Arc<TimeGrid>,
    values: Vec<Complex64>,
}

impl DiagFn {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::DimensionMismatch { expected: grid.n(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite { context: "constructing a diagonal function", index: Some((i, i)) });
        }
        Ok(DiagFn { grid, values })
    }

    pub fn sample(grid: Arc<TimeGrid>, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&t| f(t)).collect();
        DiagFn::new(grid, values)
    }

    pub fn constant(grid: Arc<TimeGrid>, c: Complex64) -> Self {
        let n = grid.n();
        DiagFn { grid, values: vec![c; n] }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_exactly_zero(&self) -> bool {
        self.values.iter().all(|v| v.re == 0.0 && v.im == 0.0)
    }

    pub fn add(&self, other: &DiagFn) -> Result<DiagFn> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(DiagFn { grid: self.grid.clone(), values })
    }

    pub fn scale(&self, c: Complex64) -> DiagFn {
        DiagFn {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn mul(&self, other: &DiagFn) -> Result<DiagFn> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(DiagFn { grid: self.grid.clone(), values })
    }

    /// Order-2 first derivative: central differences inside, one-sided at the
    /// two endpoints. Exact on constants and affine data.
    pub fn derivative(&self) -> DiagFn {
        let n = self.grid.n();
        let h = self.grid.h();
        let v = &self.values;
        let mut out = vec![Complex64::default(); n];
        out[0] = (-1.5 * v[0] + 2.0 * v[1] - 0.5 * v[2]) / h;
        for i in 1..n - 1 {
            out[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
        }
        out[n - 1] = (0.5 * v[n - 3] - 2.0 * v[n - 2] + 1.5 * v[n - 1]) / h;
        DiagFn { grid: self.grid.clone(), values: out }
    }

    /// `m`-fold application of [`DiagFn::derivative`].
    pub fn derivative_n(&self, m: usize) -> DiagFn {
        let mut cur = self.clone();
        for _ in 0..m {
            cur = cur.derivative();
        }
        cur
    }
}

/// The smooth part of an element of the causal kernel class, sampled on the
/// lower triangle of its grid. Entries above the diagonal are exactly zero.
#[derive(Debug, Clone)]
pub struct Kernel2 {
    grid: Arc<TimeGrid>,
    values: Vec<Complex64>,
    jets: JetCache,
}

#[inline]
fn idx(n: usize, i: usize, j: usize) -> usize {
    i * n + j
}

impl Kernel2 {
    fn from_lower(grid: Arc<TimeGrid>, values: Vec<Complex64>) -> Result<Self> {
        let n = grid.n();
        debug_assert_eq!(values.len(), n * n);
        debug_assert!((0..n).all(|i| (i + 1..n).all(|j| {
            let v = values[idx(n, i, j)];
            v.re == 0.0 && v.im == 0.0
        })));
        for i in 0..n {
            for j in 0..=i {
                let v = values[idx(n, i, j)];
                if !v.re.is_finite() || !v.im.is_finite() {
                    return Err(Error::NonFinite { context: "constructing a kernel", index: Some((i, j)) });
                }
            }
        }
        Ok(Kernel2 { grid, values, jets: Arc::new(Mutex::new(HashMap::new())) })
    }

    /// Sample `f(t', t)` on the lower triangle `t' >= t`.
    pub fn sample(grid: Arc<TimeGrid>, f: impl Fn(f64, f64) -> Complex64) -> Result<Self> {
        let n = grid.n();
        let mut values = vec![Complex64::default(); n * n];
        for i in 0..n {
            let tp = grid.node(i);
            for j in 0..=i {
                values[idx(n, i, j)] = f(tp, grid.node(j));
            }
        }
        Kernel2::from_lower(grid, values)
    }

    /// Kernel whose smooth part depends on `t'` only: row `i` is constant
    /// `row_vals[i]` across the triangle.
    pub fn from_row_values(grid: Arc<TimeGrid>, row_vals: &[Complex64]) -> Result<Self> {
        let n = grid.n();
        if row_vals.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: row_vals.len() });
        }
        let mut values = vec![Complex64::default(); n * n];
        for i in 0..n {
            for j in 0..=i {
                values[idx(n, i, j)] = row_vals[i];
            }
        }
        Kernel2::from_lower(grid, values)
    }

    pub fn zeros(grid: Arc<TimeGrid>) -> Self {
        let n = grid.n();
        Kernel2 {
            grid,
            values: vec![Complex64::default(); n * n],
            jets: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    /// The Heaviside kernel: smooth part identically one on the triangle.
    pub fn theta(grid: Arc<TimeGrid>) -> Self {
        let n = grid.n();
        let mut values = vec![Complex64::default(); n * n];
        for i in 0..n {
            for j in 0..=i {
                values[idx(n, i, j)] = Complex64::new(1.0, 0.0);
            }
        }
        Kernel2 { grid, values, jets: Arc::new(Mutex::new(HashMap::new())) }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[idx(self.grid.n(), i, j)]
    }

    pub fn diagonal(&self) -> DiagFn {
        let n = self.grid.n();
        let values = (0..n).map(|i| self.at(i, i)).collect();
        DiagFn { grid: self.grid.clone(), values }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn diag_sup_norm(&self) -> f64 {
        (0..self.grid.n()).map(|i| self.at(i, i).norm()).fold(0.0, f64::max)
    }

    pub fn is_exactly_zero(&self) -> bool {
        self.values.iter().all(|v| v.re == 0.0 && v.im == 0.0)
    }

    pub fn max_abs_diff(&self, other: &Kernel2) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn add(&self, other: &Kernel2) -> Result<Kernel2> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Kernel2::from_lower(self.grid.clone(), values)
    }

    pub fn sub(&self, other: &Kernel2) -> Result<Kernel2> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: Complex64) -> Kernel2 {
        let n = self.grid.n();
        let mut values = vec![Complex64::default(); n * n];
        for i in 0..n {
            for j in 0..=i {
                values[idx(n, i, j)] = c * self.values[idx(n, i, j)];
            }
        }
        Kernel2 { grid: self.grid.clone(), values, jets: Arc::new(Mutex::new(HashMap::new())) }
    }

    /// Multiply row `i` by `a(t_i)`: realizes `a(t') f~(t', t)`.
    pub fn scale_rows(&self, a: &DiagFn) -> Result<Kernel2> {
        if !self.grid.same_as(&a.grid) {
            return Err(Error::GridMismatch);
        }
        let n = self.grid.n();
        let mut values = vec![Complex64::default(); n * n];
        for i in 0..n {
            let c = a.values[i];
            for j in 0..=i {
                values[idx(n, i, j)] = c * self.values[idx(n, i, j)];
            }
        }
        Kernel2::from_lower(self.grid.clone(), values)
    }

    /// Multiply column `j` by `b(t_j)`: realizes `f~(t', t) b(t)`.
    pub fn scale_cols(&self, b: &DiagFn) -> Result<Kernel2> {
        if !self.grid.same_as(&b.grid) {
            return Err(Error::GridMismatch);
        }
        let n = self.grid.n();
        let mut values = vec![Complex64::default(); n * n];
        for i in 0..n {
            for j in 0..=i {
                values[idx(n, i, j)] = self.values[idx(n, i, j)] * b.values[j];
            }
        }
        Kernel2::from_lower(self.grid.clone(), values)
    }

    /// Diagonal jet `f~^(q,r)(t, t)`, the mixed partial derivative of the
    /// smooth part evaluated on the diagonal, by order-2 finite differences.
    ///
    /// Only the lower triangle carries samples, so the stencil is forward in
    /// `t'` and backward in `t`; within `q + r` nodes of the interval ends the
    /// value comes from quadratic extrapolation of the nearest interior
    /// stencil values. Results are memoized per kernel.
    pub fn diag_jet(&self, q: usize, r: usize) -> Result<Arc<DiagFn>> {
        if q + r > MAX_JET_ORDER {
            return Err(Error::JetOrderUnsupported { q, r, max: MAX_JET_ORDER });
        }
        {
            let cache = self.jets.lock().unwrap();
            if let Some(hit) = cache.get(&(q, r)) {
                return Ok(hit.clone());
            }
        }
        let computed = Arc::new(self.compute_diag_jet(q, r)?);
        let mut cache = self.jets.lock().unwrap();
        Ok(cache.entry((q, r)).or_insert(computed).clone())
    }

    fn compute_diag_jet(&self, q: usize, r: usize) -> Result<DiagFn> {
        let n = self.grid.n();
        let h = self.grid.h();
        let fwd_q = one_sided_coeffs(q);
        let fwd_r = one_sided_coeffs(r);
        let scale = h.powi((q + r) as i32);

        // Direct tensor stencils fit for lo <= i <= hi.
        let lo = if r == 0 { 0 } else { r + 1 };
        let hi = if q == 0 { n - 1 } else { n - 2 - q };
        if lo + 1 >= hi + 1 || hi < lo {
            return Err(Error::GridTooSmall { needed: q + r + 4, have: n });
        }

        let mut out = vec![Complex64::default(); n];
        for i in lo..=hi {
            let mut acc = Complex64::default();
            for (a, &ca) in fwd_q.iter().enumerate() {
                // backward stencil in t: coefficient picks up (-1)^r
                for (b, &cb) in fwd_r.iter().enumerate() {
                    let w = ca * cb * if r % 2 == 1 { -1.0 } else { 1.0 };
                    acc += w * self.at(i + a, i - b);
                }
            }
            out[i] = acc / scale;
        }
        let nodes = self.grid.nodes();
        for i in 0..lo {
            out[i] = extrapolate(nodes, &out, lo, hi, i);
        }
        for i in hi + 1..n {
            out[i] = extrapolate(nodes, &out, lo, hi, i);
        }
        DiagFn::new(self.grid.clone(), out)
    }

    /// Entrywise `∂f~/∂t'` on the lower triangle (stencils run down each
    /// column; the two shortest columns are filled by extrapolation along
    /// their rows).
    pub fn d_dtprime(&self) -> Kernel2 {
        let n = self.grid.n();
        let h = self.grid.h();
        let mut values = vec![Complex64::default(); n * n];
        for j in 0..n.saturating_sub(2) {
            // column has at least 3 entries
            values[idx(n, j, j)] =
                (-1.5 * self.at(j, j) + 2.0 * self.at(j + 1, j) - 0.5 * self.at(j + 2, j)) / h;
            for i in j + 1..n - 1 {
                values[idx(n, i, j)] = (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * h);
            }
            values[idx(n, n - 1, j)] =
                (0.5 * self.at(n - 3, j) - 2.0 * self.at(n - 2, j) + 1.5 * self.at(n - 1, j)) / h;
        }
        // Entries (n-2, n-2), (n-1, n-2), (n-1, n-1): extrapolate along the row.
        let nodes = self.grid.nodes();
        for (i, j) in [(n - 2, n - 2), (n - 1, n - 2), (n - 1, n - 1)] {
            let row: Vec<Complex64> = (0..=n - 3).map(|jj| values[idx(n, i, jj)]).collect();
            values[idx(n, i, j)] = extrapolate(nodes, &row, 0, n - 3, j);
        }
        Kernel2 { grid: self.grid.clone(), values, jets: Arc::new(Mutex::new(HashMap::new())) }
    }

    /// Entrywise `∂f~/∂t` on the lower triangle (stencils run along each row;
    /// the two shortest rows are filled by extrapolation down their columns).
    pub fn d_dt(&self) -> Kernel2 {
        let n = self.grid.n();
        let h = self.grid.h();
        let mut values = vec![Complex64::default(); n * n];
        for i in 2..n {
            values[idx(n, i, 0)] =
                (-1.5 * self.at(i, 0) + 2.0 * self.at(i, 1) - 0.5 * self.at(i, 2)) / h;
            for j in 1..i {
                values[idx(n, i, j)] = (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * h);
            }
            values[idx(n, i, i)] =
                (0.5 * self.at(i, i - 2) - 2.0 * self.at(i, i - 1) + 1.5 * self.at(i, i)) / h;
        }
        let nodes = self.grid.nodes();
        for (i, j) in [(1, 0), (1, 1), (0, 0)] {
            let col: Vec<Complex64> = (0..n).map(|ii| values[idx(n, ii, j)]).collect();
            values[idx(n, i, j)] = extrapolate(nodes, &col, 2.max(j), n - 1, i);
        }
        Kernel2 { grid: self.grid.clone(), values, jets: Arc::new(Mutex::new(HashMap::new())) }
    }

    pub fn d_dtprime_n(&self, m: usize) -> Kernel2 {
        let mut cur = self.clone();
        for _ in 0..m {
            cur = cur.d_dtprime();
        }
        cur
    }

    pub fn d_dt_n(&self, m: usize) -> Kernel2 {
        let mut cur = self.clone();
        for _ in 0..m {
            cur = cur.d_dt();
        }
        cur
    }

    /// Cumulative column integral `∫_t^{t'} f~(σ, t) dσ` with trapezoidal
    /// weights; equals composing with the Heaviside kernel on the left but
    /// costs O(n²).
    pub fn cumint_columns(&self) -> Kernel2 {
        let n = self.grid.n();
        let h = self.grid.h();
        let mut values = vec![Complex64::default(); n * n];
        for j in 0..n {
            let mut acc = Complex64::default();
            for i in j + 1..n {
                acc += 0.5 * h * (self.at(i - 1, j) + self.at(i, j));
                values[idx(n, i, j)] = acc;
            }
        }
        Kernel2 { grid: self.grid.clone(), values, jets: Arc::new(Mutex::new(HashMap::new())) }
    }
}

/// Forward one-sided finite-difference coefficients of order-2 accuracy for
/// derivative order `d` (0..=4), to be divided by `h^d`.
fn one_sided_coeffs(d: usize) -> &'static [f64] {
    match d {
        0 => &[1.0],
        1 => &[-1.5, 2.0, -0.5],
        2 => &[2.0, -5.0, 4.0, -1.0],
        3 => &[-2.5, 9.0, -12.0, 7.0, -1.5],
        4 => &[3.0, -14.0, 26.0, -24.0, 11.0, -2.0],
        _ => unreachable!("jet orders above 4 are rejected earlier"),
    }
}

/// Quadratic (or, with only two interior values, linear) extrapolation of the
/// values `data[lo..=hi]` to node `target`, using the nearest three nodes.
fn extrapolate(nodes: &[f64], data: &[Complex64], lo: usize, hi: usize, target: usize) -> Complex64 {
    let x = nodes[target];
    if hi - lo >= 2 {
        let (i0, i1, i2) = if target < lo { (lo, lo + 1, lo + 2) } else { (hi - 2, hi - 1, hi) };
        let (x0, x1, x2) = (nodes[i0], nodes[i1], nodes[i2]);
        let l0 = ((x - x1) * (x - x2)) / ((x0 - x1) * (x0 - x2));
        let l1 = ((x - x0) * (x - x2)) / ((x1 - x0) * (x1 - x2));
        let l2 = ((x - x0) * (x - x1)) / ((x2 - x0) * (x2 - x1));
        l0 * data[i0] + l1 * data[i1] + l2 * data[i2]
    } else {
        let (i0, i1) = if target < lo { (lo, lo + 1) } else { (hi - 1, hi) };
        let (x0, x1) = (nodes[i0], nodes[i1]);
        let w1 = (x - x0) / (x1 - x0);
        (1.0 - w1) * data[i0] + w1 * data[i1]
    }
}

/// Volterra composition `(f * g)(t', t) = ∫_t^{t'} f~(t', τ) g~(τ, t) dτ` by
/// composite trapezoid over the nodes between `t` and `t'`. The diagonal of
/// the result is exactly zero.
pub fn vcompose(f: &Kernel2, g: &Kernel2) -> Result<Kernel2> {
    if !f.grid.same_as(&g.grid) {
        return Err(Error::GridMismatch);
    }
    let n = f.grid.n();
    let h = f.grid.h();

    // Transpose g so the inner reduction runs over two contiguous slices.
    let mut gt = vec![Complex64::default(); n * n];
    for k in 0..n {
        for j in 0..=k {
            gt[idx(n, j, k)] = g.values[idx(n, k, j)];
        }
    }

    let mut values = vec![Complex64::default(); n * n];
    let row_op = |(i, out_row): (usize, &mut [Complex64])| {
        let f_row = &f.values[i * n..(i + 1) * n];
        for j in 0..i {
            let g_col = &gt[j * n..(j + 1) * n];
            let mut s = Complex64::default();
            for k in j..=i {
                s += f_row[k] * g_col[k];
            }
            s -= 0.5 * (f_row[j] * g_col[j] + f_row[i] * g_col[i]);
            out_row[j] = h * s;
        }
    };
    if n >= PAR_THRESHOLD {
        values.par_chunks_mut(n).enumerate().for_each(row_op);
    } else {
        values.chunks_mut(n).enumerate().for_each(row_op);
    }
    Kernel2::from_lower(f.grid.clone(), values)
}

/// Closed-form sampled power of the Heaviside kernel:
/// `Θ^{*k}` has smooth part `(t' - t)^{k-1} / (k-1)!`.
pub fn theta_power(k: usize, grid: Arc<TimeGrid>) -> Result<Kernel2> {
    if k < 1 {
        return Err(Error::InvalidThetaPower(k));
    }
    let fact: f64 = (1..k).map(|m| m as f64).product();
    Kernel2::sample(grid, |tp, t| Complex64::new((tp - t).powi(k as i32 - 1) / fact, 0.0))
}

/// Solve the second-kind Volterra equation `r = x + q * r` by forward
/// substitution down each column with trapezoidal weights.
///
/// The diagonal of `r` equals the diagonal of `x`. Any intermediate magnitude
/// above `overflow_bound` aborts with a diagnostic.
pub fn volterra_solve(q: &Kernel2, x: &Kernel2, overflow_bound: f64) -> Result<Kernel2> {
    if !q.grid.same_as(&x.grid) {
        return Err(Error::GridMismatch);
    }
    let n = q.grid.n();
    let h = q.grid.h();

    let solve_col = |j: usize| -> Result<Vec<Complex64>> {
        let mut col = vec![Complex64::default(); n];
        col[j] = x.at(j, j);
        for i in j + 1..n {
            let q_row = &q.values[i * n..(i + 1) * n];
            let mut s = 0.5 * q_row[j] * col[j];
            for k in j + 1..i {
                s += q_row[k] * col[k];
            }
            let pivot = Complex64::new(1.0, 0.0) - 0.5 * h * q_row[i];
            let v = (x.at(i, j) + h * s) / pivot;
            if !v.re.is_finite() || !v.im.is_finite() || v.norm() > overflow_bound {
                return Err(Error::VolterraOverflow { row: i, col: j, bound: overflow_bound });
            }
            col[i] = v;
        }
        Ok(col)
    };

    let cols: Vec<Vec<Complex64>> = if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().map(solve_col).collect::<Result<_>>()?
    } else {
        (0..n).map(solve_col).collect::<Result<_>>()?
    };

    let mut values = vec![Complex64::default(); n * n];
    for (j, col) in cols.iter().enumerate() {
        for i in j..n {
            values[idx(n, i, j)] = col[i];
        }
    }
    Kernel2::from_lower(q.grid.clone(), values)
}

/// The Volterra resolvent `r = Σ_{k>=1} x^{*k}`, i.e. the solution of
/// `r = x + x * r`.
pub fn volterra_resolvent(x: &Kernel2, overflow_bound: f64) -> Result<Kernel2> {
    volterra_solve(x, x, overflow_bound)
}
