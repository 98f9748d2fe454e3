//! Arithmetic in the full causal distribution class: a piecewise-smooth
//! kernel part plus a finite list of Dirac-delta derivative terms
//! `Σ_i c_i(t) δ^(i)(t' - t)` supported on the diagonal.
//!
//! The non-commutative product acts by case analysis. Smooth parts compose by
//! Volterra quadrature; a delta derivative of order `j` acting on a smooth
//! kernel produces the `j`-th derivative kernel plus diagonal-jet delta terms
//! of lower order; delta-delta products shift orders and pick up Leibniz
//! derivative spillover of the coefficients. All results are kept in the
//! canonical form where every delta coefficient is a function of the *right*
//! time variable `t`.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::{vcompose, volterra_resolvent, volterra_solve, DiagFn, Kernel2, MAX_JET_ORDER};

/// Default cap on Dirac-delta derivative orders. Exceeding it is an error,
/// never a silent truncation; runaway order growth indicates misuse.
pub const DEFAULT_DELTA_CAP: usize = 8;

/// A delta of order `j` acting on a smooth kernel needs diagonal jets up to
/// order `j - 1`, so the smooth-delta rules support orders up to this bound.
pub const MAX_SMOOTH_DELTA_ORDER: usize = MAX_JET_ORDER + 1;

/// Which time variable a raw delta coefficient depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoeffVar {
    /// Canonical: coefficient of the right variable `t`.
    T,
    /// Coefficient of the left variable `t'`; rewritten on canonicalization.
    TPrime,
}

/// A delta term as supplied by a caller, before canonicalization.
#[derive(Debug, Clone)]
pub struct RawDeltaTerm {
    pub order: usize,
    pub coeff: DiagFn,
    pub var: CoeffVar,
}

/// A canonical delta term `coeff(t) δ^(order)(t' - t)`.
#[derive(Debug, Clone)]
pub struct DeltaTerm {
    pub order: usize,
    pub coeff: DiagFn,
}

/// An element of the distribution class: optional smooth causal kernel plus
/// canonical delta terms with distinct orders (kept sorted by order).
#[derive(Debug, Clone)]
pub struct StarDist {
    grid: Arc<TimeGrid>,
    smooth: Option<Kernel2>,
    deltas: Vec<DeltaTerm>,
}

impl StarDist {
    pub fn zero(grid: Arc<TimeGrid>) -> Self {
        StarDist { grid, smooth: None, deltas: Vec::new() }
    }

    /// The product identity `1_*`, i.e. the Dirac delta with unit coefficient.
    pub fn identity(grid: Arc<TimeGrid>) -> Self {
        let one = DiagFn::constant(grid.clone(), Complex64::new(1.0, 0.0));
        StarDist { grid, smooth: None, deltas: vec![DeltaTerm { order: 0, coeff: one }] }
    }

    pub fn from_kernel(kernel: Kernel2) -> Self {
        let grid = kernel.grid().clone();
        if kernel.is_exactly_zero() {
            StarDist::zero(grid)
        } else {
            StarDist { grid, smooth: Some(kernel), deltas: Vec::new() }
        }
    }

    /// A single canonical delta term `coeff(t) δ^(order)`.
    pub fn delta(order: usize, coeff: DiagFn, cap: usize) -> Result<Self> {
        if order > cap {
            return Err(Error::DeltaOrderOverflow { order, cap });
        }
        let grid = coeff.grid().clone();
        let deltas = if coeff.is_exactly_zero() {
            Vec::new()
        } else {
            vec![DeltaTerm { order, coeff }]
        };
        Ok(StarDist { grid, smooth: None, deltas })
    }

    /// `δ^(order)` with unit coefficient.
    pub fn delta_pure(order: usize, grid: Arc<TimeGrid>, cap: usize) -> Result<Self> {
        StarDist::delta(order, DiagFn::constant(grid, Complex64::new(1.0, 0.0)), cap)
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn smooth(&self) -> Option<&Kernel2> {
        self.smooth.as_ref()
    }

    pub fn smooth_or_zero(&self) -> Kernel2 {
        self.smooth.clone().unwrap_or_else(|| Kernel2::zeros(self.grid.clone()))
    }

    pub fn deltas(&self) -> &[DeltaTerm] {
        &self.deltas
    }

    pub fn delta_coeff(&self, order: usize) -> Option<&DiagFn> {
        self.deltas.iter().find(|t| t.order == order).map(|t| &t.coeff)
    }

    pub fn max_delta_order(&self) -> Option<usize> {
        self.deltas.last().map(|t| t.order)
    }

    pub fn is_smooth(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.smooth.is_none() && self.deltas.is_empty()
    }

    /// Sup norm of the smooth part plus sup norms of all delta coefficients.
    pub fn norm(&self) -> f64 {
        let s = self.smooth.as_ref().map_or(0.0, |k| k.sup_norm());
        s + self.delta_part_norm()
    }

    pub fn delta_part_norm(&self) -> f64 {
        self.deltas.iter().map(|t| t.coeff.sup_norm()).sum()
    }

    pub fn add(&self, other: &StarDist) -> Result<StarDist> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch);
        }
        let mut acc = Accumulator::new(self.grid.clone());
        acc.absorb(self)?;
        acc.absorb(other)?;
        acc.finish()
    }

    pub fn sub(&self, other: &StarDist) -> Result<StarDist> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: Complex64) -> StarDist {
        let smooth = self.smooth.as_ref().map(|k| k.scale(c));
        let deltas = self
            .deltas
            .iter()
            .map(|t| DeltaTerm { order: t.order, coeff: t.coeff.scale(c) })
            .collect();
        let mut out = StarDist { grid: self.grid.clone(), smooth, deltas };
        out.prune();
        out
    }

    /// Drop the delta part, returning the smooth-only distribution and the
    /// total sup norm of what was removed.
    pub fn split_smooth(&self) -> (StarDist, f64) {
        let residual = self.delta_part_norm();
        let out = StarDist { grid: self.grid.clone(), smooth: self.smooth.clone(), deltas: Vec::new() };
        (out, residual)
    }

    pub fn star(&self, other: &StarDist) -> Result<StarDist> {
        star_with_cap(self, other, DEFAULT_DELTA_CAP)
    }

    fn prune(&mut self) {
        if self.smooth.as_ref().is_some_and(|k| k.is_exactly_zero()) {
            self.smooth = None;
        }
        self.deltas.retain(|t| !t.coeff.is_exactly_zero());
    }
}

/// Distance in the [`StarDist::norm`] sense; delta parts of different orders
/// contribute their full coefficient norms.
pub fn distance(a: &StarDist, b: &StarDist) -> Result<f64> {
    Ok(a.sub(b)?.norm())
}

struct Accumulator {
    grid: Arc<TimeGrid>,
    smooth: Option<Kernel2>,
    deltas: BTreeMap<usize, DiagFn>,
}

impl Accumulator {
    fn new(grid: Arc<TimeGrid>) -> Self {
        Accumulator { grid, smooth: None, deltas: BTreeMap::new() }
    }

    fn push_smooth(&mut self, k: Kernel2) -> Result<()> {
        self.smooth = Some(match self.smooth.take() {
            None => k,
            Some(acc) => acc.add(&k)?,
        });
        Ok(())
    }

    fn push_delta(&mut self, order: usize, coeff: DiagFn) -> Result<()> {
        match self.deltas.remove(&order) {
            None => {
                self.deltas.insert(order, coeff);
            }
            Some(acc) => {
                self.deltas.insert(order, acc.add(&coeff)?);
            }
        }
        Ok(())
    }

    fn absorb(&mut self, d: &StarDist) -> Result<()> {
        if let Some(k) = &d.smooth {
            self.push_smooth(k.clone())?;
        }
        for t in &d.deltas {
            self.push_delta(t.order, t.coeff.clone())?;
        }
        Ok(())
    }

    fn finish(self) -> Result<StarDist> {
        let mut out = StarDist {
            grid: self.grid,
            smooth: self.smooth,
            deltas: self
                .deltas
                .into_iter()
                .map(|(order, coeff)| DeltaTerm { order, coeff })
                .collect(),
        };
        out.prune();
        Ok(out)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut out = 1.0_f64;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

fn is_exact_ones(c: &DiagFn) -> bool {
    c.values().iter().all(|v| v.re == 1.0 && v.im == 0.0)
}

/// Rewrite a left-variable coefficient against a delta derivative into
/// canonical right-variable terms:
/// `c(t') δ^(k) = Σ_{m=0}^{k} (-1)^m C(k, m) c^(m)(t) δ^(k-m)`.
fn rewrite_tprime(order: usize, coeff: &DiagFn) -> Vec<(usize, DiagFn)> {
    let mut out = Vec::with_capacity(order + 1);
    for m in 0..=order {
        let mut c = coeff.derivative_n(m);
        let w = binomial(order, m) * if m % 2 == 1 { -1.0 } else { 1.0 };
        if w != 1.0 {
            c = c.scale(Complex64::new(w, 0.0));
        }
        out.push((order - m, c));
    }
    out
}

/// Bring a distribution with per-term variable flags into canonical form.
/// Left-variable coefficients are expanded with the finite Leibniz rule,
/// introducing lower-order terms with finite-difference derivatives of the
/// coefficient.
pub fn canonicalize(
    grid: Arc<TimeGrid>,
    smooth: Option<Kernel2>,
    terms: Vec<RawDeltaTerm>,
    cap: usize,
) -> Result<StarDist> {
    let mut acc = Accumulator::new(grid.clone());
    if let Some(k) = smooth {
        if !k.grid().same_as(&grid) {
            return Err(Error::GridMismatch);
        }
        acc.push_smooth(k)?;
    }
    for term in terms {
        if term.order > cap {
            return Err(Error::DeltaOrderOverflow { order: term.order, cap });
        }
        if !term.coeff.grid().same_as(&grid) {
            return Err(Error::GridMismatch);
        }
        match term.var {
            CoeffVar::T => acc.push_delta(term.order, term.coeff)?,
            CoeffVar::TPrime => {
                for (ord, c) in rewrite_tprime(term.order, &term.coeff) {
                    acc.push_delta(ord, c)?;
                }
            }
        }
    }
    acc.finish()
}

/// `c(t) δ^(i) * g` for smooth `g`: scale the rows of `g` by `c(t')`, then
/// apply the order-`i` left delta action (derivative kernel plus diagonal
/// jets, already in canonical form).
fn delta_star_smooth(order: usize, coeff: &DiagFn, g: &Kernel2, acc: &mut Accumulator) -> Result<()> {
    let p = if is_exact_ones(coeff) { g.clone() } else { g.scale_rows(coeff)? };
    if order == 0 {
        return acc.push_smooth(p);
    }
    if order > MAX_SMOOTH_DELTA_ORDER {
        return Err(Error::JetOrderUnsupported { q: order - 1, r: 0, max: MAX_JET_ORDER });
    }
    for k in 0..order {
        let jet = p.diag_jet(order - 1 - k, 0)?;
        acc.push_delta(k, (*jet).clone())?;
    }
    acc.push_smooth(p.d_dtprime_n(order))
}

/// `f * c(t) δ^(j)` for smooth `f`: apply the right delta action (derivative
/// kernel in `t` plus left-variable diagonal jets, which are rewritten into
/// canonical form), then scale by the coefficient on the right.
fn smooth_star_delta(f: &Kernel2, order: usize, coeff: &DiagFn, acc: &mut Accumulator) -> Result<()> {
    let ones = is_exact_ones(coeff);
    if order == 0 {
        let k = if ones { f.clone() } else { f.scale_cols(coeff)? };
        return acc.push_smooth(k);
    }
    if order > MAX_SMOOTH_DELTA_ORDER {
        return Err(Error::JetOrderUnsupported { q: 0, r: order - 1, max: MAX_JET_ORDER });
    }
    let sign = if order % 2 == 1 { -1.0 } else { 1.0 };
    let mut smooth = f.d_dt_n(order).scale(Complex64::new(sign, 0.0));
    if !ones {
        smooth = smooth.scale_cols(coeff)?;
    }
    acc.push_smooth(smooth)?;
    for k in 0..order {
        // left-variable coefficient f~^(0, j-1-k)(t', t'), with its sign
        let jet = f.diag_jet(0, order - 1 - k)?;
        let s = if (k + order + 1) % 2 == 1 { -1.0 } else { 1.0 };
        let c_prime = if s == 1.0 { (*jet).clone() } else { jet.scale(Complex64::new(s, 0.0)) };
        for (ord, mut c) in rewrite_tprime(k, &c_prime) {
            if !ones {
                c = c.mul(coeff)?;
            }
            acc.push_delta(ord, c)?;
        }
    }
    Ok(())
}

/// `a(t) δ^(i) * b(t) δ^(j) = Σ_{m=0}^{j} (-1)^m C(j, m) a^(m)(t) b(t) δ^(i+j-m)`.
fn delta_star_delta(
    i: usize,
    a: &DiagFn,
    j: usize,
    b: &DiagFn,
    cap: usize,
    acc: &mut Accumulator,
) -> Result<()> {
    if i + j > cap {
        return Err(Error::DeltaOrderOverflow { order: i + j, cap });
    }
    if j == 0 {
        let c = if is_exact_ones(b) { a.clone() } else { a.mul(b)? };
        return acc.push_delta(i, c);
    }
    if is_exact_ones(a) {
        // derivatives of the unit coefficient vanish identically
        return acc.push_delta(i + j, b.clone());
    }
    for m in 0..=j {
        let w = binomial(j, m) * if m % 2 == 1 { -1.0 } else { 1.0 };
        let mut c = a.derivative_n(m).mul(b)?;
        if w != 1.0 {
            c = c.scale(Complex64::new(w, 0.0));
        }
        acc.push_delta(i + j - m, c)?;
    }
    Ok(())
}

/// The non-commutative product on the distribution class, with a configurable
/// cap on the resulting delta orders. Bilinear in both arguments; the result
/// is canonical.
pub fn star_with_cap(a: &StarDist, b: &StarDist, cap: usize) -> Result<StarDist> {
    if !a.grid.same_as(&b.grid) {
        return Err(Error::GridMismatch);
    }
    let mut acc = Accumulator::new(a.grid.clone());
    if let (Some(f), Some(g)) = (&a.smooth, &b.smooth) {
        acc.push_smooth(vcompose(f, g)?)?;
    }
    if let Some(f) = &a.smooth {
        for t in &b.deltas {
            smooth_star_delta(f, t.order, &t.coeff, &mut acc)?;
        }
    }
    for ta in &a.deltas {
        if let Some(g) = &b.smooth {
            delta_star_smooth(ta.order, &ta.coeff, g, &mut acc)?;
        }
        for tb in &b.deltas {
            delta_star_delta(ta.order, &ta.coeff, tb.order, &tb.coeff, cap, &mut acc)?;
        }
    }
    acc.finish()
}

pub fn star(a: &StarDist, b: &StarDist) -> Result<StarDist> {
    star_with_cap(a, b, DEFAULT_DELTA_CAP)
}

/// The inverse of a smooth kernel whose minimal diagonal jet order is `k`,
/// in the structural form `δ^(k+2) * b` with `b` smooth.
///
/// The pair is the primary representation: products against the inverse
/// reassociate through it ([`SmoothInverse::apply_left`] and
/// [`SmoothInverse::apply_right`]), so the factor `b` is only composed and
/// never differentiated. The canonical expansion [`SmoothInverse::expand`]
/// is available for inspection but applies derivative stencils to `b`, which
/// loses accuracy when the leading jet varies strongly.
#[derive(Debug, Clone)]
pub struct SmoothInverse {
    /// Order of the delta-derivative factor, always `k + 2`.
    pub delta_order: usize,
    /// The smooth right factor `b`.
    pub smooth_factor: Kernel2,
}

impl SmoothInverse {
    fn grid(&self) -> &Arc<TimeGrid> {
        self.smooth_factor.grid()
    }

    /// Canonical expansion of `δ^(k+2) * b` as a distribution.
    pub fn expand(&self, cap: usize) -> Result<StarDist> {
        star_with_cap(
            &StarDist::delta_pure(self.delta_order, self.grid().clone(), cap)?,
            &StarDist::from_kernel(self.smooth_factor.clone()),
            cap,
        )
    }

    /// `x * f^{*-1}`, associated as `(x * δ^(k+2)) * b`.
    pub fn apply_right(&self, x: &StarDist, cap: usize) -> Result<StarDist> {
        let xd = star_with_cap(
            x,
            &StarDist::delta_pure(self.delta_order, self.grid().clone(), cap)?,
            cap,
        )?;
        star_with_cap(&xd, &StarDist::from_kernel(self.smooth_factor.clone()), cap)
    }

    /// `f^{*-1} * x`, associated as `δ^(k+2) * (b * x)`.
    pub fn apply_left(&self, x: &StarDist, cap: usize) -> Result<StarDist> {
        let bx = star_with_cap(&StarDist::from_kernel(self.smooth_factor.clone()), x, cap)?;
        star_with_cap(
            &StarDist::delta_pure(self.delta_order, self.grid().clone(), cap)?,
            &bx,
            cap,
        )
    }
}

/// Invert a smooth kernel `f` whose diagonal jets vanish through order
/// `k - 1` while the order-`k` jet is nonzero at every node.
///
/// The factor `b` is built from the factorization `f = (c δ + g) * Θ^{*(k+1)}`
/// with `c(t) = f~^(k,0)(t,t)` and `g~ = (-1)^(k+1) f~^(0,k+1)(t',t)`: the
/// series defining `g` collapses to that derivative kernel, which avoids
/// summing high-order Taylor terms. Writing `(c δ + g)^{*-1} = δ/c + ρ`, the
/// smooth remainder solves the second-kind Volterra equation
/// `c(t') ρ + g/c(t) + g * ρ = 0`, and
/// `b~(t', t) = 1/c(t) + ∫_t^{t'} ρ~(σ, t) dσ`.
pub fn star_inverse_smooth(
    f: &Kernel2,
    k: usize,
    tols: &crate::Tolerances,
) -> Result<SmoothInverse> {
    let grid = f.grid().clone();
    let scale = 1.0 + f.sup_norm();
    for j in 0..k {
        let jet = f.diag_jet(j, 0)?;
        if jet.sup_norm() >= tols.null_rel * scale {
            return Err(Error::NotMinimalJet { k, order: j });
        }
    }
    let c = f.diag_jet(k, 0)?;
    let cmax = c.sup_norm();
    if cmax < tols.null_rel * scale {
        return Err(Error::JetIdenticallyNull { through: k });
    }
    let zero_nodes: Vec<usize> = c
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.norm() < tols.zero_node_rel * cmax)
        .map(|(i, _)| i)
        .collect();
    if !zero_nodes.is_empty() {
        let first = grid.node(zero_nodes[0]);
        return Err(Error::JetZeroCrossing { nodes: zero_nodes, first });
    }

    let inv_c = DiagFn::new(
        grid.clone(),
        c.values().iter().map(|v| Complex64::new(1.0, 0.0) / v).collect(),
    )?;
    let sign = if (k + 1) % 2 == 1 { -1.0 } else { 1.0 };
    let g = f.d_dt_n(k + 1).scale(Complex64::new(sign, 0.0));
    let q = g.scale_rows(&inv_c)?.scale(Complex64::new(-1.0, 0.0));
    let x = q.scale_cols(&inv_c)?;
    let rho = volterra_solve(&q, &x, tols.overflow)?;
    let b = Kernel2::theta(grid.clone())
        .scale_cols(&inv_c)?
        .add(&rho.cumint_columns())?;

    Ok(SmoothInverse { delta_order: k + 2, smooth_factor: b })
}

/// The resolvent `(1_* - h)^{*-1} = δ + Σ_{k>=1} h^{*k}` of a smooth kernel:
/// a unit delta plus the Volterra resolvent of `h`.
pub fn resolvent_delta_minus(h: &Kernel2, overflow_bound: f64) -> Result<StarDist> {
    let grid = h.grid().clone();
    let r = volterra_resolvent(h, overflow_bound)?;
    let mut acc = Accumulator::new(grid.clone());
    acc.push_delta(0, DiagFn::constant(grid, Complex64::new(1.0, 0.0)))?;
    acc.push_smooth(r)?;
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::kernel::theta_power;
    use crate::Tolerances;

    fn re(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn grid(n: usize) -> Arc<TimeGrid> {
        make_grid(0.0, 1.0, n).unwrap()
    }

    /// Pair a distribution with a test function φ(t') at fixed t:
    /// `∫ d(t', t) φ(t') dt' = ∫_t^b d~ φ + Σ_i c_i(t) (-1)^i φ^(i)(t)`.
    /// Used as the 1D distribution-theory oracle for canonicalization.
    fn pair_with(d: &StarDist, phi: &dyn Fn(f64) -> f64, dphi: &[&dyn Fn(f64) -> f64], col: usize) -> Complex64 {
        let g = d.grid();
        let n = g.n();
        let h = g.h();
        let mut acc = Complex64::default();
        if let Some(k) = d.smooth() {
            for i in col..n {
                let w = if i == col || i == n - 1 { 0.5 } else { 1.0 };
                acc += w * h * k.at(i, col) * phi(g.node(i));
            }
        }
        let t = g.node(col);
        for term in d.deltas() {
            let s = if term.order % 2 == 1 { -1.0 } else { 1.0 };
            let der = if term.order == 0 { phi(t) } else { dphi[term.order - 1](t) };
            acc += term.coeff.values()[col] * s * der;
        }
        acc
    }

    #[test]
    fn canonicalize_order_zero_tprime_coefficient() {
        // c(t') δ with c = id: on the diagonal this is just t δ
        let g = grid(101);
        let c = DiagFn::sample(g.clone(), |t| re(t)).unwrap();
        let d = canonicalize(
            g.clone(),
            None,
            vec![RawDeltaTerm { order: 0, coeff: c, var: CoeffVar::TPrime }],
            DEFAULT_DELTA_CAP,
        )
        .unwrap();
        assert_eq!(d.deltas().len(), 1);
        assert_eq!(d.deltas()[0].order, 0);
        for (i, v) in d.deltas()[0].coeff.values().iter().enumerate() {
            assert_eq!(*v, re(g.node(i)));
        }
    }

    #[test]
    fn canonicalize_constant_coefficient_unchanged() {
        let g = grid(101);
        let c = DiagFn::constant(g.clone(), re(3.5));
        let d = canonicalize(
            g.clone(),
            None,
            vec![RawDeltaTerm { order: 2, coeff: c, var: CoeffVar::TPrime }],
            DEFAULT_DELTA_CAP,
        )
        .unwrap();
        // derivatives of a constant vanish exactly, so only the order-2 term survives
        assert_eq!(d.deltas().len(), 1);
        assert_eq!(d.deltas()[0].order, 2);
        assert!(d.deltas()[0].coeff.values().iter().all(|v| *v == re(3.5)));
    }

    #[test]
    fn canonicalize_tprime_times_delta_prime() {
        // t' δ' = t δ' - δ, checked against the 1D pairing oracle with
        // polynomial test functions.
        let g = grid(101);
        let c = DiagFn::sample(g.clone(), |t| re(t)).unwrap();
        let d = canonicalize(
            g.clone(),
            None,
            vec![RawDeltaTerm { order: 1, coeff: c, var: CoeffVar::TPrime }],
            DEFAULT_DELTA_CAP,
        )
        .unwrap();
        let orders: Vec<usize> = d.deltas().iter().map(|t| t.order).collect();
        assert_eq!(orders, vec![0, 1]);
        for (i, _) in g.nodes().iter().enumerate() {
            assert!((d.deltas()[0].coeff.values()[i] - re(-1.0)).norm() < 1e-10);
            assert!((d.deltas()[1].coeff.values()[i] - re(g.node(i))).norm() < 1e-10);
        }

        // oracle: <t' δ'(t'-t), φ> = -d/ds [s φ(s)] at s=t = -φ(t) - t φ'(t)
        let phi = |s: f64| 1.0 + 2.0 * s + 3.0 * s * s;
        let dphi = |s: f64| 2.0 + 6.0 * s;
        for col in [0usize, 17, 50, 100] {
            let t = g.node(col);
            let expect = -(phi(t) + t * dphi(t));
            let got = pair_with(&d, &phi, &[&dphi], col);
            assert!((got - re(expect)).norm() < 1e-9, "col {col}: {got} vs {expect}");
        }
    }

    #[test]
    fn canonicalize_rejects_order_above_cap() {
        let g = grid(101);
        let c = DiagFn::constant(g.clone(), re(1.0));
        let r = canonicalize(
            g,
            None,
            vec![RawDeltaTerm { order: 9, coeff: c, var: CoeffVar::T }],
            DEFAULT_DELTA_CAP,
        );
        assert!(matches!(r, Err(Error::DeltaOrderOverflow { order: 9, cap: 8 })));
    }

    #[test]
    fn identity_is_bit_exact_both_sides() {
        let g = grid(101);
        let one = StarDist::identity(g.clone());
        let k = Kernel2::sample(g.clone(), |tp, t| Complex64::new((tp * t).sin(), tp - t)).unwrap();
        let c1 = DiagFn::sample(g.clone(), |t| Complex64::new(t.cos(), 0.3 * t)).unwrap();
        let c2 = DiagFn::sample(g.clone(), |t| re(1.0 + t * t)).unwrap();
        let mut d = StarDist::from_kernel(k);
        d = d.add(&StarDist::delta(0, c1, 8).unwrap()).unwrap();
        d = d.add(&StarDist::delta(3, c2, 8).unwrap()).unwrap();

        for prod in [star(&one, &d).unwrap(), star(&d, &one).unwrap()] {
            assert_eq!(prod.deltas().len(), d.deltas().len());
            for (a, b) in prod.deltas().iter().zip(d.deltas()) {
                assert_eq!(a.order, b.order);
                assert_eq!(a.coeff.values(), b.coeff.values());
            }
            assert_eq!(prod.smooth().unwrap().max_abs_diff(d.smooth().unwrap()), 0.0);
        }
    }

    #[test]
    fn theta_star_delta_prime_is_delta() {
        let g = grid(101);
        let theta = StarDist::from_kernel(Kernel2::theta(g.clone()));
        let dp = StarDist::delta_pure(1, g.clone(), 8).unwrap();
        let prod = star(&theta, &dp).unwrap();
        assert!(prod.smooth().is_none(), "smooth part must vanish exactly");
        assert_eq!(prod.deltas().len(), 1);
        assert_eq!(prod.deltas()[0].order, 0);
        assert!(prod.deltas()[0].coeff.values().iter().all(|v| *v == re(1.0)));
        // and the mirrored product
        let prod2 = star(&dp, &theta).unwrap();
        assert!(prod2.smooth().is_none());
        assert_eq!(prod2.deltas()[0].order, 0);
        assert!(prod2.deltas()[0].coeff.values().iter().all(|v| *v == re(1.0)));
    }

    #[test]
    fn delta_prime_star_exponential_kernel() {
        // δ' * f = f~^(1,0) Θ + f~(t,t) δ for f~ = e^{t'-t}
        let g = grid(101);
        let f = Kernel2::sample(g.clone(), |tp, t| re((tp - t).exp())).unwrap();
        let prod = star(&StarDist::delta_pure(1, g.clone(), 8).unwrap(), &StarDist::from_kernel(f.clone())).unwrap();
        let h = g.h();
        assert!(prod.smooth().unwrap().max_abs_diff(&f) < 10.0 * h * h);
        assert_eq!(prod.deltas().len(), 1);
        assert_eq!(prod.deltas()[0].order, 0);
        for v in prod.deltas()[0].coeff.values() {
            assert_eq!(*v, re(1.0)); // diagonal sampling is exact
        }
    }

    #[test]
    fn add_and_scale() {
        let g = grid(101);
        let theta = StarDist::from_kernel(Kernel2::theta(g.clone()));
        let z = theta.add(&theta.scale(re(-1.0))).unwrap();
        assert!(z.is_zero());

        let two = StarDist::identity(g.clone()).scale(re(2.0));
        assert_eq!(two.deltas().len(), 1);
        assert!(two.deltas()[0].coeff.values().iter().all(|v| *v == re(2.0)));

        let both = StarDist::delta_pure(0, g.clone(), 8)
            .unwrap()
            .add(&StarDist::delta_pure(1, g, 8).unwrap())
            .unwrap();
        let orders: Vec<usize> = both.deltas().iter().map(|t| t.order).collect();
        assert_eq!(orders, vec![0, 1]);
    }

    #[test]
    fn delta_delta_order_addition_and_cap() {
        let g = grid(101);
        let d2 = StarDist::delta_pure(2, g.clone(), 8).unwrap();
        let d3 = StarDist::delta_pure(3, g.clone(), 8).unwrap();
        let p = star(&d2, &d3).unwrap();
        assert_eq!(p.deltas().len(), 1);
        assert_eq!(p.deltas()[0].order, 5);

        let d6 = StarDist::delta_pure(6, g, 8).unwrap();
        assert!(matches!(star(&d3, &d6), Err(Error::DeltaOrderOverflow { .. })));
    }

    #[test]
    fn delta_delta_leibniz_spillover() {
        // a(t) δ * δ' = a δ^(1+1-0)? no: D_0[a] * D_1[1] = a δ' - a' δ
        let g = grid(101);
        let a = DiagFn::sample(g.clone(), |t| re(t * t)).unwrap();
        let da = StarDist::delta(0, a, 8).unwrap();
        let dp = StarDist::delta_pure(1, g.clone(), 8).unwrap();
        let p = star(&da, &dp).unwrap();
        let orders: Vec<usize> = p.deltas().iter().map(|t| t.order).collect();
        assert_eq!(orders, vec![0, 1]);
        for (i, t) in g.nodes().iter().enumerate() {
            assert!((p.deltas()[1].coeff.values()[i] - re(t * t)).norm() < 1e-12);
            assert!((p.deltas()[0].coeff.values()[i] - re(-2.0 * t)).norm() < 1e-9);
        }
    }

    #[test]
    fn inverse_of_theta_is_delta_prime() {
        let g = grid(101);
        let tols = Tolerances::default();
        let inv = star_inverse_smooth(&Kernel2::theta(g.clone()), 0, &tols).unwrap();
        assert_eq!(inv.delta_order, 2);
        assert!(inv.dist.smooth().is_none());
        assert_eq!(inv.dist.deltas().len(), 1);
        assert_eq!(inv.dist.deltas()[0].order, 1);
        assert!(inv.dist.deltas()[0].coeff.values().iter().all(|v| *v == re(1.0)));
    }

    #[test]
    fn inverse_of_theta_squared_is_delta_second() {
        let g = grid(101);
        let tols = Tolerances::default();
        let f = theta_power(2, g.clone()).unwrap();
        let inv = star_inverse_smooth(&f, 1, &tols).unwrap();
        assert_eq!(inv.delta_order, 3);
        // the smooth factor is Θ up to node-rounding noise
        assert!(inv.smooth_factor.max_abs_diff(&Kernel2::theta(g)) < 1e-10);
        // expansion: pure δ^(2) up to that noise amplified by the stencils
        let c2 = inv.dist.delta_coeff(2).expect("order-2 term");
        assert!(c2.values().iter().all(|v| (v - re(1.0)).norm() < 1e-7));
        let spurious = inv.dist.norm() - c2.sup_norm();
        assert!(spurious < 1e-6, "spurious parts {spurious}");
    }

    #[test]
    fn inverse_of_exponential_kernel() {
        // f~ = e^{t'-t}: f^{*-1} = δ' - δ
        let g = grid(201);
        let tols = Tolerances::default();
        let f = Kernel2::sample(g.clone(), |tp, t| re((tp - t).exp())).unwrap();
        let inv = star_inverse_smooth(&f, 0, &tols).unwrap();
        assert_eq!(inv.delta_order, 2);
        let c0 = inv.dist.delta_coeff(0).expect("order-0 term");
        let c1 = inv.dist.delta_coeff(1).expect("order-1 term");
        let h = g.h();
        for i in 0..g.n() {
            assert!((c0.values()[i] - re(-1.0)).norm() < 50.0 * h * h);
            assert!((c1.values()[i] - re(1.0)).norm() < 50.0 * h * h);
        }
        if let Some(s) = inv.dist.smooth() {
            // the exact smooth part is zero; the discrete one carries
            // quadrature error amplified by the derivative stencils, largest
            // in the corner rows
            assert!(s.sup_norm() < 500.0 * h * h, "smooth residue {}", s.sup_norm());
        }

        // defining property, both sides
        let fd = StarDist::from_kernel(f);
        let one = StarDist::identity(g);
        let left = distance(&star(&inv.dist, &fd).unwrap(), &one).unwrap();
        let right = distance(&star(&fd, &inv.dist).unwrap(), &one).unwrap();
        assert!(left <= 1e-3, "left residual {left}");
        assert!(right <= 1e-3, "right residual {right}");
    }

    #[test]
    fn inverse_rejects_wrong_and_null_jets() {
        let g = grid(101);
        let tols = Tolerances::default();
        // f = Θ has nonzero order-0 jet, so k = 1 is not minimal
        assert!(matches!(
            star_inverse_smooth(&Kernel2::theta(g.clone()), 1, &tols),
            Err(Error::NotMinimalJet { .. })
        ));
        // zero kernel: jet identically null
        assert!(matches!(
            star_inverse_smooth(&Kernel2::zeros(g.clone()), 0, &tols),
            Err(Error::JetIdenticallyNull { .. })
        ));
        // f~ = t' - 1/2 vanishes on the diagonal at t = 1/2: zero crossing
        let f = Kernel2::sample(g, |tp, _| re(tp - 0.5)).unwrap();
        match star_inverse_smooth(&f, 0, &tols) {
            Err(Error::JetZeroCrossing { nodes, first }) => {
                assert!(!nodes.is_empty());
                assert!((first - 0.5).abs() < 0.02);
            }
            other => panic!("expected zero crossing, got {other:?}"),
        }
    }

    #[test]
    fn resolvent_delta_minus_examples() {
        let g = grid(401);
        let tols = Tolerances::default();
        // h = 0 -> identity
        let r0 = resolvent_delta_minus(&Kernel2::zeros(g.clone()), tols.overflow).unwrap();
        assert!(r0.smooth().is_none());
        assert_eq!(r0.deltas().len(), 1);
        assert!(r0.deltas()[0].coeff.values().iter().all(|v| *v == re(1.0)));

        // h = λΘ -> δ + λ e^{λ(t'-t)} Θ
        let lam = 0.7;
        let h = Kernel2::theta(g.clone()).scale(re(lam));
        let r = resolvent_delta_minus(&h, tols.overflow).unwrap();
        let expect = Kernel2::sample(g.clone(), |tp, t| re(lam * (lam * (tp - t)).exp())).unwrap();
        assert!(r.smooth().unwrap().max_abs_diff(&expect) < 1e-4);

        // defining property on a generic cubic kernel
        let hc = Kernel2::sample(g.clone(), |tp, t| {
            re(0.3 + 0.5 * tp - 0.2 * t + 0.1 * tp * tp * t)
        })
        .unwrap();
        let rh = resolvent_delta_minus(&hc, tols.overflow).unwrap();
        let one = StarDist::identity(g.clone());
        let arg = one.sub(&StarDist::from_kernel(hc)).unwrap();
        let resid = distance(&star(&rh, &arg).unwrap(), &one).unwrap();
        let hh = g.h();
        assert!(resid <= 100.0 * hh * hh, "residual {resid}");
    }

    #[test]
    fn mixed_triple_associativity() {
        // (δ' * f) * g vs δ' * (f * g) for polynomial kernels
        let g = grid(101);
        let f = Kernel2::sample(g.clone(), |tp, t| re(1.0 + tp * t)).unwrap();
        let k = Kernel2::sample(g.clone(), |tp, t| re(tp - 0.5 * t * t)).unwrap();
        let dp = StarDist::delta_pure(1, g.clone(), 8).unwrap();
        let fd = StarDist::from_kernel(f);
        let kd = StarDist::from_kernel(k);
        let lhs = star(&star(&dp, &fd).unwrap(), &kd).unwrap();
        let rhs = star(&dp, &star(&fd, &kd).unwrap()).unwrap();
        let h = g.h();
        assert!(distance(&lhs, &rhs).unwrap() <= 20.0 * h * h);
    }

    #[test]
    fn closure_keeps_orders_bounded_by_sum() {
        let g = grid(101);
        let a = StarDist::delta(2, DiagFn::sample(g.clone(), |t| re(1.0 + t)).unwrap(), 8)
            .unwrap()
            .add(&StarDist::from_kernel(Kernel2::theta(g.clone())))
            .unwrap();
        let b = StarDist::delta(3, DiagFn::sample(g.clone(), |t| re(t * t)).unwrap(), 8)
            .unwrap()
            .add(&StarDist::from_kernel(theta_power(2, g.clone()).unwrap()))
            .unwrap();
        let p = star(&a, &b).unwrap();
        assert!(p.max_delta_order().unwrap_or(0) <= 5);
        // canonical: orders strictly increasing
        let orders: Vec<usize> = p.deltas().iter().map(|t| t.order).collect();
        let mut sorted = orders.clone();
        sorted.dedup();
        assert_eq!(orders, sorted);
    }
}
