//! The time-dependent Lanczos-type tridiagonalization over N×N matrices of
//! causal kernels, together with moment computation, the Θ-form conversion of
//! the superdiagonal, biorthogonality residuals, and the classical
//! constant-matrix probe that predicts feasible depth.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::dstar::{star_with_cap, star_inverse_smooth, StarDist};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::Kernel2;
use crate::oracle::{classical_lanczos, Termination};
use crate::Tolerances;

/// A time-dependent N×N coefficient matrix sampled on the grid, together
/// with the per-entry causal kernels `A_ij(t', t) = A~_ij(t') Θ(t' - t)`.
#[derive(Debug, Clone)]
pub struct MatrixFn {
    dim: usize,
    grid: Arc<TimeGrid>,
    samples: Vec<DMatrix<Complex64>>,
    kernels: Vec<Kernel2>,
}

impl MatrixFn {
    pub fn new(grid: Arc<TimeGrid>, samples: Vec<DMatrix<Complex64>>) -> Result<Self> {
        if samples.len() != grid.n() {
            return Err(Error::DimensionMismatch { expected: grid.n(), got: samples.len() });
        }
        let dim = samples[0].nrows();
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        for (k, s) in samples.iter().enumerate() {
            if s.nrows() != dim || s.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: s.nrows().max(s.ncols()) });
            }
            for v in s.iter() {
                if !v.re.is_finite() || !v.im.is_finite() {
                    return Err(Error::NonFinite { context: "sampling the coefficient matrix", index: Some((k, 0)) });
                }
            }
        }
        let mut kernels = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                let vals: Vec<Complex64> = samples.iter().map(|s| s[(i, j)]).collect();
                kernels.push(Kernel2::from_row_values(grid.clone(), &vals)?);
            }
        }
        Ok(MatrixFn { dim, grid, samples, kernels })
    }

    pub fn from_fn(grid: Arc<TimeGrid>, f: impl Fn(f64) -> DMatrix<Complex64>) -> Result<Self> {
        let samples = grid.nodes().iter().map(|&t| f(t)).collect();
        MatrixFn::new(grid, samples)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn sample(&self, node: usize) -> &DMatrix<Complex64> {
        &self.samples[node]
    }

    pub fn entry_kernel(&self, i: usize, j: usize) -> &Kernel2 {
        &self.kernels[i * self.dim + j]
    }
}

/// A vector of distributions sharing one grid.
#[derive(Debug, Clone)]
pub struct StarVec {
    grid: Arc<TimeGrid>,
    entries: Vec<StarDist>,
}

impl StarVec {
    /// Constant complex vector embedded as `v_i · 1_*`.
    pub fn from_vector(grid: Arc<TimeGrid>, v: &DVector<Complex64>) -> StarVec {
        let entries = v.iter().map(|&c| StarDist::identity(grid.clone()).scale(c)).collect();
        StarVec { grid, entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, i: usize) -> &StarDist {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[StarDist] {
        &self.entries
    }

    pub fn sub(&self, other: &StarVec) -> Result<StarVec> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<_>>()?;
        Ok(StarVec { grid: self.grid.clone(), entries })
    }

    /// Entrywise `star(c, x_i)` for a scalar distribution on the left.
    pub fn scale_dist_left(c: &StarDist, x: &StarVec, cap: usize) -> Result<StarVec> {
        let entries = x.entries.iter().map(|e| star_with_cap(c, e, cap)).collect::<Result<_>>()?;
        Ok(StarVec { grid: x.grid.clone(), entries })
    }

    /// Entrywise `star(x_i, c)` for a scalar distribution on the right.
    pub fn scale_dist_right(x: &StarVec, c: &StarDist, cap: usize) -> Result<StarVec> {
        let entries = x.entries.iter().map(|e| star_with_cap(e, c, cap)).collect::<Result<_>>()?;
        Ok(StarVec { grid: x.grid.clone(), entries })
    }
}

/// Column action `A * x`: entry `i` is `Σ_j A_ij * x_j`.
pub fn star_matvec(a: &MatrixFn, x: &StarVec, cap: usize) -> Result<StarVec> {
    if a.dim != x.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim, got: x.dim() });
    }
    let mut entries = Vec::with_capacity(a.dim);
    for i in 0..a.dim {
        let mut acc = StarDist::zero(a.grid.clone());
        for j in 0..a.dim {
            let aij = StarDist::from_kernel(a.entry_kernel(i, j).clone());
            acc = acc.add(&star_with_cap(&aij, &x.entries[j], cap)?)?;
        }
        entries.push(acc);
    }
    Ok(StarVec { grid: a.grid.clone(), entries })
}

/// Row action `w^H * A`: entry `j` is `Σ_i w_i * A_ij`.
pub fn vec_star(w: &StarVec, a: &MatrixFn, cap: usize) -> Result<StarVec> {
    if a.dim != w.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim, got: w.dim() });
    }
    let mut entries = Vec::with_capacity(a.dim);
    for j in 0..a.dim {
        let mut acc = StarDist::zero(a.grid.clone());
        for i in 0..a.dim {
            let aij = StarDist::from_kernel(a.entry_kernel(i, j).clone());
            acc = acc.add(&star_with_cap(&w.entries[i], &aij, cap)?)?;
        }
        entries.push(acc);
    }
    Ok(StarVec { grid: a.grid.clone(), entries })
}

/// Bilinear pairing `Σ_i star(w_i, v_i)` (conjugation, if any, is already
/// baked into the entries of `w`).
pub fn star_dot(w: &StarVec, v: &StarVec, cap: usize) -> Result<StarDist> {
    if w.dim() != v.dim() {
        return Err(Error::DimensionMismatch { expected: w.dim(), got: v.dim() });
    }
    let mut acc = StarDist::zero(w.grid.clone());
    for i in 0..w.dim() {
        acc = acc.add(&star_with_cap(&w.entries[i], &v.entries[i], cap)?)?;
    }
    Ok(acc)
}

/// Which object sits on the superdiagonal of the tridiagonal output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SuperForm {
    /// Dirac deltas (the raw algorithmic form).
    Delta,
    /// Heaviside kernels, with the subdiagonal coefficients differentiated.
    Theta,
}

/// The time-dependent tridiagonal output: `m` diagonal coefficients and
/// `m - 1` subdiagonal coefficients, all piecewise smooth.
#[derive(Debug, Clone)]
pub struct TriT {
    alphas: Vec<StarDist>,
    betas: Vec<StarDist>,
    form: SuperForm,
}

impl TriT {
    pub fn new(alphas: Vec<StarDist>, betas: Vec<StarDist>, form: SuperForm) -> Result<TriT> {
        if alphas.is_empty() || betas.len() + 1 != alphas.len() {
            return Err(Error::DimensionMismatch { expected: alphas.len().max(1) - 1, got: betas.len() });
        }
        for b in &betas {
            if !b.is_smooth() {
                return Err(Error::WrongForm);
            }
            if form == SuperForm::Delta {
                let k = b.smooth_or_zero();
                if k.diag_sup_norm() > 1e-3 * (1.0 + k.sup_norm()) {
                    return Err(Error::WrongForm);
                }
            }
        }
        Ok(TriT { alphas, betas, form })
    }

    pub fn depth(&self) -> usize {
        self.alphas.len()
    }

    pub fn form(&self) -> SuperForm {
        self.form
    }

    pub fn alpha(&self, k: usize) -> &StarDist {
        &self.alphas[k]
    }

    /// Subdiagonal coefficient `β_{k}` for `k = 1..depth-1`.
    pub fn beta(&self, k: usize) -> &StarDist {
        &self.betas[k - 1]
    }

    pub fn alphas(&self) -> &[StarDist] {
        &self.alphas
    }

    pub fn betas(&self) -> &[StarDist] {
        &self.betas
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        self.alphas[0].grid()
    }
}

/// Replace the delta superdiagonal by Heaviside kernels, differentiating each
/// subdiagonal coefficient in its first variable. Both forms produce the same
/// `(1,1)` moments up to quadrature error.
pub fn to_theta_form(t: &TriT) -> Result<TriT> {
    if t.form != SuperForm::Delta {
        return Err(Error::WrongForm);
    }
    let betas = t
        .betas
        .iter()
        .map(|b| StarDist::from_kernel(b.smooth_or_zero().d_dtprime()))
        .collect();
    Ok(TriT { alphas: t.alphas.clone(), betas, form: SuperForm::Theta })
}

/// `e_1^H T^{*j} e_1` for `j = 0..=jmax`, by repeated tridiagonal action on
/// the first coordinate vector.
pub fn tri_moments(t: &TriT, jmax: usize, tols: &Tolerances) -> Result<Vec<StarDist>> {
    let grid = t.grid().clone();
    let m = t.depth();
    let cap = tols.delta_cap;
    let superdiag: Vec<StarDist> = match t.form {
        SuperForm::Delta => (0..m.saturating_sub(1))
            .map(|_| StarDist::identity(grid.clone()))
            .collect(),
        SuperForm::Theta => (0..m.saturating_sub(1))
            .map(|_| StarDist::from_kernel(Kernel2::theta(grid.clone())))
            .collect(),
    };

    let mut u: Vec<StarDist> = (0..m)
        .map(|i| {
            if i == 0 {
                StarDist::identity(grid.clone())
            } else {
                StarDist::zero(grid.clone())
            }
        })
        .collect();
    let mut out = Vec::with_capacity(jmax + 1);
    out.push(u[0].clone());
    for _ in 1..=jmax {
        let mut next = Vec::with_capacity(m);
        for i in 0..m {
            let mut acc = star_with_cap(&t.alphas[i], &u[i], cap)?;
            if i > 0 {
                acc = acc.add(&star_with_cap(&t.betas[i - 1], &u[i - 1], cap)?)?;
            }
            if i + 1 < m {
                acc = acc.add(&star_with_cap(&superdiag[i], &u[i + 1], cap)?)?;
            }
            next.push(acc);
        }
        u = next;
        out.push(u[0].clone());
    }
    Ok(out)
}

/// Moments `m_j = w^H A^{*j} v` for `j = 0..=jmax` through the distribution
/// arithmetic (compare with `oracle::brute_moments` for the quadrature-only
/// path).
pub fn moments(
    a: &MatrixFn,
    w: &DVector<Complex64>,
    v: &DVector<Complex64>,
    jmax: usize,
    tols: &Tolerances,
) -> Result<Vec<StarDist>> {
    let wbar = w.map(|z| z.conj());
    let wv = StarVec::from_vector(a.grid.clone(), &wbar);
    let mut u = StarVec::from_vector(a.grid.clone(), v);
    let mut out = Vec::with_capacity(jmax + 1);
    out.push(star_dot(&wv, &u, tols.delta_cap)?);
    for _ in 1..=jmax {
        u = star_matvec(a, &u, tols.delta_cap)?;
        out.push(star_dot(&wv, &u, tols.delta_cap)?);
    }
    Ok(out)
}

/// Why a run stopped early.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub enum BreakdownKind {
    /// The subdiagonal coefficient is identically null: no inverse exists.
    BetaIdenticallyNull,
    /// The leading jet of the subdiagonal coefficient vanishes at isolated
    /// nodes; the inverse exists only away from them.
    JetZeroCrossing { node_times: Vec<f64> },
}

#[derive(Debug, Clone, Serialize)]
pub struct BreakdownReport {
    /// 1-based iteration at which the subdiagonal coefficient failed.
    pub step: usize,
    pub kind: BreakdownKind,
    pub advice: String,
}

/// Per-iteration diagnostics for a produced subdiagonal coefficient.
#[derive(Debug, Clone, Serialize)]
pub struct BetaDiag {
    pub step: usize,
    /// Sup norm of the diagonal of `β~_j` (zero in exact arithmetic).
    pub diag_sup: f64,
    /// Extremes of `|β~_j^(1,0)(t, t)|` over the grid.
    pub jet_min: f64,
    pub jet_max: f64,
    /// Residual delta part removed when reducing to smooth form.
    pub delta_residual: f64,
    /// Times where the leading jet is small relative to its maximum
    /// (informational; the run continues while none fall below the hard
    /// zero-node threshold).
    pub soft_zero_times: Vec<f64>,
    /// Delta-derivative order of the structural inverse factor (always 3).
    pub inverse_delta_order: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LanczosReport {
    pub requested: usize,
    pub completed: usize,
    pub breakdown: Option<BreakdownReport>,
    /// Residual delta parts removed from each diagonal coefficient.
    pub alpha_delta_residuals: Vec<f64>,
    pub beta_diags: Vec<BetaDiag>,
}

impl LanczosReport {
    pub fn broke_down(&self) -> bool {
        self.completed < self.requested
    }
}

/// Full output of a run.
#[derive(Debug, Clone)]
pub struct LanczosRun {
    pub tri: TriT,
    pub w_vecs: Vec<StarVec>,
    pub v_vecs: Vec<StarVec>,
    pub report: LanczosReport,
}

/// Reduce a computed tridiagonal coefficient to its piecewise-smooth part,
/// checking that the removed delta residue is small cancellation noise.
fn reduce_smooth(
    d: &StarDist,
    what: &'static str,
    iter: usize,
    tols: &Tolerances,
) -> Result<(StarDist, f64)> {
    let (smooth, residual) = d.split_smooth();
    let scale = 1.0 + smooth.smooth().map_or(0.0, |k| k.sup_norm());
    let tol = tols.smooth_rel * scale;
    if residual > tol {
        return Err(Error::NonSmoothCoefficient { what, iter, residual, tol });
    }
    Ok((smooth, residual))
}

/// The time-dependent Lanczos recurrence. Runs up to `m <= N` iterations and
/// returns the tridiagonal coefficients in delta superdiagonal form together
/// with the two generated vector sequences and a diagnostic report.
///
/// A subdiagonal coefficient that is identically null, or whose leading jet
/// crosses zero on the grid, ends the run early: the returned matrix keeps
/// the completed depth and the report carries the classification (this is
/// the breakdown outcome, not an error).
pub fn star_lanczos(
    a: &MatrixFn,
    w: &DVector<Complex64>,
    v: &DVector<Complex64>,
    m: usize,
    tols: &Tolerances,
) -> Result<LanczosRun> {
    let dim = a.dim();
    if w.len() != dim || v.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: w.len().max(v.len()) });
    }
    if m < 1 || m > dim {
        return Err(Error::BadIterationCount { m, n: dim });
    }
    let dev = (w.dotc(v) - Complex64::new(1.0, 0.0)).norm();
    if dev > tols.norm_check {
        return Err(Error::NotNormalized(dev));
    }
    let cap = tols.delta_cap;
    let grid = a.grid().clone();

    let wbar = w.map(|z| z.conj());
    let w0 = StarVec::from_vector(grid.clone(), &wbar);
    let v0 = StarVec::from_vector(grid.clone(), v);

    let mut report = LanczosReport {
        requested: m,
        completed: 1,
        breakdown: None,
        alpha_delta_residuals: Vec::new(),
        beta_diags: Vec::new(),
    };

    let mut av = star_matvec(a, &v0, cap)?; // A * v_0
    let alpha0 = star_dot(&w0, &av, cap)?;
    let (alpha0, res0) = reduce_smooth(&alpha0, "alpha", 0, tols)?;
    report.alpha_delta_residuals.push(res0);

    let mut alphas = vec![alpha0];
    let mut betas: Vec<StarDist> = Vec::new();
    let mut w_vecs = vec![w0];
    let mut v_vecs = vec![v0];

    for step in 1..m {
        // w_step
        let w_prev = &w_vecs[step - 1];
        let mut w_next = vec_star(w_prev, a, cap)?
            .sub(&StarVec::scale_dist_left(&alphas[step - 1], w_prev, cap)?)?;
        if step >= 2 {
            w_next = w_next.sub(&StarVec::scale_dist_left(
                &betas[step - 2],
                &w_vecs[step - 2],
                cap,
            )?)?;
        }

        // v^_step
        let mut v_hat = av.sub(&StarVec::scale_dist_right(
            &v_vecs[step - 1],
            &alphas[step - 1],
            cap,
        )?)?;
        if step >= 2 {
            v_hat = v_hat.sub(&v_vecs[step - 2])?;
        }

        // β_step: the first one from the displayed two-moment form, later
        // ones as w_step^H * A * v_{step-1}
        let beta = if step == 1 {
            let a2v = star_matvec(a, &av, cap)?;
            let m2 = star_dot(&w_vecs[0], &a2v, cap)?;
            m2.sub(&star_with_cap(&alphas[0], &alphas[0], cap)?)?
        } else {
            star_dot(&w_next, &av, cap)?
        };
        let (beta, beta_res) = reduce_smooth(&beta, "beta", step, tols)?;
        let beta_kernel = beta.smooth_or_zero();

        // Theorem-2 structure checks
        let diag_sup = beta_kernel.diag_sup_norm();
        let beta_scale = 1.0 + beta_kernel.sup_norm();
        if diag_sup > tols.diag_rel * beta_scale {
            return Err(Error::NonSmoothCoefficient {
                what: "beta diagonal",
                iter: step,
                residual: diag_sup,
                tol: tols.diag_rel * beta_scale,
            });
        }
        let jet = beta_kernel.diag_jet(1, 0)?;
        let jet_max = jet.sup_norm();
        let jet_min = jet.values().iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        let soft_zero_times: Vec<f64> = jet
            .values()
            .iter()
            .enumerate()
            .filter(|(_, z)| z.norm() < 1e-3 * jet_max)
            .map(|(i, _)| grid.node(i))
            .collect();

        let inverse = match star_inverse_smooth(&beta_kernel, 1, tols) {
            Ok(inv) => inv,
            Err(Error::JetIdenticallyNull { .. }) | Err(Error::NotMinimalJet { .. }) => {
                report.breakdown = Some(BreakdownReport {
                    step,
                    kind: BreakdownKind::BetaIdenticallyNull,
                    advice: "the subdiagonal coefficient vanishes identically; the bilinear form \
                             is already reproduced at the completed depth"
                        .into(),
                });
                break;
            }
            Err(Error::JetZeroCrossing { nodes, .. }) => {
                let node_times: Vec<f64> = nodes.iter().map(|&i| grid.node(i)).collect();
                report.breakdown = Some(BreakdownReport {
                    step,
                    kind: BreakdownKind::JetZeroCrossing { node_times: node_times.clone() },
                    advice: format!(
                        "the leading jet of the subdiagonal coefficient vanishes near t = {:?}; \
                         re-run on a subinterval excluding these times",
                        node_times
                    ),
                });
                break;
            }
            Err(e) => return Err(e),
        };

        report.beta_diags.push(BetaDiag {
            step,
            diag_sup,
            jet_min,
            jet_max,
            delta_residual: beta_res,
            soft_zero_times,
            inverse_delta_order: inverse.delta_order,
        });
        betas.push(beta);

        let v_next = StarVec::scale_dist_right(&v_hat, &inverse.dist, cap)?;
        // α_step = w_step^H * A * v_step
        av = star_matvec(a, &v_next, cap)?;
        let alpha = star_dot(&w_next, &av, cap)?;
        let (alpha, res) = reduce_smooth(&alpha, "alpha", step, tols)?;
        report.alpha_delta_residuals.push(res);
        alphas.push(alpha);
        w_vecs.push(w_next);
        v_vecs.push(v_next);
        report.completed = step + 1;
    }

    let completed = report.completed;
    alphas.truncate(completed);
    betas.truncate(completed.saturating_sub(1));
    w_vecs.truncate(completed);
    v_vecs.truncate(completed);
    let tri = TriT::new(alphas, betas, SuperForm::Delta)?;
    Ok(LanczosRun { tri, w_vecs, v_vecs, report })
}

/// Residual matrix of the biorthogonality relation: entry `(i, j)` is the
/// distance of `star(w_i, v_j)` from `[i == j] · 1_*`.
pub fn biorthogonality_check(
    w_vecs: &[StarVec],
    v_vecs: &[StarVec],
    tols: &Tolerances,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(w_vecs.len());
    for (i, wv) in w_vecs.iter().enumerate() {
        let mut row = Vec::with_capacity(v_vecs.len());
        for (j, vv) in v_vecs.iter().enumerate() {
            let dot = star_dot(wv, vv, tols.delta_cap)?;
            let target = if i == j {
                StarDist::identity(wv.grid.clone())
            } else {
                StarDist::zero(wv.grid.clone())
            };
            row.push(dot.sub(&target)?.norm());
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeSample {
    pub rho: f64,
    /// Iterations the classical process completes at this frozen time.
    pub depth: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub samples: Vec<ProbeSample>,
    /// Maximum classical depth over the samples: the feasible depth
    /// prediction for the time-dependent run.
    pub max_depth: usize,
}

/// Run the classical non-Hermitian Lanczos process on the frozen matrices
/// `A~(ρ)` at `sample_count` grid nodes (uniform stride including both ends).
pub fn breakdown_probe(
    a: &MatrixFn,
    w: &DVector<Complex64>,
    v: &DVector<Complex64>,
    sample_count: usize,
    tols: &Tolerances,
) -> Result<ProbeReport> {
    let n = a.grid().n();
    let count = sample_count.max(1).min(n);
    let indices: Vec<usize> = if count == 1 {
        vec![n / 2]
    } else {
        (0..count).map(|k| k * (n - 1) / (count - 1)).collect()
    };
    let mut samples = Vec::with_capacity(indices.len());
    let mut max_depth = 0;
    for idx in indices {
        let out = classical_lanczos(a.sample(idx), w, v, a.dim(), tols.probe)?;
        max_depth = max_depth.max(out.depth());
        samples.push(ProbeSample {
            rho: a.grid().node(idx),
            depth: out.depth(),
            termination: out.termination,
        });
    }
    Ok(ProbeReport { samples, max_depth })
}
