//! Independent ground-truth generators used to cross-validate the kernel
//! pipeline: adaptive Runge-Kutta integration of the defining ODE, classical
//! non-Hermitian Lanczos on constant matrices, a dense matrix exponential,
//! and brute-force moments computed with kernel quadrature only.
//!
//! The integrator consumes the analytic coefficient function, not grid
//! samples, so its discretization error is independent of the system under
//! test.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::{vcompose, Kernel2};
use crate::starlan::MatrixFn;

/// Solution of `dU/dt' = A(t') U`, `U(a) = Id`, sampled at the grid nodes.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub grid: Arc<TimeGrid>,
    /// `mats[i]` approximates `U(t_i, a)`.
    pub mats: Vec<DMatrix<Complex64>>,
    pub stats: OdeStats,
}

#[derive(Debug, Clone, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub min_step: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl OdeSolution {
    /// The bilinear form `w^H U(t_i, a) v` along the grid.
    pub fn bilinear(&self, w: &DVector<Complex64>, v: &DVector<Complex64>) -> Vec<Complex64> {
        self.mats.iter().map(|u| w.dotc(&(u * v))).collect()
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
// b5 - b4: error estimator weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate the matrix initial value problem `dU/dt = A(t) U`, `U(a) = Id`
/// over the grid interval with an embedded adaptive Runge-Kutta 5(4) pair,
/// recording `U` at every grid node (steps are clipped to land on nodes).
pub fn ode_propagator(
    coeff: &dyn Fn(f64) -> DMatrix<Complex64>,
    grid: &Arc<TimeGrid>,
    rtol: f64,
    atol: f64,
) -> Result<OdeSolution> {
    let dim = coeff(grid.a()).nrows();
    let span = grid.b() - grid.a();
    let floor = 1e-14 * span.max(1.0);

    let f = |t: f64, y: &DMatrix<Complex64>| coeff(t) * y;

    let mut t = grid.a();
    let mut y = DMatrix::<Complex64>::identity(dim, dim);
    let mut mats = Vec::with_capacity(grid.n());
    mats.push(y.clone());

    let mut stats = OdeStats { min_step: f64::INFINITY, rtol, atol, ..Default::default() };
    let mut h_prop = (span / 100.0).min(grid.h());
    let mut k1 = f(t, &y);

    for node in 1..grid.n() {
        let target = grid.node(node);
        while target - t > floor {
            let h = h_prop.min(target - t);
            let k2 = f(t + C[1] * h, &(&y + (&k1 * Complex64::from(A2[0] * h))));
            let k3 = f(
                t + C[2] * h,
                &(&y + &k1 * Complex64::from(A3[0] * h) + &k2 * Complex64::from(A3[1] * h)),
            );
            let k4 = f(
                t + C[3] * h,
                &(&y
                    + &k1 * Complex64::from(A4[0] * h)
                    + &k2 * Complex64::from(A4[1] * h)
                    + &k3 * Complex64::from(A4[2] * h)),
            );
            let k5 = f(
                t + C[4] * h,
                &(&y
                    + &k1 * Complex64::from(A5[0] * h)
                    + &k2 * Complex64::from(A5[1] * h)
                    + &k3 * Complex64::from(A5[2] * h)
                    + &k4 * Complex64::from(A5[3] * h)),
            );
            let k6 = f(
                t + C[5] * h,
                &(&y
                    + &k1 * Complex64::from(A6[0] * h)
                    + &k2 * Complex64::from(A6[1] * h)
                    + &k3 * Complex64::from(A6[2] * h)
                    + &k4 * Complex64::from(A6[3] * h)
                    + &k5 * Complex64::from(A6[4] * h)),
            );
            let y5 = &y
                + &k1 * Complex64::from(B5[0] * h)
                + &k3 * Complex64::from(B5[2] * h)
                + &k4 * Complex64::from(B5[3] * h)
                + &k5 * Complex64::from(B5[4] * h)
                + &k6 * Complex64::from(B5[5] * h);
            let k7 = f(t + h, &y5);
            let err_mat = &k1 * Complex64::from(E[0] * h)
                + &k3 * Complex64::from(E[2] * h)
                + &k4 * Complex64::from(E[3] * h)
                + &k5 * Complex64::from(E[4] * h)
                + &k6 * Complex64::from(E[5] * h)
                + &k7 * Complex64::from(E[6] * h);

            let mut acc = 0.0_f64;
            for idx in 0..err_mat.len() {
                let sc = atol + rtol * y[idx].norm().max(y5[idx].norm());
                let r = err_mat[idx].norm() / sc;
                acc += r * r;
            }
            let err = (acc / err_mat.len() as f64).sqrt();

            if err <= 1.0 {
                t += h;
                y = y5;
                k1 = k7;
                stats.accepted += 1;
                stats.min_step = stats.min_step.min(h);
                let fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
                h_prop = h * fac;
            } else {
                stats.rejected += 1;
                let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                h_prop = h * fac;
                if h_prop < floor {
                    return Err(Error::StepSizeUnderflow { t });
                }
            }
        }
        mats.push(y.clone());
    }
    Ok(OdeSolution { grid: grid.clone(), mats, stats })
}

/// How a classical Lanczos run ended.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub enum Termination {
    /// All requested iterations completed.
    Completed,
    /// The pairing vanished while at least one of the running vectors kept a
    /// nonzero norm: a true breakdown at the given 1-based step.
    TrueBreakdown { step: usize },
    /// A running vector vanished: an invariant subspace was reached (benign).
    InvariantSubspace { step: usize },
}

impl Termination {
    pub fn is_early(&self) -> bool {
        !matches!(self, Termination::Completed)
    }
}

/// Output of the classical (constant-matrix) two-sided Lanczos process, with
/// the normalization that keeps the superdiagonal equal to one: subdiagonal
/// entries are the pairings `β_n`.
#[derive(Debug, Clone)]
pub struct ClassicalLanczos {
    pub alphas: Vec<Complex64>,
    pub betas: Vec<Complex64>,
    pub termination: Termination,
}

impl ClassicalLanczos {
    /// Completed iterations: the dimension of the valid tridiagonal matrix.
    pub fn depth(&self) -> usize {
        self.alphas.len()
    }
}

/// Textbook non-Hermitian (two-sided) Lanczos on a constant matrix.
///
/// Mirrors the time-dependent recurrences: the right vectors are normalized
/// by the pairing so the superdiagonal is identically one. A pairing below
/// `tol_probe` relative to the running vector norms stops the process; the
/// termination kind distinguishes exhausted vectors from a true breakdown.
pub fn classical_lanczos(
    m: &DMatrix<Complex64>,
    w: &DVector<Complex64>,
    v: &DVector<Complex64>,
    steps: usize,
    tol_probe: f64,
) -> Result<ClassicalLanczos> {
    let dev = (w.dotc(v) - Complex64::new(1.0, 0.0)).norm();
    if dev > 1e-12 {
        return Err(Error::NotNormalized(dev));
    }
    let mt = m.transpose();

    // u tracks the conjugate of the left vector, so w^H x = u^T x throughout.
    let mut u_cur = w.map(|z| z.conj());
    let mut v_cur = v.clone();
    let mut u_prev = DVector::<Complex64>::zeros(m.nrows());
    let mut v_prev = DVector::<Complex64>::zeros(m.nrows());
    let mut beta_prev = Complex64::default();

    let mut out = ClassicalLanczos {
        alphas: Vec::new(),
        betas: Vec::new(),
        termination: Termination::Completed,
    };

    for step in 1..=steps {
        let mv = m * &v_cur;
        let alpha: Complex64 = u_cur.dot(&mv);
        out.alphas.push(alpha);
        if step == steps {
            break;
        }

        let mut u_next = &mt * &u_cur - &u_cur * alpha;
        if step > 1 {
            u_next -= &u_prev * beta_prev;
        }
        let mut v_hat = &mv - &v_cur * alpha;
        if step > 1 {
            v_hat -= &v_prev;
        }

        let beta: Complex64 = u_next.dot(&(m * &v_cur));
        let u_scale = u_cur.norm() * (1.0 + m.norm()) + u_prev.norm() * beta_prev.norm();
        let v_scale = mv.norm() + alpha.norm() * v_cur.norm() + v_prev.norm();
        let pair_scale = (u_next.norm() * v_hat.norm()).max(f64::EPSILON);

        if beta.norm() < tol_probe * pair_scale.max(1.0) {
            let u_dead = u_next.norm() <= tol_probe * u_scale.max(1.0);
            let v_dead = v_hat.norm() <= tol_probe * v_scale.max(1.0);
            out.termination = if u_dead || v_dead {
                Termination::InvariantSubspace { step }
            } else {
                Termination::TrueBreakdown { step }
            };
            return Ok(out);
        }
        out.betas.push(beta);

        v_prev = v_cur;
        v_cur = &v_hat / beta;
        u_prev = u_cur;
        u_cur = u_next;
        beta_prev = beta;
    }
    Ok(out)
}

/// Dense matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant.
pub fn expm(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    const THETA_13: f64 = 5.371920351148152;
    let dim = m.nrows();
    let one_norm: f64 = (0..dim)
        .map(|j| (0..dim).map(|i| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if one_norm > THETA_13 {
        (one_norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let a = m.map(|z| z / Complex64::from(2f64.powi(s)));

    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let id = DMatrix::<Complex64>::identity(dim, dim);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u = &a
        * (&a6 * (&a6 * Complex64::from(B[13]) + &a4 * Complex64::from(B[11]) + &a2 * Complex64::from(B[9]))
            + &a6 * Complex64::from(B[7])
            + &a4 * Complex64::from(B[5])
            + &a2 * Complex64::from(B[3])
            + &id * Complex64::from(B[1]));
    let v = &a6 * (&a6 * Complex64::from(B[12]) + &a4 * Complex64::from(B[10]) + &a2 * Complex64::from(B[8]))
        + &a6 * Complex64::from(B[6])
        + &a4 * Complex64::from(B[4])
        + &a2 * Complex64::from(B[2])
        + &id * Complex64::from(B[0]);

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut exp = lhs.lu().solve(&rhs).expect("Padé denominator is nonsingular for finite input");
    for _ in 0..s {
        exp = &exp * &exp;
    }
    exp
}

/// Moments `w^H A^{*j} v` for `j = 1..=jmax`, computed with matrix kernel
/// powers and entrywise Volterra composition only — an independent path that
/// bypasses the distribution arithmetic entirely.
pub fn brute_moments(
    a: &MatrixFn,
    w: &DVector<Complex64>,
    v: &DVector<Complex64>,
    jmax: usize,
) -> Result<Vec<Kernel2>> {
    let dim = a.dim();
    if w.len() != dim || v.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: w.len().max(v.len()) });
    }
    let combine = |p: &Vec<Vec<Kernel2>>| -> Result<Kernel2> {
        let mut acc = Kernel2::zeros(a.grid().clone());
        for i in 0..dim {
            for l in 0..dim {
                let c = w[i].conj() * v[l];
                if c != Complex64::default() {
                    acc = acc.add(&p[i][l].scale(c))?;
                }
            }
        }
        Ok(acc)
    };

    let mut power: Vec<Vec<Kernel2>> =
        (0..dim).map(|i| (0..dim).map(|j| a.entry_kernel(i, j).clone()).collect()).collect();
    let mut out = Vec::with_capacity(jmax);
    out.push(combine(&power)?);
    for _ in 2..=jmax {
        let mut next: Vec<Vec<Kernel2>> = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut row = Vec::with_capacity(dim);
            for l in 0..dim {
                let mut acc = Kernel2::zeros(a.grid().clone());
                for k in 0..dim {
                    acc = acc.add(&vcompose(a.entry_kernel(i, k), &power[k][l])?)?;
                }
                row.push(acc);
            }
            next.push(row);
        }
        power = next;
        out.push(combine(&power)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn re(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn scalar_exponential() {
        let g = make_grid(0.0, 1.0, 101).unwrap();
        let lam = 0.8;
        let sol = ode_propagator(&|_| DMatrix::from_element(1, 1, re(lam)), &g, 1e-9, 1e-12).unwrap();
        for (i, u) in sol.mats.iter().enumerate() {
            let expect = (lam * g.node(i)).exp();
            assert!((u[(0, 0)].re - expect).abs() < 1e-7 * expect);
        }
    }

    #[test]
    fn commuting_diagonal_cosine() {
        let g = make_grid(0.0, 1.0, 101).unwrap();
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![re(1.0), re(2.0)]));
        let mc = m.clone();
        let sol = ode_propagator(&move |t: f64| mc.map(|z| z * re(t.cos())), &g, 1e-10, 1e-13).unwrap();
        for (i, u) in sol.mats.iter().enumerate() {
            let s = g.node(i).sin();
            assert!((u[(0, 0)].re - s.exp()).abs() < 1e-8 * s.exp().max(1.0));
            assert!((u[(1, 1)].re - (2.0 * s).exp()).abs() < 1e-7 * (2.0 * s).exp().max(1.0));
        }
    }

    #[test]
    fn airy_flow_self_consistency() {
        let g = make_grid(0.0, 1.0, 101).unwrap();
        let airy = |t: f64| {
            DMatrix::from_row_slice(2, 2, &[re(0.0), re(1.0), re(t), re(0.0)])
        };
        let rtol = 1e-8;
        let a = ode_propagator(&airy, &g, rtol, 1e-12).unwrap();
        let b = ode_propagator(&airy, &g, rtol / 10.0, 1e-13).unwrap();
        let mut max_diff = 0.0_f64;
        for (ua, ub) in a.mats.iter().zip(&b.mats) {
            max_diff = max_diff.max((ua - ub).norm());
        }
        assert!(max_diff <= 10.0 * rtol, "self-consistency diff {max_diff}");
        assert!(a.stats.accepted > 0);
    }

    #[test]
    fn classical_lanczos_full_rank_fixture() {
        let m = DMatrix::from_row_slice(2, 2, &[re(1.0), re(2.0), re(3.0), re(4.0)]);
        let e1 = DVector::from_vec(vec![re(1.0), re(0.0)]);
        let out = classical_lanczos(&m, &e1, &e1, 2, 1e-10).unwrap();
        assert_eq!(out.termination, Termination::Completed);
        assert_eq!(out.depth(), 2);
        assert!((out.alphas[0] - re(1.0)).norm() < 1e-14);
        assert!((out.betas[0] - re(6.0)).norm() < 1e-14);
        assert!((out.alphas[1] - re(4.0)).norm() < 1e-13);
        // moment check: e1^T J^2 e1 = m_2 = (M²)_{11} = 7
        let j2 = out.alphas[0] * out.alphas[0] + out.betas[0];
        assert!((j2 - re(7.0)).norm() < 1e-13);
    }

    #[test]
    fn classical_lanczos_jordan_breaks_at_step_one() {
        let m = DMatrix::from_row_slice(2, 2, &[re(0.0), re(1.0), re(0.0), re(0.0)]);
        let e1 = DVector::from_vec(vec![re(1.0), re(0.0)]);
        let out = classical_lanczos(&m, &e1, &e1, 2, 1e-10).unwrap();
        assert_eq!(out.depth(), 1);
        assert!(out.termination.is_early());
        // v side exhausts (e1 is an eigenvector), so this is flagged as an
        // invariant subspace in the report
        assert_eq!(out.termination, Termination::InvariantSubspace { step: 1 });
    }

    #[test]
    fn classical_lanczos_diagonal_invariant_subspace() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![re(2.0), re(5.0)]));
        let e1 = DVector::from_vec(vec![re(1.0), re(0.0)]);
        let out = classical_lanczos(&m, &e1, &e1, 2, 1e-10).unwrap();
        assert_eq!(out.depth(), 1);
        assert_eq!(out.termination, Termination::InvariantSubspace { step: 1 });
    }

    #[test]
    fn classical_lanczos_true_breakdown_cycle() {
        // cyclic shift: both running vectors stay alive while the pairing dies
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[
                re(0.0), re(0.0), re(1.0),
                re(1.0), re(0.0), re(0.0),
                re(0.0), re(1.0), re(0.0),
            ],
        );
        let e1 = DVector::from_vec(vec![re(1.0), re(0.0), re(0.0)]);
        let out = classical_lanczos(&m, &e1, &e1, 3, 1e-10).unwrap();
        assert_eq!(out.depth(), 1);
        assert_eq!(out.termination, Termination::TrueBreakdown { step: 1 });
    }

    #[test]
    fn classical_lanczos_hermitian_reduces_to_symmetric() {
        let m = DMatrix::from_row_slice(3, 3, &[
            re(2.0), re(0.3), re(0.1),
            re(0.3), re(1.0), re(-0.2),
            re(0.1), re(-0.2), re(0.5),
        ]);
        let v = DVector::from_vec(vec![re(0.6), re(0.48), re(0.64)]);
        let out = classical_lanczos(&m, &v, &v, 3, 1e-10).unwrap();
        assert_eq!(out.depth(), 3);
        for b in &out.betas {
            assert!(b.im.abs() < 1e-12);
            assert!(b.re >= 0.0, "symmetric Lanczos pairings are nonnegative, got {b}");
        }
    }

    #[test]
    fn expm_examples() {
        let z = DMatrix::<Complex64>::zeros(3, 3);
        let e = expm(&z);
        assert!((e - DMatrix::<Complex64>::identity(3, 3)).norm() < 1e-14);

        let th = 0.7_f64;
        let rot = DMatrix::from_row_slice(2, 2, &[re(0.0), re(th), re(-th), re(0.0)]);
        let e = expm(&rot);
        assert!((e[(0, 0)].re - th.cos()).abs() < 1e-12);
        assert!((e[(0, 1)].re - th.sin()).abs() < 1e-12);
    }

    #[test]
    fn expm_semigroup_self_check() {
        // fixed pseudo-random 4×4 with entries in [-1, 1]
        let mut vals = Vec::new();
        let mut state = 88172645463325252u64;
        for _ in 0..32 {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            vals.push((state as f64 / u64::MAX as f64) * 2.0 - 1.0);
        }
        let m = DMatrix::from_fn(4, 4, |i, j| Complex64::new(vals[2 * (4 * i + j)], vals[2 * (4 * i + j) + 1]));
        let half = m.map(|z| z * re(0.5));
        let a = expm(&half);
        let whole = expm(&m);
        let rel = (&a * &a - &whole).norm() / whole.norm();
        assert!(rel <= 1e-10, "semigroup deviation {rel}");
    }
}
