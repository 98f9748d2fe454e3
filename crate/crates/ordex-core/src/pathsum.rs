//! Evaluation of the `(1,1)` resolvent entry of the tridiagonal output as a
//! finite continued fraction, and assembly of the propagator bilinear form
//! `u(t') = w^H U(t', a) v` along the grid.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::dstar::{resolvent_delta_minus, star_with_cap, StarDist};
use crate::error::{Error, Result};
use crate::starlan::{star_lanczos, LanczosRun, MatrixFn, SuperForm, TriT};
use crate::Tolerances;

/// Sampled values of the propagator bilinear form along the grid, with an
/// optional oracle column for comparison.
#[derive(Debug, Clone)]
pub struct PropagatorColumn {
    pub grid: std::sync::Arc<crate::TimeGrid>,
    /// `u[i] ~ w^H U(t_i, a) v`; `u[0] = w^H v = 1` exactly.
    pub u: Vec<Complex64>,
    pub oracle: Option<Vec<Complex64>>,
    pub abs_err: Option<Vec<f64>>,
}

impl PropagatorColumn {
    /// Attach a ground-truth column and per-node absolute errors.
    pub fn with_oracle(mut self, oracle: Vec<Complex64>) -> Self {
        let err = self.u.iter().zip(&oracle).map(|(a, b)| (a - b).norm()).collect();
        self.oracle = Some(oracle);
        self.abs_err = Some(err);
        self
    }

    pub fn max_abs_err(&self) -> Option<f64> {
        self.abs_err.as_ref().map(|e| e.iter().copied().fold(0.0, f64::max))
    }

    /// Max absolute error over the sup of the oracle column.
    pub fn rel_err(&self) -> Option<f64> {
        let sup = self
            .oracle
            .as_ref()?
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        self.max_abs_err().map(|e| e / sup.max(f64::MIN_POSITIVE))
    }
}

/// The `(1,1)` entry of `(Id 1_* - T)^{*-1}` by the bottom-up continued
/// fraction: each level is one Volterra resolvent of a smooth kernel, and the
/// product `s_{k+1} * β_{k+1}` stays smooth because the subdiagonal
/// coefficients vanish on the diagonal.
///
/// Returns `δ + r` with `r` smooth.
pub fn resolvent11(t: &TriT, tols: &Tolerances) -> Result<StarDist> {
    if t.form() != SuperForm::Delta {
        return Err(Error::WrongForm);
    }
    let m = t.depth();
    let mut level = resolvent_delta_minus(&t.alpha(m - 1).smooth_or_zero(), tols.overflow)?;
    for k in (0..m - 1).rev() {
        let prod = star_with_cap(&level, t.beta(k + 1), tols.delta_cap)?;
        if !prod.is_smooth() {
            return Err(Error::NonSmoothCoefficient {
                what: "continued-fraction level",
                iter: k + 1,
                residual: prod.delta_part_norm(),
                tol: 0.0,
            });
        }
        let arg = t.alpha(k).smooth_or_zero().add(&prod.smooth_or_zero())?;
        level = resolvent_delta_minus(&arg, tols.overflow)?;
    }
    Ok(level)
}

/// Run the tridiagonalization to depth `m` (or the breakdown-adjusted depth)
/// and evaluate `u(t_i) = w^H U(t_i, a) v` as `Θ * R_*(T)_{1,1}` restricted
/// to the column `t = a`. The delta part of the resolvent contributes the
/// exact constant 1, so `u(a) = 1` exactly.
pub fn ordered_exp_entry(
    a: &MatrixFn,
    w: &DVector<Complex64>,
    v: &DVector<Complex64>,
    m: usize,
    tols: &Tolerances,
) -> Result<(PropagatorColumn, LanczosRun)> {
    let run = star_lanczos(a, w, v, m, tols)?;
    let column = propagate(&run.tri, tols)?;
    Ok((column, run))
}

/// Evaluate the propagator column from an already-computed tridiagonal.
pub fn propagate(tri: &TriT, tols: &Tolerances) -> Result<PropagatorColumn> {
    let s0 = resolvent11(tri, tols)?;
    let grid = tri.grid().clone();
    let n = grid.n();
    let h = grid.h();
    let mut u = vec![Complex64::new(1.0, 0.0); n];
    if let Some(r) = s0.smooth() {
        let mut acc = Complex64::default();
        for i in 1..n {
            acc += 0.5 * h * (r.at(i - 1, 0) + r.at(i, 0));
            u[i] += acc;
        }
    }
    Ok(PropagatorColumn { grid, u, oracle: None, abs_err: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dstar::{distance, StarDist};
    use crate::grid::make_grid;
    use crate::kernel::Kernel2;
    use crate::starlan::{tri_moments, SuperForm, TriT};

    fn re(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn scalar_resolvent_geometric_series() {
        let g = make_grid(0.0, 1.0, 401).unwrap();
        let tols = Tolerances::default();
        let lam = 1.0;
        let alpha = StarDist::from_kernel(Kernel2::theta(g.clone()).scale(re(lam)));
        let t = TriT::new(vec![alpha], vec![], SuperForm::Delta).unwrap();
        let s = resolvent11(&t, &tols).unwrap();
        assert_eq!(s.deltas().len(), 1);
        assert_eq!(s.deltas()[0].order, 0);
        let expect = Kernel2::sample(g, |tp, t| re(lam * (lam * (tp - t)).exp())).unwrap();
        let err = s.smooth().unwrap().max_abs_diff(&expect);
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn empty_fraction_is_identity() {
        let g = make_grid(0.0, 1.0, 101).unwrap();
        let tols = Tolerances::default();
        let t = TriT::new(vec![StarDist::zero(g.clone())], vec![], SuperForm::Delta).unwrap();
        let s = resolvent11(&t, &tols).unwrap();
        let one = StarDist::identity(g);
        assert!(distance(&s, &one).unwrap() < 1e-14);
    }

    #[test]
    fn two_level_fraction_matches_truncated_neumann_sum() {
        // synthetic depth-2 tridiagonal with polynomial coefficients on a
        // short interval so the series converges fast
        let g = make_grid(0.0, 0.5, 201).unwrap();
        let tols = Tolerances::default();
        let a0 = StarDist::from_kernel(Kernel2::sample(g.clone(), |tp, _| re(0.4 + 0.2 * tp)).unwrap());
        let a1 = StarDist::from_kernel(Kernel2::sample(g.clone(), |_, t| re(0.3 - 0.1 * t)).unwrap());
        let b1 = StarDist::from_kernel(
            Kernel2::sample(g.clone(), |tp, t| re(0.8 * (tp - t) + 0.3 * (tp - t) * (tp - t))).unwrap(),
        );
        let t = TriT::new(vec![a0, a1], vec![b1], SuperForm::Delta).unwrap();
        let s = resolvent11(&t, &tols).unwrap();

        // Neumann oracle: δ + Σ_{j=1..J} (T^{*j})_{11}
        let jmax = 24;
        let tm = tri_moments(&t, jmax, &tols).unwrap();
        let mut acc = StarDist::identity(g.clone());
        for mj in tm.iter().skip(1) {
            acc = acc.add(mj).unwrap();
        }
        let h = g.h();
        let d = distance(&s, &acc).unwrap();
        assert!(d <= 200.0 * h * h, "distance {d}");
    }
}
