use num_complex::Complex64;
use ordex_core::dstar::{distance, star, StarDist};
use ordex_core::kernel::{vcompose, volterra_solve, Kernel2};
use ordex_core::*;

fn re(x: f64) -> Complex64 { Complex64::new(x, 0.0) }

fn main() {
    let tols = Tolerances::default();
    let cfun = |t: f64| 2.0 + 1.8 * (5.0 * t).sin();
    let cint = |t: f64| 2.0 * t - 1.8 / 5.0 * (5.0 * t).cos();
    let n = 201;
    let g = make_grid(0.0, 1.0, n).unwrap();
    let f = Kernel2::sample(g.clone(), |tp, t| re(cint(tp) - cint(t))).unwrap();

    // reproduce the internals of star_inverse_smooth for k = 1
    let c = f.diag_jet(1, 0).unwrap();
    let inv_c = DiagFn::new(g.clone(), c.values().iter().map(|v| re(1.0) / v).collect()).unwrap();
    let gk = f.d_dt_n(2);
    let q = gk.scale_rows(&inv_c).unwrap().scale(re(-1.0));
    let x = q.scale_cols(&inv_c).unwrap();
    let rho = volterra_solve(&q, &x, tols.overflow).unwrap();

    // check the defining smooth equation: c(t')ρ + g γ(t) + g*ρ = 0
    let lhs = rho
        .scale_rows(&DiagFn::new(g.clone(), c.values().to_vec()).unwrap()).unwrap()
        .add(&gk.scale_cols(&inv_c).unwrap()).unwrap()
        .add(&vcompose(&gk, &rho).unwrap()).unwrap();
    println!("smooth-equation residual: {:.3e} (rho sup {:.3e})", lhs.sup_norm(), rho.sup_norm());

    // check (cδ + g) * (γδ + ρ) = δ via star
    let cd = StarDist::delta(0, DiagFn::new(g.clone(), c.values().to_vec()).unwrap(), 8).unwrap()
        .add(&StarDist::from_kernel(gk.clone())).unwrap();
    let rd = StarDist::delta(0, inv_c.clone(), 8).unwrap()
        .add(&StarDist::from_kernel(rho.clone())).unwrap();
    let one = StarDist::identity(g.clone());
    println!("star (cδ+g)(γδ+ρ) residual: {:.3e}", distance(&star(&cd, &rd).unwrap(), &one).unwrap());

    // b assembly and δ'*b = γδ + ρ check
    let b = Kernel2::theta(g.clone()).scale_cols(&inv_c).unwrap().add(&rho.cumint_columns()).unwrap();
    let dp = StarDist::delta_pure(1, g.clone(), 8).unwrap();
    let exp1 = star(&dp, &StarDist::from_kernel(b.clone())).unwrap();
    println!("δ'*b vs (γδ+ρ): {:.3e}", distance(&exp1, &rd).unwrap());

    // full: δ^{(3)}*b expansion, then residuals
    let d3 = StarDist::delta_pure(3, g.clone(), 8).unwrap();
    let invd = star(&d3, &StarDist::from_kernel(b.clone())).unwrap();
    let fd = StarDist::from_kernel(f.clone());
    println!("left  residual (inv*f): {:.3e}", distance(&star(&invd, &fd).unwrap(), &one).unwrap());
    println!("right residual (f*inv): {:.3e}", distance(&star(&fd, &invd).unwrap(), &one).unwrap());

    // alternative: associate as δ^{(2)} * (δ' * b) = δ^{(2)} * (γδ + ρ)
    let d2 = StarDist::delta_pure(2, g.clone(), 8).unwrap();
    let invd2 = star(&d2, &rd).unwrap();
    println!("alt left  residual: {:.3e}", distance(&star(&invd2, &fd).unwrap(), &one).unwrap());
    println!("alt right residual: {:.3e}", distance(&star(&fd, &invd2).unwrap(), &one).unwrap());
    // compare the two expansions
    println!("expansion diff: {:.3e}", distance(&invd, &invd2).unwrap());
    for t in invd.deltas() { println!("  invd  order {} sup {:.3e}", t.order, t.coeff.sup_norm()); }
    for t in invd2.deltas() { println!("  invd2 order {} sup {:.3e}", t.order, t.coeff.sup_norm()); }
}
