//! Linearization of the DAE around an equilibrium: finite-difference
//! Jacobian blocks, Kron reduction of the algebraic variables, and the
//! Newton solves used to find equilibria and consistent algebraic vectors.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::machine::DaeSystem;
use crate::{DMat, DVec};

/// Perturbation for a finite-difference column: 1e-6 scaled by the
/// variable's magnitude, floored at 1e-6.
fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// Central finite-difference Jacobian blocks at (x, y):
/// J1 = df/dx (n x n), J2 = df/dy (n x l), J3 = dg/dx (l x n),
/// J4 = dg/dy (l x l). Columns are evaluated in parallel; the result does
/// not depend on evaluation order.
pub fn jacobians<D: DaeSystem>(dae: &D, x: &DVec, y: &DVec) -> (DMat, DMat, DMat, DMat) {
    let n = dae.n_diff();
    let l = dae.n_alg();

    let x_cols: Vec<(DVec, DVec)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let h = fd_step(x[j]);
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let df = (dae.eval_f(&xp, y) - dae.eval_f(&xm, y)) / (2.0 * h);
            let dg = (dae.eval_g(&xp, y) - dae.eval_g(&xm, y)) / (2.0 * h);
            (df, dg)
        })
        .collect();

    let y_cols: Vec<(DVec, DVec)> = (0..l)
        .into_par_iter()
        .map(|j| {
            let h = fd_step(y[j]);
            let mut yp = y.clone();
            yp[j] += h;
            let mut ym = y.clone();
            ym[j] -= h;
            let df = (dae.eval_f(x, &yp) - dae.eval_f(x, &ym)) / (2.0 * h);
            let dg = (dae.eval_g(x, &yp) - dae.eval_g(x, &ym)) / (2.0 * h);
            (df, dg)
        })
        .collect();

    let mut j1 = DMat::zeros(n, n);
    let mut j3 = DMat::zeros(l, n);
    for (j, (df, dg)) in x_cols.iter().enumerate() {
        j1.set_column(j, df);
        j3.set_column(j, dg);
    }
    let mut j2 = DMat::zeros(n, l);
    let mut j4 = DMat::zeros(l, l);
    for (j, (df, dg)) in y_cols.iter().enumerate() {
        j2.set_column(j, df);
        j4.set_column(j, dg);
    }
    (j1, j2, j3, j4)
}

/// Newton solve of g(x, y) = 0 for y at fixed x.
pub fn solve_algebraic<D: DaeSystem>(
    dae: &D,
    x: &DVec,
    y0: &DVec,
    tol: f64,
    max_iter: usize,
) -> Result<DVec> {
    let l = dae.n_alg();
    let mut y = y0.clone();
    let mut g = dae.eval_g(x, &y);
    for _ in 0..max_iter {
        if g.amax() <= tol {
            return Ok(y);
        }
        let cols: Vec<DVec> = (0..l)
            .into_par_iter()
            .map(|j| {
                let h = fd_step(y[j]);
                let mut yp = y.clone();
                yp[j] += h;
                let mut ym = y.clone();
                ym[j] -= h;
                (dae.eval_g(x, &yp) - dae.eval_g(x, &ym)) / (2.0 * h)
            })
            .collect();
        let mut j4 = DMat::zeros(l, l);
        for (j, c) in cols.iter().enumerate() {
            j4.set_column(j, c);
        }
        let dy = j4
            .lu()
            .solve(&g)
            .ok_or_else(|| Error::SingularJacobian("algebraic system dg/dy".into()))?;
        y -= dy;
        g = dae.eval_g(x, &y);
    }
    let res = g.amax();
    if res <= tol {
        Ok(y)
    } else {
        Err(Error::NewtonDiverged {
            time: 0.0,
            residual: res,
            iterations: max_iter,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub x: DVec,
    pub y: DVec,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EquilibrateOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EquilibrateOptions {
    fn default() -> Self {
        EquilibrateOptions {
            tol: 1e-10,
            max_iter: 60,
        }
    }
}

/// Newton solve of the combined system [f; g] = 0 from the given guess,
/// with a backtracking line search on the residual norm.
pub fn equilibrate<D: DaeSystem>(
    dae: &D,
    x0: &DVec,
    y0: &DVec,
    opt: EquilibrateOptions,
) -> Result<Equilibrium> {
    let n = dae.n_diff();
    let l = dae.n_alg();
    let mut x = x0.clone();
    let mut y = y0.clone();

    let resid = |x: &DVec, y: &DVec| -> DVec {
        let f = dae.eval_f(x, y);
        let g = dae.eval_g(x, y);
        let mut r = DVec::zeros(n + l);
        r.rows_mut(0, n).copy_from(&f);
        r.rows_mut(n, l).copy_from(&g);
        r
    };

    let mut r = resid(&x, &y);
    let mut norm = r.amax();
    if norm <= opt.tol {
        return Ok(Equilibrium {
            x,
            y,
            iterations: 0,
            residual: norm,
        });
    }

    for it in 1..=opt.max_iter {
        let (j1, j2, j3, j4) = jacobians(dae, &x, &y);
        let mut jac = DMat::zeros(n + l, n + l);
        jac.view_mut((0, 0), (n, n)).copy_from(&j1);
        jac.view_mut((0, n), (n, l)).copy_from(&j2);
        jac.view_mut((n, 0), (l, n)).copy_from(&j3);
        jac.view_mut((n, n), (l, l)).copy_from(&j4);
        let step = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::SingularJacobian("combined [f; g] Jacobian".into()))?;

        // Backtracking: accept the first step length that reduces the norm.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let xt = &x - step.rows(0, n) * lambda;
            let yt = &y - step.rows(n, l) * lambda;
            let rt = resid(&xt, &yt);
            let nt = rt.amax();
            if nt < norm || nt <= opt.tol {
                x = xt;
                y = yt;
                r = rt;
                norm = nt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::EquilibriumDiverged {
                residual: norm,
                iterations: it,
            });
        }
        if norm <= opt.tol {
            return Ok(Equilibrium {
                x,
                y,
                iterations: it,
                residual: norm,
            });
        }
    }
    Err(Error::EquilibriumDiverged {
        residual: norm,
        iterations: opt.max_iter,
    })
}

/// Kron reduction: A_s = J1 - J2 * J4^-1 * J3, computed through an LU
/// factorization of J4 (J4 is never inverted explicitly).
pub fn kron_reduce(j1: &DMat, j2: &DMat, j3: &DMat, j4: &DMat) -> Result<DMat> {
    let lu = j4.clone().lu();
    match lu.solve(j3) {
        Some(x) => Ok(j1 - j2 * x),
        None => {
            // point at the worst-pivoted algebraic equation
            let u = lu.u();
            let mut worst = 0;
            let mut smallest = f64::INFINITY;
            for i in 0..u.nrows() {
                let p = u[(i, i)].abs();
                if p < smallest {
                    smallest = p;
                    worst = i;
                }
            }
            Err(Error::SingularJacobian(format!(
                "J4 is singular; worst-conditioned algebraic equation is row {worst} (pivot {smallest:.3e})"
            )))
        }
    }
}

/// 2-norm condition number estimate via SVD.
pub fn condition_estimate(m: &DMat) -> f64 {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Jacobian blocks and the Kron-reduced state matrix at an equilibrium.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a_s: DMat,
    pub j1: DMat,
    pub j2: DMat,
    pub j3: DMat,
    pub j4: DMat,
    pub x_e: DVec,
    pub y_e: DVec,
    pub cond_j4: f64,
}

impl LinearModel {
    /// Recompute A_s from the stored blocks and report the largest
    /// elementwise difference. Tests pin this at ~machine precision.
    pub fn reduction_defect(&self) -> f64 {
        let recomputed =
            kron_reduce(&self.j1, &self.j2, &self.j3, &self.j4).expect("J4 factorized before");
        (&recomputed - &self.a_s).amax()
    }
}

/// Build the linearized model at (x_e, y_e).
pub fn linearize<D: DaeSystem>(dae: &D, x_e: &DVec, y_e: &DVec) -> Result<LinearModel> {
    let (j1, j2, j3, j4) = jacobians(dae, x_e, y_e);
    let a_s = kron_reduce(&j1, &j2, &j3, &j4)?;
    let cond_j4 = condition_estimate(&j4);
    Ok(LinearModel {
        a_s,
        j1,
        j2,
        j3,
        j4,
        x_e: x_e.clone(),
        y_e: y_e.clone(),
        cond_j4,
    })
}

/// Dump a dense matrix to a text file, one row per line, scientific
/// notation, for external verification.
pub fn write_matrix(path: &std::path::Path, m: &DMat) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:+.16e}", m[(i, j)]))
            .collect();
        writeln!(f, "{}", row.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// f = -x + 2y, g = x - y: J1 = -1, J2 = 2, J3 = 1, J4 = -1.
    struct LinearToy;

    impl DaeSystem for LinearToy {
        fn n_diff(&self) -> usize {
            1
        }
        fn n_alg(&self) -> usize {
            1
        }
        fn eval_f(&self, x: &DVec, y: &DVec) -> DVec {
            DVec::from_element(1, -x[0] + 2.0 * y[0])
        }
        fn eval_g(&self, x: &DVec, y: &DVec) -> DVec {
            DVec::from_element(1, x[0] - y[0])
        }
    }

    #[test]
    fn linear_toy_jacobians_exact() {
        let x = DVec::from_element(1, 0.3);
        let y = DVec::from_element(1, 0.7);
        let (j1, j2, j3, j4) = jacobians(&LinearToy, &x, &y);
        assert_abs_diff_eq!(j1[(0, 0)], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(j2[(0, 0)], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(j3[(0, 0)], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(j4[(0, 0)], -1.0, epsilon = 1e-9);
        // A_s = J1 - J2 J4^-1 J3 = -1 - 2*(-1)*1 = 1
        let a = kron_reduce(&j1, &j2, &j3, &j4).unwrap();
        assert_abs_diff_eq!(a[(0, 0)], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn kron_with_zero_coupling_returns_j1() {
        let j1 = DMat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let j2 = DMat::zeros(2, 2);
        let j3 = DMat::identity(2, 2);
        let j4 = DMat::identity(2, 2) * -1.0;
        let a = kron_reduce(&j1, &j2, &j3, &j4).unwrap();
        assert_abs_diff_eq!((&a - &j1).amax(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn kron_scalar_hand_case() {
        // J1 = 0, J2 = 1, J3 = 1, J4 = -1  =>  A_s = 0 - 1*(-1)*1 = 1
        let one = |v: f64| DMat::from_element(1, 1, v);
        let a = kron_reduce(&one(0.0), &one(1.0), &one(1.0), &one(-1.0)).unwrap();
        assert_abs_diff_eq!(a[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn singular_j4_reports_row() {
        let j1 = DMat::zeros(1, 1);
        let j2 = DMat::from_element(1, 2, 1.0);
        let j3 = DMat::from_element(2, 1, 1.0);
        let j4 = DMat::zeros(2, 2);
        let err = kron_reduce(&j1, &j2, &j3, &j4).unwrap_err();
        assert!(matches!(err, Error::SingularJacobian(_)));
    }

    /// Nonlinear toy with known equilibrium x = y = 1: f = y - x^2, g = y - 1.
    struct NonlinToy;

    impl DaeSystem for NonlinToy {
        fn n_diff(&self) -> usize {
            1
        }
        fn n_alg(&self) -> usize {
            1
        }
        fn eval_f(&self, x: &DVec, y: &DVec) -> DVec {
            DVec::from_element(1, y[0] - x[0] * x[0])
        }
        fn eval_g(&self, _x: &DVec, y: &DVec) -> DVec {
            DVec::from_element(1, y[0] - 1.0)
        }
    }

    #[test]
    fn equilibrate_converges_and_is_idempotent() {
        let x0 = DVec::from_element(1, 0.8);
        let y0 = DVec::from_element(1, 0.9);
        let eq = equilibrate(&NonlinToy, &x0, &y0, EquilibrateOptions::default()).unwrap();
        assert_abs_diff_eq!(eq.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(eq.y[0], 1.0, epsilon = 1e-9);
        // handing the solution back converges without iterating
        let eq2 = equilibrate(&NonlinToy, &eq.x, &eq.y, EquilibrateOptions::default()).unwrap();
        assert_eq!(eq2.iterations, 0);
    }

    #[test]
    fn richardson_oracle_matches_fd_jacobian() {
        // Richardson-extrapolated differentiation as an independent check
        // of the production finite-difference path on a smooth nonlinear map.
        struct Smooth;
        impl DaeSystem for Smooth {
            fn n_diff(&self) -> usize {
                2
            }
            fn n_alg(&self) -> usize {
                1
            }
            fn eval_f(&self, x: &DVec, y: &DVec) -> DVec {
                DVec::from_vec(vec![
                    (x[0] * x[1]).sin() + y[0],
                    x[1].exp() - 0.5 * y[0] * y[0],
                ])
            }
            fn eval_g(&self, x: &DVec, y: &DVec) -> DVec {
                DVec::from_element(1, x[0] + x[1].cos() * y[0] - 1.0)
            }
        }
        let x = DVec::from_vec(vec![0.3, -0.2]);
        let y = DVec::from_element(1, 0.4);
        let (j1, j2, j3, j4) = jacobians(&Smooth, &x, &y);

        // D = (4 D(h/2) - D(h)) / 3 with D(h) the central difference.
        let richardson = |col: usize, on_x: bool| -> (DVec, DVec) {
            let h0 = 1e-4;
            let eval = |h: f64| -> (DVec, DVec) {
                let mut xp = x.clone();
                let mut xm = x.clone();
                let mut yp = y.clone();
                let mut ym = y.clone();
                if on_x {
                    xp[col] += h;
                    xm[col] -= h;
                } else {
                    yp[col] += h;
                    ym[col] -= h;
                }
                let df = (Smooth.eval_f(&xp, &yp) - Smooth.eval_f(&xm, &ym)) / (2.0 * h);
                let dg = (Smooth.eval_g(&xp, &yp) - Smooth.eval_g(&xm, &ym)) / (2.0 * h);
                (df, dg)
            };
            let (f1, g1) = eval(h0);
            let (f2, g2) = eval(h0 / 2.0);
            ((f2 * 4.0 - f1) / 3.0, (g2 * 4.0 - g1) / 3.0)
        };

        for j in 0..2 {
            let (df, dg) = richardson(j, true);
            for i in 0..2 {
                assert_abs_diff_eq!(j1[(i, j)], df[i], epsilon = 1e-6);
            }
            assert_abs_diff_eq!(j3[(0, j)], dg[0], epsilon = 1e-6);
        }
        let (df, dg) = richardson(0, false);
        for i in 0..2 {
            assert_abs_diff_eq!(j2[(i, 0)], df[i], epsilon = 1e-6);
        }
        assert_abs_diff_eq!(j4[(0, 0)], dg[0], epsilon = 1e-6);
    }
}
