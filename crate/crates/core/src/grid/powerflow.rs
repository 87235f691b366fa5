use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{build_ybus, BusKind, GridCase};
use crate::{CMat, DMat, DVec};

#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-8,
            max_iter: 30,
        }
    }
}

/// Converged AC power-flow solution.
#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Complex bus voltages, case bus order.
    pub v: Vec<Complex64>,
    /// Net injected active power per generator (pu, system base).
    pub gen_p: Vec<f64>,
    /// Net injected reactive power per generator (pu, system base).
    pub gen_q: Vec<f64>,
    /// Final maximum power mismatch (pu).
    pub mismatch: f64,
    pub iterations: usize,
}

impl PowerFlowSolution {
    pub fn v_mag(&self, i: usize) -> f64 {
        self.v[i].norm()
    }
}

/// Full Newton-Raphson power flow in polar coordinates, flat start.
pub fn solve_power_flow(case: &GridCase) -> Result<PowerFlowSolution> {
    solve_power_flow_with(case, PfOptions::default())
}

pub fn solve_power_flow_with(case: &GridCase, opt: PfOptions) -> Result<PowerFlowSolution> {
    let n = case.n_bus();
    let y = build_ybus(case);

    // Scheduled injections: generation minus load per bus.
    let mut p_sched = vec![0.0; n];
    let mut q_sched = vec![0.0; n];
    for (i, b) in case.buses.iter().enumerate() {
        p_sched[i] -= b.p_load;
        q_sched[i] -= b.q_load;
    }
    for g in &case.generators {
        let i = case.bus_index(g.bus)?;
        p_sched[i] += g.p_gen;
    }

    let slack = case
        .buses
        .iter()
        .position(|b| b.kind == BusKind::Slack)
        .expect("validated: one slack");
    let pq: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusKind::Pq).collect();

    // Flat start: setpoint magnitude at voltage-controlled buses, 1.0 at PQ.
    let mut vm: Vec<f64> = case
        .buses
        .iter()
        .map(|b| match b.kind {
            BusKind::Pq => 1.0,
            _ => b.v_set,
        })
        .collect();
    let mut va = vec![0.0; n];

    // Unknown ordering: angles at all non-slack buses, then magnitudes at PQ.
    let ang_buses: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let n_ang = ang_buses.len();
    let n_unk = n_ang + pq.len();

    let calc_power = |vm: &[f64], va: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let mut pi = 0.0;
            let mut qi = 0.0;
            for k in 0..n {
                let g = y[(i, k)].re;
                let b = y[(i, k)].im;
                if g == 0.0 && b == 0.0 {
                    continue;
                }
                let th = va[i] - va[k];
                let (s, c) = th.sin_cos();
                pi += vm[i] * vm[k] * (g * c + b * s);
                qi += vm[i] * vm[k] * (g * s - b * c);
            }
            p[i] = pi;
            q[i] = qi;
        }
        (p, q)
    };

    let mismatch_vec = |p: &[f64], q: &[f64]| -> DVec {
        let mut f = DVec::zeros(n_unk);
        for (r, &i) in ang_buses.iter().enumerate() {
            f[r] = p_sched[i] - p[i];
        }
        for (r, &i) in pq.iter().enumerate() {
            f[n_ang + r] = q_sched[i] - q[i];
        }
        f
    };

    let (mut p, mut q) = calc_power(&vm, &va);
    let mut f = mismatch_vec(&p, &q);
    let mut mis = f.amax();
    let mut it = 0;

    while mis > opt.tol && it < opt.max_iter {
        it += 1;
        // Polar Jacobian: rows match the mismatch ordering, columns the unknowns.
        let mut jac = DMat::zeros(n_unk, n_unk);
        for (r, &i) in ang_buses.iter().enumerate() {
            for (c, &k) in ang_buses.iter().enumerate() {
                jac[(r, c)] = if i == k {
                    -q[i] - y[(i, i)].im * vm[i] * vm[i]
                } else {
                    let th = va[i] - va[k];
                    let (s, cth) = th.sin_cos();
                    vm[i] * vm[k] * (y[(i, k)].re * s - y[(i, k)].im * cth)
                };
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(r, n_ang + c)] = if i == k {
                    p[i] / vm[i] + y[(i, i)].re * vm[i]
                } else {
                    let th = va[i] - va[k];
                    let (s, cth) = th.sin_cos();
                    vm[i] * (y[(i, k)].re * cth + y[(i, k)].im * s)
                };
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in ang_buses.iter().enumerate() {
                jac[(n_ang + r, c)] = if i == k {
                    p[i] - y[(i, i)].re * vm[i] * vm[i]
                } else {
                    let th = va[i] - va[k];
                    let (s, cth) = th.sin_cos();
                    -vm[i] * vm[k] * (y[(i, k)].re * cth + y[(i, k)].im * s)
                };
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(n_ang + r, n_ang + c)] = if i == k {
                    q[i] / vm[i] - y[(i, i)].im * vm[i]
                } else {
                    let th = va[i] - va[k];
                    let (s, cth) = th.sin_cos();
                    vm[i] * (y[(i, k)].re * s - y[(i, k)].im * cth)
                };
            }
        }

        let lu = jac.lu();
        let dx = lu
            .solve(&f)
            .ok_or_else(|| Error::SingularJacobian("power-flow Jacobian".into()))?;

        for (r, &i) in ang_buses.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in pq.iter().enumerate() {
            vm[i] += dx[n_ang + r];
        }

        (p, q) = calc_power(&vm, &va);
        f = mismatch_vec(&p, &q);
        mis = f.amax();
        if !mis.is_finite() {
            return Err(Error::PowerFlowDiverged {
                iterations: it,
                mismatch: mis,
            });
        }
    }

    if mis > opt.tol {
        return Err(Error::PowerFlowDiverged {
            iterations: it,
            mismatch: mis,
        });
    }

    // Per-generator injections: slack and PV bus power comes out of the
    // solution; reactive power splits by machine rating when a bus hosts
    // several units.
    let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
    let mut gen_p = Vec::with_capacity(case.n_gen());
    let mut gen_q = Vec::with_capacity(case.n_gen());
    for g in &case.generators {
        let i = case.bus_index(g.bus)?;
        let bus_gen_p = p[i] + case.buses[i].p_load;
        let bus_gen_q = q[i] + case.buses[i].q_load;
        let total_mva: f64 = case
            .generators
            .iter()
            .filter(|o| o.bus == g.bus)
            .map(|o| o.mva_base)
            .sum();
        let share = g.mva_base / total_mva;
        let p_g = match case.buses[i].kind {
            BusKind::Slack => bus_gen_p * share,
            _ => g.p_gen,
        };
        gen_p.push(p_g);
        gen_q.push(bus_gen_q * share);
    }

    Ok(PowerFlowSolution {
        v,
        gen_p,
        gen_q,
        mismatch: mis,
        iterations: it,
    })
}

/// Total complex power absorbed by the passive network at the given
/// voltages (losses plus net shunt exchange). Useful for closing the
/// power balance of a solution.
pub fn total_injection(case: &GridCase, y: &CMat, v: &[Complex64]) -> Complex64 {
    let n = case.n_bus();
    let mut s = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let mut ii = Complex64::new(0.0, 0.0);
        for k in 0..n {
            ii += y[(i, k)] * v[k];
        }
        s += v[i] * ii.conj();
    }
    s
}
