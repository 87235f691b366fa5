use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{build_ybus, BusKind, GridCase, PowerFlowSolution, Scenario};
use crate::machine::{DaeSystem, StateLayout};
use crate::{CMat, DVec};

/// One synchronous generator with its controls, all quantities converted to
/// the system base.
#[derive(Debug, Clone)]
pub struct Machine {
    pub id: String,
    pub bus: usize,
    /// 2H (s).
    pub h2: f64,
    pub d: f64,
    pub xd: f64,
    pub xd_p: f64,
    pub xq: f64,
    pub xq_p: f64,
    pub td0_p: f64,
    pub tq0_p: f64,
    pub rs: f64,
    // IEEE Type-1 exciter
    pub ka: f64,
    pub ta: f64,
    pub ke: f64,
    pub te: f64,
    pub kf: f64,
    pub tf: f64,
    pub tr: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub vr_min: f64,
    pub vr_max: f64,
    /// Regulator reference, set at initialization.
    pub v_ref: f64,
    // IEESGO-style governor
    /// 1/R on the system base.
    pub inv_r: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub t_ch: f64,
    pub t5: f64,
    pub t6: f64,
    pub k2: f64,
    pub k3: f64,
    /// Power reference, set at initialization from the dispatch.
    pub p_c: f64,
}

impl Machine {
    fn se(&self, efd: f64) -> f64 {
        if self.se_a == 0.0 {
            0.0
        } else {
            self.se_a * (self.se_b * efd).exp()
        }
    }
}

/// System state: differential vector `x`, algebraic vector `y`, time.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub x: DVec,
    pub y: DVec,
    pub t: f64,
}

/// The assembled differential-algebraic model. Immutable once built; all
/// residual evaluations are pure.
#[derive(Debug, Clone)]
pub struct DynamicModel {
    pub layout: StateLayout,
    pub machines: Vec<Machine>,
    pub f_nom: f64,
    pub base_mva: f64,
    /// 2*pi*f_nom (rad/s).
    pub omega_b: f64,
    /// Network plus constant-impedance load admittance matrix.
    pub y_dyn: CMat,
    /// Bus ids in matrix order, for reporting.
    pub bus_ids: Vec<u32>,
    /// Fixed rotor angle of the reference machine (rad).
    pub delta_ref: f64,
    /// Branch-only admittance matrix (no loads).
    y_branch: CMat,
    /// Power-flow voltage magnitudes anchoring the load admittances.
    anchor_v: Vec<f64>,
    /// Per-bus load (p, q) currently applied.
    loads: Vec<(f64, f64)>,
    pub exciter_limits: bool,
}

impl DynamicModel {
    /// Rotor angle of machine `m` in the model's rotating frame.
    pub fn delta(&self, m: usize, x: &DVec) -> f64 {
        match self.layout.block(m).delta {
            Some(i) => x[i],
            None => self.delta_ref,
        }
    }

    /// Fold constant-impedance loads into a branch admittance matrix.
    fn with_loads(y_branch: &CMat, anchor_v: &[f64], loads: &[(f64, f64)]) -> CMat {
        let mut y = y_branch.clone();
        for (k, &(p, q)) in loads.iter().enumerate() {
            let v2 = anchor_v[k] * anchor_v[k];
            y[(k, k)] += Complex64::new(p, -q) / v2;
        }
        y
    }

    /// Apply a disturbance, producing the post-fault model. Controller
    /// references (P_C, V_ref) are retained from the pre-fault
    /// initialization; load steps re-derive the load admittances at the
    /// original anchor voltages.
    pub fn apply_scenario(&self, scenario: &Scenario) -> Result<DynamicModel> {
        let mut out = self.clone();
        match scenario {
            Scenario::LoadStep { bus, percent } => {
                let i = self
                    .bus_ids
                    .iter()
                    .position(|&b| b == *bus)
                    .ok_or(Error::UnknownBus(*bus))?;
                let k = 1.0 + percent / 100.0;
                out.loads[i].0 *= k;
                out.loads[i].1 *= k;
                out.y_dyn = Self::with_loads(&out.y_branch, &out.anchor_v, &out.loads);
            }
            Scenario::GenTrip { gen } => {
                let m = out
                    .layout
                    .machine_index(gen)
                    .ok_or_else(|| Error::UnknownGenerator(gen.clone()))?;
                out.machines.remove(m);
                let ids: Vec<String> = out.machines.iter().map(|g| g.id.clone()).collect();
                if ids.is_empty() {
                    return Err(Error::Validation(
                        "cannot trip the last in-service generator".into(),
                    ));
                }
                let old_ref = out.layout.reference;
                let new_ref = if m == old_ref {
                    0
                } else if m < old_ref {
                    old_ref - 1
                } else {
                    old_ref
                };
                out.layout = StateLayout::new(ids, new_ref, out.layout.n_bus);
            }
        }
        Ok(out)
    }

    /// Carry a pre-fault state over to this (post-trip) model's layout.
    /// Surviving machine states copy across; the algebraic vector is
    /// re-solved by the caller. Re-anchors the angle gauge when the
    /// reference machine itself was dropped.
    pub fn project_state(&mut self, from: &DynamicModel, state: &SystemState) -> SystemState {
        let new_ref = &self.machines[self.layout.reference].id;
        let src_ref = from.layout.machine_index(new_ref).expect("reference exists");
        self.delta_ref = from.delta(src_ref, &state.x);

        let mut x = DVec::zeros(self.layout.n_diff());
        for (m, mach) in self.machines.iter().enumerate() {
            let src_m = from
                .layout
                .machine_index(&mach.id)
                .expect("projected machine exists in source layout");
            let sb = from.layout.block(src_m);
            let db = self.layout.block(m);
            if let Some(di) = db.delta {
                x[di] = from.delta(src_m, &state.x);
            }
            x[db.omega] = state.x[sb.omega];
            x[db.eq_p] = state.x[sb.eq_p];
            x[db.ed_p] = state.x[sb.ed_p];
            x[db.vm] = state.x[sb.vm];
            x[db.efd] = state.x[sb.efd];
            x[db.rf] = state.x[sb.rf];
            x[db.vr] = state.x[sb.vr];
            x[db.y1] = state.x[sb.y1];
            x[db.y2] = state.x[sb.y2];
            x[db.y3] = state.x[sb.y3];
            x[db.tm] = state.x[sb.tm];
            x[db.y4] = state.x[sb.y4];
            x[db.y5] = state.x[sb.y5];
        }
        let mut y = DVec::zeros(self.layout.n_alg());
        // Bus voltages carry over as the initial guess for the re-solve.
        for i in 0..2 * self.layout.n_bus {
            y[i] = state.y[i];
        }
        for (m, mach) in self.machines.iter().enumerate() {
            let src_m = from.layout.machine_index(&mach.id).unwrap();
            let (sid, siq) = from.layout.i_indices(src_m);
            let (did, diq) = self.layout.i_indices(m);
            y[did] = state.y[sid];
            y[diq] = state.y[siq];
        }
        SystemState {
            x,
            y,
            t: state.t,
        }
    }

    /// Fixed rotor angle used for the reference machine; exposed for tests.
    pub fn reference_angle(&self) -> f64 {
        self.delta_ref
    }

    pub fn residual_f(&self, state: &SystemState) -> DVec {
        self.eval_f(&state.x, &state.y)
    }

    pub fn residual_g(&self, state: &SystemState) -> DVec {
        self.eval_g(&state.x, &state.y)
    }
}

impl DaeSystem for DynamicModel {
    fn n_diff(&self) -> usize {
        self.layout.n_diff()
    }

    fn n_alg(&self) -> usize {
        self.layout.n_alg()
    }

    fn eval_f(&self, x: &DVec, y: &DVec) -> DVec {
        assert_eq!(x.len(), self.n_diff(), "state dimension mismatch");
        assert_eq!(y.len(), self.n_alg(), "algebraic dimension mismatch");
        let mut f = DVec::zeros(self.n_diff());
        let ref_omega = x[self.layout.block(self.layout.reference).omega];
        for (m, mach) in self.machines.iter().enumerate() {
            let b = self.layout.block(m);
            let omega = x[b.omega];
            let eq_p = x[b.eq_p];
            let ed_p = x[b.ed_p];
            let vm = x[b.vm];
            let efd = x[b.efd];
            let rf = x[b.rf];
            let vr = x[b.vr];
            let y1 = x[b.y1];
            let y2 = x[b.y2];
            let y3 = x[b.y3];
            let tm = x[b.tm];
            let y4 = x[b.y4];
            let y5 = x[b.y5];

            let (vre, vim) = {
                let (i, j) = self.layout.v_indices(mach.bus);
                (y[i], y[j])
            };
            let (id, iq) = {
                let (i, j) = self.layout.i_indices(m);
                (y[i], y[j])
            };
            let vt = (vre * vre + vim * vim).sqrt();

            if let Some(di) = b.delta {
                f[di] = self.omega_b * (omega - ref_omega);
            }
            let pe = ed_p * id + eq_p * iq + (mach.xq_p - mach.xd_p) * id * iq;
            let pmech = (1.0 - mach.k2) * tm + (1.0 - mach.k3) * y4 + y5;
            f[b.omega] = (pmech - pe - mach.d * (omega - 1.0)) / mach.h2;
            f[b.eq_p] = (-eq_p - (mach.xd - mach.xd_p) * id + efd) / mach.td0_p;
            f[b.ed_p] = (-ed_p + (mach.xq - mach.xq_p) * iq) / mach.tq0_p;

            f[b.vm] = (vt - vm) / mach.tr;
            f[b.efd] = (-(mach.ke + mach.se(efd)) * efd + vr) / mach.te;
            f[b.rf] = (-rf + (mach.kf / mach.tf) * efd) / mach.tf;
            let mut vr_dot = (-vr + mach.ka * rf - (mach.ka * mach.kf / mach.tf) * efd
                + mach.ka * (mach.v_ref - vm))
                / mach.ta;
            if self.exciter_limits {
                if vr >= mach.vr_max && vr_dot > 0.0 {
                    vr_dot = 0.0;
                }
                if vr <= mach.vr_min && vr_dot < 0.0 {
                    vr_dot = 0.0;
                }
            }
            f[b.vr] = vr_dot;

            let u = -(omega - 1.0) * mach.inv_r;
            let y1_dot = (u - y1) / mach.t1;
            f[b.y1] = y1_dot;
            f[b.y2] = ((mach.t2 - mach.t3) * y1_dot - y2) / mach.t3;
            f[b.y3] = (y1 + y2 - y3) / mach.t4;
            f[b.tm] = (mach.p_c + y3 - tm) / mach.t_ch;
            f[b.y4] = (mach.k2 * tm - y4) / mach.t5;
            f[b.y5] = (mach.k3 * y4 - y5) / mach.t6;
        }
        f
    }

    fn eval_g(&self, x: &DVec, y: &DVec) -> DVec {
        assert_eq!(x.len(), self.n_diff(), "state dimension mismatch");
        assert_eq!(y.len(), self.n_alg(), "algebraic dimension mismatch");
        let n_bus = self.layout.n_bus;
        let mut g = DVec::zeros(self.n_alg());

        // Network current balance: Y_dyn * V - I_gen = 0.
        for i in 0..n_bus {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n_bus {
                let yik = self.y_dyn[(i, k)];
                if yik.re == 0.0 && yik.im == 0.0 {
                    continue;
                }
                let (vr_i, vi_i) = self.layout.v_indices(k);
                acc += yik * Complex64::new(y[vr_i], y[vi_i]);
            }
            g[2 * i] = acc.re;
            g[2 * i + 1] = acc.im;
        }
        for (m, mach) in self.machines.iter().enumerate() {
            let delta = self.delta(m, x);
            let (s, c) = delta.sin_cos();
            let (idx_d, idx_q) = self.layout.i_indices(m);
            let (id, iq) = (y[idx_d], y[idx_q]);
            // network-frame injection of the dq current
            let ire = id * s + iq * c;
            let iim = -id * c + iq * s;
            g[2 * mach.bus] -= ire;
            g[2 * mach.bus + 1] -= iim;
        }

        // Stator equations.
        for (m, mach) in self.machines.iter().enumerate() {
            let b = self.layout.block(m);
            let delta = self.delta(m, x);
            let (s, c) = delta.sin_cos();
            let (vr_i, vi_i) = self.layout.v_indices(mach.bus);
            let (vre, vim) = (y[vr_i], y[vi_i]);
            let vd = vre * s - vim * c;
            let vq = vre * c + vim * s;
            let (idx_d, idx_q) = self.layout.i_indices(m);
            let (id, iq) = (y[idx_d], y[idx_q]);
            let base = 2 * n_bus;
            g[base + 2 * m] = x[b.ed_p] - vd - mach.rs * id + mach.xq_p * iq;
            g[base + 2 * m + 1] = x[b.eq_p] - vq - mach.rs * iq - mach.xd_p * id;
        }
        g
    }
}

fn machine_from_case(case: &GridCase, gi: usize) -> Machine {
    let g = &case.generators[gi];
    let exc = case.exciter(&g.id);
    let gov = case.governor(&g.id);
    let zb = case.base_mva / g.mva_base; // impedance scale machine -> system
    Machine {
        id: g.id.clone(),
        bus: case.bus_index(g.bus).expect("validated"),
        h2: 2.0 * g.h * g.mva_base / case.base_mva,
        d: g.d * g.mva_base / case.base_mva,
        xd: g.xd * zb,
        xd_p: g.xd_p * zb,
        xq: g.xq * zb,
        xq_p: g.xq_p * zb,
        td0_p: g.td0_p,
        tq0_p: g.tq0_p,
        rs: g.rs * zb,
        ka: exc.ka,
        ta: exc.ta,
        ke: exc.ke,
        te: exc.te,
        kf: exc.kf,
        tf: exc.tf,
        tr: exc.tr,
        se_a: exc.se_a,
        se_b: exc.se_b,
        vr_min: exc.vr_min.unwrap_or(f64::NEG_INFINITY),
        vr_max: exc.vr_max.unwrap_or(f64::INFINITY),
        v_ref: 0.0,
        inv_r: (1.0 / gov.r_d) * g.mva_base / case.base_mva,
        t1: gov.t1,
        t2: gov.t2,
        t3: gov.t3,
        t4: gov.t4,
        t_ch: gov.t_ch,
        t5: gov.t5,
        t6: gov.t6,
        k2: gov.k2,
        k3: gov.k3,
        p_c: 0.0,
    }
}

/// Build the dynamic model from a solved power flow and initialize every
/// device in steady state at nominal speed.
///
/// Tolerances on the returned state: |f|_inf <= 1e-8, |g|_inf <= 1e-10.
pub fn init_dynamic_state(
    case: &GridCase,
    pf: &PowerFlowSolution,
) -> Result<(DynamicModel, SystemState)> {
    let n_bus = case.n_bus();
    let ids: Vec<String> = case.generators.iter().map(|g| g.id.clone()).collect();
    if ids.is_empty() {
        return Err(Error::Validation("case has no generators".into()));
    }
    // Reference machine: the unit on the slack bus (first one if several).
    let slack_bus = case
        .buses
        .iter()
        .position(|b| b.kind == BusKind::Slack)
        .expect("validated");
    let reference = case
        .generators
        .iter()
        .position(|g| case.bus_index(g.bus).unwrap() == slack_bus)
        .unwrap_or(0);

    let layout = StateLayout::new(ids, reference, n_bus);
    let mut machines: Vec<Machine> = (0..case.n_gen())
        .map(|gi| machine_from_case(case, gi))
        .collect();

    let anchor_v: Vec<f64> = (0..n_bus).map(|i| pf.v[i].norm()).collect();
    let loads: Vec<(f64, f64)> = case.buses.iter().map(|b| (b.p_load, b.q_load)).collect();

    let mut x = DVec::zeros(layout.n_diff());
    let mut y = DVec::zeros(layout.n_alg());
    for i in 0..n_bus {
        y[2 * i] = pf.v[i].re;
        y[2 * i + 1] = pf.v[i].im;
    }

    let mut delta_ref = 0.0;
    for (m, mach) in machines.iter_mut().enumerate() {
        let b = layout.block(m);
        let v = pf.v[mach.bus];
        let s = Complex64::new(pf.gen_p[m], pf.gen_q[m]);
        let i_net = (s / v).conj();
        let e_int = v + Complex64::new(mach.rs, mach.xq) * i_net;
        let delta = e_int.arg();
        let (sd, cd) = delta.sin_cos();
        let vd = v.re * sd - v.im * cd;
        let vq = v.re * cd + v.im * sd;
        let id = i_net.re * sd - i_net.im * cd;
        let iq = i_net.re * cd + i_net.im * sd;
        let eq_p = vq + mach.rs * iq + mach.xd_p * id;
        let ed_p = vd + mach.rs * id - mach.xq_p * iq;
        let efd = eq_p + (mach.xd - mach.xd_p) * id;
        let pe = ed_p * id + eq_p * iq + (mach.xq_p - mach.xd_p) * id * iq;

        if let Some(di) = b.delta {
            x[di] = delta;
        } else {
            delta_ref = delta;
        }
        x[b.omega] = 1.0;
        x[b.eq_p] = eq_p;
        x[b.ed_p] = ed_p;
        x[b.vm] = v.norm();
        x[b.efd] = efd;
        x[b.rf] = (mach.kf / mach.tf) * efd;
        let vr = (mach.ke + mach.se(efd)) * efd;
        x[b.vr] = vr;
        mach.v_ref = v.norm() + vr / mach.ka;

        // Governor at nominal speed: compensation states at zero, the
        // turbine chain carrying the dispatch.
        let tm = pe; // D*(omega-1) = 0 at omega = 1
        x[b.y1] = 0.0;
        x[b.y2] = 0.0;
        x[b.y3] = 0.0;
        x[b.tm] = tm;
        x[b.y4] = mach.k2 * tm;
        x[b.y5] = mach.k3 * mach.k2 * tm;
        mach.p_c = tm;

        let (ii, jj) = layout.i_indices(m);
        y[ii] = id;
        y[jj] = iq;
    }

    let y_branch = build_ybus(case);
    let model = DynamicModel {
        layout,
        machines,
        f_nom: case.f_nom,
        base_mva: case.base_mva,
        omega_b: 2.0 * std::f64::consts::PI * case.f_nom,
        y_dyn: DynamicModel::with_loads(&y_branch, &anchor_v, &loads),
        y_branch,
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        delta_ref,
        anchor_v,
        loads,
        exciter_limits: false,
    };

    // The power flow converges power mismatch to ~1e-8; polish the
    // algebraic vector so the current-balance residual meets its own,
    // tighter tolerance.
    let y = crate::linear::solve_algebraic(&model, &x, &y, 1e-13, 10)?;

    let state = SystemState { x, y, t: 0.0 };
    let f_norm = model.residual_f(&state).amax();
    let g_norm = model.residual_g(&state).amax();
    if f_norm > 1e-8 || g_norm > 1e-10 {
        return Err(Error::InitResidual { f_norm, g_norm });
    }
    Ok((model, state))
}
