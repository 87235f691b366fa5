//! Nonlinear time-domain integration of the DAE — the ground truth the
//! analytic nadir estimate is judged against.
//!
//! Implicit trapezoidal rule with a simultaneous Newton solve of the
//! differential and algebraic equations at every step. The iteration
//! matrix is factorized lazily and reused across steps while convergence
//! stays fast (chord iterations), which keeps a 30 s study on the bundled
//! case well under a second.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::grid::Scenario;
use crate::linear::{jacobians, solve_algebraic};
use crate::machine::{DaeSystem, DynamicModel, StateLayout, SystemState};
use crate::nadir::CoiWeights;
use crate::{DMat, DVec};

static SIM_INVOCATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of `simulate` calls made by this process. Tests use this to
/// verify that prediction-only paths never touch the simulator.
#[doc(hidden)]
pub fn invocation_count() -> u64 {
    SIM_INVOCATIONS.load(Ordering::Relaxed)
}

/// Time-domain solution: states and algebraic variables on a uniform grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// n_diff x n_steps.
    pub states: DMat,
    /// n_alg x n_steps.
    pub algebraic: DMat,
    pub layout: StateLayout,
    pub scenario: Option<String>,
}

impl Trajectory {
    pub fn state_at(&self, k: usize) -> DVec {
        self.states.column(k).into_owned()
    }

    /// Export as CSV with header `t,<state names...>`.
    pub fn write_states_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "t")?;
        for name in self.layout.state_names() {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for (k, t) in self.times.iter().enumerate() {
            write!(w, "{t:.6}")?;
            for i in 0..self.states.nrows() {
                write!(w, ",{:.12e}", self.states[(i, k)])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Newton tolerance on the combined step residual (inf-norm).
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            newton_tol: 1e-8,
            newton_max_iter: 12,
        }
    }
}

struct StepSolver<'a> {
    model: &'a DynamicModel,
    n: usize,
    l: usize,
    dt: f64,
    factored: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    opt: SimOptions,
}

impl<'a> StepSolver<'a> {
    fn new(model: &'a DynamicModel, dt: f64, opt: SimOptions) -> Self {
        StepSolver {
            model,
            n: model.n_diff(),
            l: model.n_alg(),
            dt,
            factored: None,
            opt,
        }
    }

    fn refresh(&mut self, x: &DVec, y: &DVec) -> Result<()> {
        let (j1, j2, j3, j4) = jacobians(self.model, x, y);
        let (n, l) = (self.n, self.l);
        let mut m = DMat::zeros(n + l, n + l);
        let h = self.dt / 2.0;
        let mut top_left = DMat::identity(n, n);
        top_left -= &j1 * h;
        m.view_mut((0, 0), (n, n)).copy_from(&top_left);
        m.view_mut((0, n), (n, l)).copy_from(&(-&j2 * h));
        m.view_mut((n, 0), (l, n)).copy_from(&j3);
        m.view_mut((n, n), (l, l)).copy_from(&j4);
        let lu = m.lu();
        // a singular iteration matrix means the algebraic set degenerated
        if lu.determinant() == 0.0 {
            return Err(Error::SingularJacobian(
                "trapezoidal iteration matrix".into(),
            ));
        }
        self.factored = Some(lu);
        Ok(())
    }

    /// One trapezoidal step from (x0, y0) at time t. Returns the new state
    /// and the number of Newton iterations spent.
    fn step(
        &mut self,
        t: f64,
        x0: &DVec,
        y0: &DVec,
        f0: &DVec,
    ) -> Result<(DVec, DVec, DVec, usize)> {
        let (n, l) = (self.n, self.l);
        let h = self.dt / 2.0;
        // predictor: explicit Euler on x, frozen y
        let mut x = x0 + f0 * self.dt;
        let mut y = y0.clone();

        for attempt in 0..2 {
            if self.factored.is_none() {
                self.refresh(&x, &y)?;
            }
            let mut res = DVec::zeros(n + l);
            for it in 0..self.opt.newton_max_iter {
                let f = self.model.eval_f(&x, &y);
                let g = self.model.eval_g(&x, &y);
                let rx = &x - x0 - (&f + f0) * h;
                res.rows_mut(0, n).copy_from(&rx);
                res.rows_mut(n, l).copy_from(&g);
                let norm = res.amax();
                if norm <= self.opt.newton_tol {
                    return Ok((x, y, f, it));
                }
                let lu = self.factored.as_ref().unwrap();
                let step = lu.solve(&res).ok_or_else(|| {
                    Error::SingularJacobian("trapezoidal iteration matrix".into())
                })?;
                x -= step.rows(0, n);
                y -= step.rows(n, l);
            }
            // stale Jacobian: rebuild once at the current iterate and retry
            if attempt == 0 {
                self.refresh(&x, &y)?;
            }
        }
        let f = self.model.eval_f(&x, &y);
        let g = self.model.eval_g(&x, &y);
        let rx = &x - x0 - (&f + f0) * h;
        let norm = rx.amax().max(g.amax());
        Err(Error::NewtonDiverged {
            time: t,
            residual: norm,
            iterations: self.opt.newton_max_iter,
        })
    }
}

/// Integrate the model over `horizon` seconds with fixed step `dt`,
/// applying `scenario` at t = 0+. The stored t = 0 sample is the
/// post-disturbance consistent state (same x, re-solved y).
pub fn simulate(
    model: &DynamicModel,
    state0: &SystemState,
    scenario: Option<&Scenario>,
    horizon: f64,
    dt: f64,
) -> Result<(Trajectory, DynamicModel)> {
    simulate_with(model, state0, scenario, horizon, dt, SimOptions::default())
}

pub fn simulate_with(
    model: &DynamicModel,
    state0: &SystemState,
    scenario: Option<&Scenario>,
    horizon: f64,
    dt: f64,
    opt: SimOptions,
) -> Result<(Trajectory, DynamicModel)> {
    SIM_INVOCATIONS.fetch_add(1, Ordering::Relaxed);
    if dt <= 0.0 || horizon < dt {
        return Err(Error::InvalidArgument(
            "simulate requires dt > 0 and horizon >= dt".into(),
        ));
    }

    // apply the disturbance and restore algebraic consistency at t = 0+
    let (post, mut x, mut y) = match scenario {
        Some(sc) => {
            let mut post = model.apply_scenario(sc)?;
            let projected = match sc {
                Scenario::GenTrip { .. } => post.project_state(model, state0),
                _ => state0.clone(),
            };
            let y = solve_algebraic(&post, &projected.x, &projected.y, 1e-12, 30)?;
            (post, projected.x, y)
        }
        None => (model.clone(), state0.x.clone(), state0.y.clone()),
    };

    let n_steps = (horizon / dt).round() as usize;
    let n = post.n_diff();
    let l = post.n_alg();
    let mut states = DMat::zeros(n, n_steps + 1);
    let mut algebraic = DMat::zeros(l, n_steps + 1);
    let mut times = Vec::with_capacity(n_steps + 1);

    states.set_column(0, &x);
    algebraic.set_column(0, &y);
    times.push(0.0);

    let mut solver = StepSolver::new(&post, dt, opt);
    let mut f = post.eval_f(&x, &y);
    for k in 1..=n_steps {
        let t = k as f64 * dt;
        let (xn, yn, fn_, iters) = solver.step(t, &x, &y, &f)?;
        if iters > 5 {
            // convergence is degrading; refresh for the next step
            solver.refresh(&xn, &yn)?;
        }
        x = xn;
        y = yn;
        f = fn_;
        states.set_column(k, &x);
        algebraic.set_column(k, &y);
        times.push(t);
    }

    let traj = Trajectory {
        times,
        states,
        algebraic,
        layout: post.layout.clone(),
        scenario: scenario.map(|s| s.label()),
    };
    Ok((traj, post))
}

/// Center-of-inertia frequency of a trajectory, in pu speed and Hz.
pub fn coi_frequency(
    traj: &Trajectory,
    weights: &CoiWeights,
    f_nom: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if weights.machines != traj.layout.machines {
        return Err(Error::InvalidArgument(
            "COI weights do not match the trajectory's in-service machines".into(),
        ));
    }
    let z = traj.layout.speed_indices();
    let mut pu = Vec::with_capacity(traj.times.len());
    for k in 0..traj.times.len() {
        let mut w = 0.0;
        for (m, &zi) in z.iter().enumerate() {
            w += weights.c[m] * traj.states[(zi, k)];
        }
        pu.push(w);
    }
    let hz: Vec<f64> = pu.iter().map(|w| w * f_nom).collect();
    Ok((pu, hz))
}

/// Global minimum of a sampled series, refined by a quadratic fit through
/// the three points bracketing the discrete minimum.
pub fn find_nadir_numeric(times: &[f64], values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty(), "empty series");
    let mut i_min = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[i_min] {
            i_min = i;
        }
    }
    if i_min == 0 || i_min + 1 >= values.len() {
        return (times[i_min], values[i_min]);
    }
    let (y0, y1, y2) = (values[i_min - 1], values[i_min], values[i_min + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    if denom.abs() < 1e-300 {
        return (times[i_min], values[i_min]);
    }
    let h = times[i_min] - times[i_min - 1];
    let offset = 0.5 * (y0 - y2) / denom;
    let t = times[i_min] + offset * h;
    let f = y1 - 0.25 * (y0 - y2) * offset;
    (t, f)
}

/// Write the companion COI series as CSV with header `t,f_coi_hz`.
pub fn write_coi_csv(times: &[f64], hz: &[f64], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "t,f_coi_hz")?;
    for (t, f) in times.iter().zip(hz) {
        writeln!(w, "{t:.6},{f:.9}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{load_case, solve_power_flow};
    use crate::machine::init_dynamic_state;
    use crate::machine::tests::fixture_path;
    use crate::nadir::coi_weights;
    use approx::assert_abs_diff_eq;

    #[test]
    fn equilibrium_persists_without_disturbance() {
        let case = load_case(fixture_path()).unwrap();
        let pf = solve_power_flow(&case).unwrap();
        let (model, state) = init_dynamic_state(&case, &pf).unwrap();
        let (traj, _) = simulate(&model, &state, None, 20.0, 0.05).unwrap();
        let last = traj.state_at(traj.times.len() - 1);
        assert!((last - &state.x).amax() < 1e-7);
    }

    #[test]
    fn coi_is_weighted_average() {
        // two machines, equal H: speeds 1.01 / 0.99 average to 1.0
        let case = load_case(fixture_path()).unwrap();
        let weights = coi_weights(&case).unwrap();
        assert_abs_diff_eq!(weights.c.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nadir_of_constant_series_is_first_sample() {
        let times = vec![0.0, 1.0, 2.0];
        let vals = vec![3.0, 3.0, 3.0];
        let (t, f) = find_nadir_numeric(&times, &vals);
        assert_eq!(t, 0.0);
        assert_eq!(f, 3.0);
    }

    #[test]
    fn nadir_recovers_parabola_vertex() {
        // f(t) = (t - 1.234)^2 + 5, vertex off the grid
        let times: Vec<f64> = (0..300).map(|i| i as f64 * 0.01).collect();
        let vals: Vec<f64> = times.iter().map(|t| (t - 1.234).powi(2) + 5.0).collect();
        let (t, f) = find_nadir_numeric(&times, &vals);
        assert_abs_diff_eq!(t, 1.234, epsilon = 1e-6);
        assert_abs_diff_eq!(f, 5.0, epsilon = 1e-9);
    }
}
