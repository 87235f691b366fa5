use approx::assert_abs_diff_eq;

use super::*;
use crate::grid::{load_case, parse_case, solve_power_flow, Scenario};
use crate::linear::solve_algebraic;

pub(crate) fn fixture_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ieee39.toml")
}

const SMIB: &str = r#"
[system]
base_mva = 100.0
f_nom = 60.0

[[buses]]
id = 1
kind = "slack"
v_set = 1.0

[[buses]]
id = 2
kind = "pv"
v_set = 1.0

[[branches]]
from = 1
to = 2
x = 0.05

[[generators]]
id = "BIG"
bus = 1
mva_base = 5000.0
h = 6.0
xd = 2.0
xd_p = 0.3
xq = 1.9
xq_p = 0.55
td0_p = 7.0
tq0_p = 0.7

[[generators]]
id = "UNIT"
bus = 2
mva_base = 100.0
p_gen = 0.0
h = 4.0
xd = 1.8
xd_p = 0.3
xq = 1.7
xq_p = 0.55
td0_p = 8.0
tq0_p = 0.4

[[exciters]]
gen = "BIG"
ka = 20.0
ta = 0.2
ke = 1.0
te = 0.314
kf = 0.063
tf = 0.35
tr = 0.02

[[exciters]]
gen = "UNIT"
ka = 20.0
ta = 0.2
ke = 1.0
te = 0.314
kf = 0.063
tf = 0.35
tr = 0.02

[[governors]]
gen = "BIG"
r_d = 0.05
t1 = 0.08
t2 = 1.0
t3 = 3.0
t4 = 0.1
t_ch = 0.4

[[governors]]
gen = "UNIT"
r_d = 0.05
t1 = 0.08
t2 = 1.0
t3 = 3.0
t4 = 0.1
t_ch = 0.4
"#;

#[test]
fn smib_no_load_initializes_at_emf_angle() {
    let case = parse_case(SMIB).unwrap();
    let pf = solve_power_flow(&case).unwrap();
    let (model, state) = init_dynamic_state(&case, &pf).unwrap();
    // no flow anywhere: the unit's rotor angle equals the terminal angle
    let m = model.layout.machine_index("UNIT").unwrap();
    let b = model.layout.block(m);
    assert_abs_diff_eq!(model.delta(m, &state.x), pf.v[1].arg(), epsilon = 1e-9);
    assert_abs_diff_eq!(state.x[b.tm], 0.0, epsilon = 1e-9);
    assert_abs_diff_eq!(state.x[b.omega], 1.0, epsilon = 1e-12);
}

#[test]
fn fixture_has_expected_state_count() {
    let case = load_case(fixture_path()).unwrap();
    assert_eq!(case.n_bus(), 39);
    assert_eq!(case.n_gen(), 10);
    let pf = solve_power_flow(&case).unwrap();
    assert!(pf.mismatch <= 1e-8);
    let (model, state) = init_dynamic_state(&case, &pf).unwrap();
    assert_eq!(model.layout.n_diff(), 139);
    assert_eq!(state.x.len(), 139);
    assert_eq!(model.layout.speed_indices().len(), 10);
}

#[test]
fn fixture_initialization_residuals_vanish() {
    let case = load_case(fixture_path()).unwrap();
    let pf = solve_power_flow(&case).unwrap();
    let (model, state) = init_dynamic_state(&case, &pf).unwrap();
    assert!(model.residual_f(&state).amax() <= 1e-8);
    assert!(model.residual_g(&state).amax() <= 1e-10);
    // all speeds at nominal
    for &z in &model.layout.speed_indices() {
        assert_abs_diff_eq!(state.x[z], 1.0, epsilon = 1e-12);
    }
}

#[test]
fn halved_inertia_leaves_equilibrium_unchanged() {
    let case = load_case(fixture_path()).unwrap();
    let pf = solve_power_flow(&case).unwrap();
    let (_, state_full) = init_dynamic_state(&case, &pf).unwrap();
    let half = case.scale_inertia(0.5);
    let pf2 = solve_power_flow(&half).unwrap();
    let (_, state_half) = init_dynamic_state(&half, &pf2).unwrap();
    assert_abs_diff_eq!((&state_full.x - &state_half.x).amax(), 0.0, epsilon = 1e-10);
}

#[test]
fn speed_perturbation_drives_angle_derivative() {
    let case = load_case(fixture_path()).unwrap();
    let pf = solve_power_flow(&case).unwrap();
    let (model, state) = init_dynamic_state(&case, &pf).unwrap();
    // perturb a non-reference machine's speed by +0.01 pu
    let m = model.layout.machine_index("SG5").unwrap();
    let b = model.layout.block(m);
    let mut x = state.x.clone();
    x[b.omega] += 0.01;
    let f = model.eval_f(&x, &state.y);
    let delta_idx = b.delta.unwrap();
    assert_abs_diff_eq!(f[delta_idx], 0.01 * model.omega_b, epsilon = 1e-9);
    // swing reacts to the imbalance; governor lag state sees the droop signal
    assert_abs_diff_eq!(
        f[b.y1],
        -0.01 * model.machines[m].inv_r / model.machines[m].t1,
        epsilon = 1e-9
    );
}

#[test]
fn governor_steady_state_tracks_droop() {
    // Off-nominal equilibrium: uniform speed, y1 = y3 = -dw/R, Tm = Pc - dw/R.
    let case = parse_case(SMIB).unwrap();
    let pf = solve_power_flow(&case).unwrap();
    let (model, state) = init_dynamic_state(&case, &pf).unwrap();
    let dw = -2e-3;
    let mut x = state.x.clone();
    for (m, mach) in model.machines.iter().enumerate() {
        let b = model.layout.block(m);
        x[b.omega] = 1.0 + dw;
        x[b.y1] = -dw * mach.inv_r;
        x[b.y3] = -dw * mach.inv_r;
        x[b.tm] = mach.p_c - dw * mach.inv_r;
    }
    let f = model.eval_f(&x, &state.y);
    for (m, _) in model.machines.iter().enumerate() {
        let b = model.layout.block(m);
        assert_abs_diff_eq!(f[b.y1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[b.y2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[b.y3], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[b.tm], 0.0, epsilon = 1e-12);
    }
}

#[test]
fn scaled_voltages_break_algebraic_consistency() {
    let case = load_case(fixture_path()).unwrap();
    let pf = solve_power_flow(&case).unwrap();
    let (model, state) = init_dynamic_state(&case, &pf).unwrap();
    let mut y = state.y.clone();
    for i in 0..2 * model.layout.n_bus {
        y[i] *= 1.1;
    }
    let g = model.eval_g(&state.x, &y);
    assert!(g.amax() > 1e-3);
}

#[test]
fn algebraic_jacobian_matches_linear_response() {
    // g(x, y + dy) - g(x, y) ~ J4 * dy for small dy.
    let case = parse_case(SMIB).unwrap();
    let pf = solve_power_flow(&case).unwrap();
    let (model, state) = init_dynamic_state(&case, &pf).unwrap();
    let (_, _, _, j4) = crate::linear::jacobians(&model, &state.x, &state.y);
    let l = model.layout.n_alg();
    let mut dy = crate::DVec::zeros(l);
    for i in 0..l {
        dy[i] = 1e-7 * ((i as f64 * 0.7).sin() + 1.3);
    }
    let y2 = &state.y + &dy;
    let dg = model.eval_g(&state.x, &y2) - model.eval_g(&state.x, &state.y);
    let lin = &j4 * &dy;
    assert!((dg - lin).amax() < 1e-10);
}

#[test]
fn gen_trip_projects_onto_smaller_layout() {
    let case = load_case(fixture_path()).unwrap();
    let pf = solve_power_flow(&case).unwrap();
    let (model, state) = init_dynamic_state(&case, &pf).unwrap();
    let mut post = model
        .apply_scenario(&Scenario::GenTrip { gen: "SG1".into() })
        .unwrap();
    assert_eq!(post.layout.n_diff(), 9 * 14 - 1);
    let projected = post.project_state(&model, &state);
    // algebraic re-solve at the projected state converges
    let y = solve_algebraic(&post, &projected.x, &projected.y, 1e-12, 20).unwrap();
    assert!(post.eval_g(&projected.x, &y).amax() <= 1e-12);
    // speeds carried over untouched
    for &z in &post.layout.speed_indices() {
        assert_abs_diff_eq!(projected.x[z], 1.0, epsilon = 1e-12);
    }
}

#[test]
fn load_step_scenario_changes_admittance_only() {
    let case = load_case(fixture_path()).unwrap();
    let pf = solve_power_flow(&case).unwrap();
    let (model, state) = init_dynamic_state(&case, &pf).unwrap();
    let post = model
        .apply_scenario(&Scenario::LoadStep { bus: 15, percent: 20.0 })
        .unwrap();
    assert_eq!(post.layout.n_diff(), model.layout.n_diff());
    // the pre-fault state no longer satisfies the network equations
    let g = post.eval_g(&state.x, &state.y);
    assert!(g.amax() > 1e-4);
    // but a consistent algebraic vector exists nearby
    let y = solve_algebraic(&post, &state.x, &state.y, 1e-12, 20).unwrap();
    assert!(post.eval_g(&state.x, &y).amax() <= 1e-12);
}
