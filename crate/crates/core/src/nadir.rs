//! Analytic frequency-response and nadir estimation from modal data.
//!
//! The chain: a power imbalance fixes the post-fault frequency through the
//! aggregate droop; the shifted equilibrium pins the handful of state
//! entries that move (rotor speeds and the governor chain); projecting that
//! sparse initial deviation onto the retained slow modes gives a short
//! exponential/cosine series for the center-of-inertia speed, whose
//! stationary point — the nadir — solves a quadratic after a second-order
//! Taylor expansion of the derivative.
//!
//! Everything here works in per-unit speed deviation relative to the
//! post-fault equilibrium; Hz appears only at the reporting boundary.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{GridCase, PowerFlowSolution, Scenario};
use crate::machine::StateLayout;
use crate::modal::{ModalBasis, ModeSet};
use crate::{CVec, DVec, C64};

/// Inertia-weighted averaging weights over the in-service machines.
#[derive(Debug, Clone)]
pub struct CoiWeights {
    pub machines: Vec<String>,
    /// Inertia constants on the system base (s).
    pub h_sys: Vec<f64>,
    /// C_z = H_z / H_t; sums to one.
    pub c: Vec<f64>,
    pub h_t: f64,
}

/// Weights per the case's in-service generators, in generator order.
pub fn coi_weights(case: &GridCase) -> Result<CoiWeights> {
    if case.n_gen() == 0 {
        return Err(Error::Validation("no in-service generators".into()));
    }
    let h_sys: Vec<f64> = (0..case.n_gen()).map(|i| case.h_sys(i)).collect();
    let h_t: f64 = h_sys.iter().sum();
    if h_t <= 0.0 {
        return Err(Error::Validation("zero total inertia".into()));
    }
    Ok(CoiWeights {
        machines: case.generators.iter().map(|g| g.id.clone()).collect(),
        c: h_sys.iter().map(|h| h / h_t).collect(),
        h_sys,
        h_t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisturbanceKind {
    LoadStep,
    GenTrip,
}

/// Power imbalance driving the frequency excursion. Positive `delta_p`
/// is a generation deficit.
#[derive(Debug, Clone)]
pub struct DisturbanceSpec {
    pub delta_p: f64,
    pub kind: DisturbanceKind,
    pub label: String,
}

/// Size a scenario as seen by the estimator: a load step adds its nominal
/// power change, a trip removes the unit's pre-fault electrical output.
pub fn disturbance_from_scenario(
    case: &GridCase,
    pf: &PowerFlowSolution,
    scenario: &Scenario,
) -> Result<DisturbanceSpec> {
    let spec = match scenario {
        Scenario::LoadStep { bus, percent } => {
            let i = case.bus_index(*bus)?;
            DisturbanceSpec {
                delta_p: case.buses[i].p_load * percent / 100.0,
                kind: DisturbanceKind::LoadStep,
                label: scenario.label(),
            }
        }
        Scenario::GenTrip { gen } => {
            let i = case.gen_index(gen)?;
            DisturbanceSpec {
                delta_p: pf.gen_p[i],
                kind: DisturbanceKind::GenTrip,
                label: scenario.label(),
            }
        }
    };
    if spec.delta_p == 0.0 {
        return Err(Error::InvalidArgument(
            "scenario produces a zero power imbalance".into(),
        ));
    }
    Ok(spec)
}

/// Post-fault frequency from the aggregate droop:
/// delta_omega = -dP / sum(1/R_D), f_e = f_0 + delta_omega * f_nom.
///
/// `inv_droops` are the post-fault in-service 1/R values on the system
/// base. A generation deficit (dP > 0) gives delta_omega < 0 and an
/// under-frequency settling point.
pub fn post_fault_frequency(delta_p: f64, inv_droops: &[f64], f_nom: f64) -> Result<(f64, f64)> {
    if delta_p == 0.0 {
        return Err(Error::InvalidArgument("zero power imbalance".into()));
    }
    if inv_droops.is_empty() {
        return Err(Error::InvalidArgument("empty droop set".into()));
    }
    let total: f64 = inv_droops.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(
            "total inverse droop must be positive".into(),
        ));
    }
    let delta_omega = -delta_p / total;
    let f_e = f_nom + delta_omega * f_nom;
    Ok((delta_omega, f_e))
}

/// Estimated initial deviation dx0 = x_0 - x_e.
///
/// Only the states that move between the pre- and post-fault equilibria
/// are populated: rotor speeds carry f_0 - f_e in per unit (= -delta_omega),
/// and each surviving governor's droop-lag, servo, and turbine states carry
/// delta_omega / R_D (the equilibrium itself absorbed -delta_omega / R_D).
#[derive(Debug, Clone)]
pub struct InitialDeviation {
    pub dx0: DVec,
    pub delta_omega: f64,
    pub f_0: f64,
    pub f_e: f64,
}

pub fn build_delta_x0(
    layout: &StateLayout,
    delta_omega: f64,
    inv_droops: &[f64],
    f_nom: f64,
) -> Result<InitialDeviation> {
    if inv_droops.len() != layout.n_machines() {
        return Err(Error::Dimension {
            what: "build_delta_x0 droops",
            expected: layout.n_machines(),
            got: inv_droops.len(),
        });
    }
    let mut dx0 = DVec::zeros(layout.n_diff());
    for m in 0..layout.n_machines() {
        let b = layout.block(m);
        dx0[b.omega] = -delta_omega;
        let gov_shift = delta_omega * inv_droops[m];
        dx0[b.y1] = gov_shift;
        dx0[b.y3] = gov_shift;
        dx0[b.tm] = gov_shift;
    }
    Ok(InitialDeviation {
        dx0,
        delta_omega,
        f_0: f_nom,
        f_e: f_nom + delta_omega * f_nom,
    })
}

/// A retained conjugate pair, stored through its positive-frequency member:
/// lambda = alpha + j beta, gamma = e + j f = r_c e^(j theta).
#[derive(Debug, Clone, Copy)]
pub struct PairCoefficient {
    pub alpha: f64,
    pub beta: f64,
    pub e: f64,
    pub f: f64,
    pub r_c: f64,
    pub theta: f64,
}

/// A retained real mode with its residue.
#[derive(Debug, Clone, Copy)]
pub struct RealCoefficient {
    pub lambda: f64,
    pub gamma: f64,
}

/// Mode residues of the COI response: gamma_m = <w_m, dx0> * sum_z C_z v_mz.
#[derive(Debug, Clone)]
pub struct ModalCoefficients {
    pub pairs: Vec<PairCoefficient>,
    pub reals: Vec<RealCoefficient>,
}

pub fn modal_coefficients(
    basis: &ModalBasis,
    modes: &ModeSet,
    dx0: &DVec,
    weights: &CoiWeights,
    layout: &StateLayout,
) -> Result<ModalCoefficients> {
    if dx0.len() != basis.n() {
        return Err(Error::Dimension {
            what: "modal_coefficients dx0",
            expected: basis.n(),
            got: dx0.len(),
        });
    }
    if weights.machines != layout.machines {
        return Err(Error::InvalidArgument(
            "COI weights do not match the layout's machines".into(),
        ));
    }
    let dx0c: CVec = dx0.map(|v| Complex64::new(v, 0.0));
    let z = layout.speed_indices();
    let gamma_of = |m: usize| -> C64 {
        let excite: C64 = (basis.left.column(m).transpose() * &dx0c)[(0, 0)];
        let observe: C64 = z
            .iter()
            .enumerate()
            .map(|(k, &zi)| basis.right[(zi, m)] * weights.c[k])
            .sum();
        excite * observe
    };

    let mut pairs = Vec::new();
    for &(i, j) in &modes.pairs {
        let g_i = gamma_of(i);
        let g_j = gamma_of(j);
        let defect = (g_j - g_i.conj()).norm();
        if defect > 1e-9 * g_i.norm().max(1e-12) {
            return Err(Error::PairingViolation(format!(
                "residues of conjugate modes {i}/{j} differ by {defect:.3e}"
            )));
        }
        let l = basis.eigenvalues[i];
        pairs.push(PairCoefficient {
            alpha: l.re,
            beta: l.im,
            e: g_i.re,
            f: g_i.im,
            r_c: g_i.norm(),
            theta: g_i.im.atan2(g_i.re),
        });
    }
    let mut reals = Vec::new();
    for &i in &modes.reals {
        let g = gamma_of(i);
        reals.push(RealCoefficient {
            lambda: basis.eigenvalues[i].re,
            gamma: g.re,
        });
    }
    Ok(ModalCoefficients { pairs, reals })
}

impl ModalCoefficients {
    pub fn n_modes(&self) -> usize {
        2 * self.pairs.len() + self.reals.len()
    }

    /// COI speed deviation (pu) in the compact cosine form:
    /// sum 2 e^(alpha t) r_c cos(beta t + theta) + sum gamma_r e^(lambda_r t).
    pub fn response(&self, t: f64) -> f64 {
        let mut v = 0.0;
        for p in &self.pairs {
            v += 2.0 * (p.alpha * t).exp() * p.r_c * (p.beta * t + p.theta).cos();
        }
        for r in &self.reals {
            v += r.gamma * (r.lambda * t).exp();
        }
        v
    }

    /// The same response assembled directly from the complex exponentials
    /// gamma e^(lambda t) + conj(gamma) e^(conj(lambda) t). Equal to
    /// [`Self::response`] to rounding; kept as the identity's second route.
    pub fn response_exponential_form(&self, t: f64) -> f64 {
        let mut v = Complex64::new(0.0, 0.0);
        for p in &self.pairs {
            let l = Complex64::new(p.alpha, p.beta);
            let g = Complex64::new(p.e, p.f);
            v += (l * t).exp() * g + (l.conj() * t).exp() * g.conj();
        }
        for r in &self.reals {
            v += Complex64::new(r.gamma * (r.lambda * t).exp(), 0.0);
        }
        v.re
    }

    /// d/dt of the COI deviation:
    /// sum R e^(alpha t) cos(beta t + theta + phi) + sum lambda gamma e^(lambda t),
    /// with R = 2 r_c sqrt(alpha^2 + beta^2) and phi = atan2(beta, alpha).
    pub fn derivative(&self, t: f64) -> f64 {
        let mut v = 0.0;
        for p in &self.pairs {
            let k2 = (p.alpha * p.alpha + p.beta * p.beta).sqrt();
            let r_big = 2.0 * p.r_c * k2;
            let phi = p.beta.atan2(p.alpha);
            v += r_big * (p.alpha * t).exp() * (p.beta * t + p.theta + phi).cos();
        }
        for r in &self.reals {
            v += r.lambda * r.gamma * (r.lambda * t).exp();
        }
        v
    }

    /// Second time derivative, used to confirm a stationary point is a
    /// minimum.
    pub fn second_derivative(&self, t: f64) -> f64 {
        let mut v = 0.0;
        for p in &self.pairs {
            let k2sq = p.alpha * p.alpha + p.beta * p.beta;
            let r2 = 2.0 * p.r_c * k2sq;
            let phi = p.beta.atan2(p.alpha);
            v += r2 * (p.alpha * t).exp() * (p.beta * t + p.theta + 2.0 * phi).cos();
        }
        for r in &self.reals {
            v += r.lambda * r.lambda * r.gamma * (r.lambda * t).exp();
        }
        v
    }
}

/// Evaluate the truncated COI response on a time grid (pu deviation).
pub fn coi_response(coeffs: &ModalCoefficients, times: &[f64]) -> Vec<f64> {
    times.iter().map(|&t| coeffs.response(t)).collect()
}

/// Derivative of the truncated COI response at one time.
pub fn coi_derivative(coeffs: &ModalCoefficients, t: f64) -> f64 {
    coeffs.derivative(t)
}

/// Per-pair pieces of the second-order expansion of the derivative
/// around tau.
#[derive(Debug, Clone, Copy)]
pub struct PairExpansion {
    pub psi: f64,
    pub phi: f64,
    pub r_big: f64,
    pub k1: f64,
    pub k2: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct RealExpansion {
    pub a4: f64,
    pub a5: f64,
    pub a6: f64,
}

/// Quadratic model of d(dw_coi)/dt near tau: every pair contributes an
/// (a1, a2, a3) triple and every real mode an (a4, a5, a6) triple; the
/// triples accumulate into a single quadratic
/// (a1 + a4) t^2 + (a2 + a5) t + (a3 + a6).
#[derive(Debug, Clone)]
pub struct NadirExpansion {
    pub tau: f64,
    pub pairs: Vec<PairExpansion>,
    pub reals: Vec<RealExpansion>,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub a6: f64,
}

impl NadirExpansion {
    /// The accumulated quadratic evaluated at t.
    pub fn quadratic(&self, t: f64) -> f64 {
        (self.a1 + self.a4) * t * t + (self.a2 + self.a5) * t + (self.a3 + self.a6)
    }
}

/// Second-order Taylor coefficients of the derivative around `tau`.
///
/// `literal_t0` substitutes a fixed time into the exponent of the leading
/// real-mode quadratic coefficient instead of `tau`; the default (None)
/// expands every term around `tau`.
pub fn taylor_coefficients(
    coeffs: &ModalCoefficients,
    tau: f64,
    literal_t0: Option<f64>,
) -> NadirExpansion {
    let mut pairs = Vec::with_capacity(coeffs.pairs.len());
    let (mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0);
    for p in &coeffs.pairs {
        let phi = p.beta.atan2(p.alpha);
        let psi = p.beta * tau + p.theta + phi;
        let k2 = (p.alpha * p.alpha + p.beta * p.beta).sqrt();
        let r_big = 2.0 * p.r_c * k2;
        let k1 = r_big * (p.alpha * tau).exp();
        let curv = (p.alpha * p.alpha - p.beta * p.beta) / 2.0 * psi.cos()
            - p.alpha * p.beta * psi.sin();
        let pa1 = k1 * curv;
        let pa2 = k1
            * (k2 * (psi + phi).cos()
                - ((p.alpha * p.alpha - p.beta * p.beta) * psi.cos()
                    - 2.0 * p.alpha * p.beta * psi.sin())
                    * tau);
        let pa3 = k1 * (psi.cos() - k2 * (psi + phi).cos() * tau + curv * tau * tau);
        pairs.push(PairExpansion {
            psi,
            phi,
            r_big,
            k1,
            k2,
            a1: pa1,
            a2: pa2,
            a3: pa3,
        });
        a1 += pa1;
        a2 += pa2;
        a3 += pa3;
    }

    let t0 = literal_t0.unwrap_or(tau);
    let mut reals = Vec::with_capacity(coeffs.reals.len());
    let (mut a4, mut a5, mut a6) = (0.0, 0.0, 0.0);
    for r in &coeffs.reals {
        let l = r.lambda;
        let ra4 = l.powi(3) * (l * t0).exp() * r.gamma / 2.0;
        let ra5 = l * l * (l * tau).exp() * (1.0 - l * tau) * r.gamma;
        let ra6 = l * (l * tau).exp() * (1.0 - l * tau + l * l * tau * tau / 2.0) * r.gamma;
        reals.push(RealExpansion {
            a4: ra4,
            a5: ra5,
            a6: ra6,
        });
        a4 += ra4;
        a5 += ra5;
        a6 += ra6;
    }

    NadirExpansion {
        tau,
        pairs,
        reals,
        a1,
        a2,
        a3,
        a4,
        a5,
        a6,
    }
}

#[derive(Debug, Clone)]
pub struct NadirPrediction {
    pub t_nadir: f64,
    /// Hz.
    pub f_nadir: f64,
    /// Hz.
    pub f_e: f64,
    pub modes_used: usize,
    pub iterations: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct PredictOptions {
    /// Initial expansion point; default is the first stationary candidate
    /// of the dominant oscillatory term.
    pub tau0: Option<f64>,
    /// See [`taylor_coefficients`].
    pub literal_t0: Option<f64>,
    /// Fixed-point convergence tolerance on t_nadir (s).
    pub tol: f64,
    pub max_iter: usize,
    /// Dense-search horizon for the fallback path (s).
    pub fallback_horizon: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            tau0: None,
            literal_t0: None,
            tol: 1e-4,
            max_iter: 50,
            fallback_horizon: 60.0,
        }
    }
}

fn default_tau0(coeffs: &ModalCoefficients) -> f64 {
    // First positive stationary candidate of the dominant oscillatory term
    // that curves upward (a trough of the cosine), within one period of the
    // origin. Stationary candidates of R e^(at) cos(bt + theta + phi) sit at
    // bt + theta + phi = pi/2 + k pi; troughs and crests alternate.
    if let Some(p) = coeffs
        .pairs
        .iter()
        .max_by(|a, b| a.r_c.partial_cmp(&b.r_c).unwrap())
    {
        use std::f64::consts::PI;
        let phi = p.beta.atan2(p.alpha);
        let half = PI / p.beta;
        let mut t = ((PI / 2.0 - p.theta - phi) / p.beta).rem_euclid(half);
        if t == 0.0 {
            t = half;
        }
        // pair-only curvature at the candidate decides trough vs crest
        let curv = (p.beta * t + p.theta + 2.0 * phi).cos();
        if curv > 0.0 {
            return t;
        }
        return t + half;
    }
    // real modes only: start near the slowest decay time
    let slowest = coeffs
        .reals
        .iter()
        .map(|r| r.lambda.abs())
        .fold(f64::INFINITY, f64::min);
    if slowest.is_finite() && slowest > 0.0 {
        1.0 / slowest
    } else {
        1.0
    }
}

/// Solve the quadratic at tau; positive root preferred, per the printed
/// closed form, falling back to the other root when it is non-positive.
fn quadratic_root(exp: &NadirExpansion) -> Option<f64> {
    let a = exp.a1 + exp.a4;
    let b = exp.a2 + exp.a5;
    let c = exp.a3 + exp.a6;
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return None;
    }
    if a.abs() < 1e-14 * scale {
        // effectively linear
        if b.abs() < 1e-14 * scale {
            return None;
        }
        let t = -c / b;
        return (t > 0.0).then_some(t);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let plus = (-b + sq) / (2.0 * a);
    if plus > 0.0 {
        return Some(plus);
    }
    let minus = (-b - sq) / (2.0 * a);
    (minus > 0.0).then_some(minus)
}

/// Locate the frequency nadir analytically.
///
/// A fixed-point loop re-expands the derivative's quadratic model at the
/// latest root until the nadir time settles. If the quadratic has no
/// usable root, the iteration cycles, or the stationary point is not a
/// minimum, a dense scan of the truncated response (1 ms grid plus
/// quadratic refinement) takes over and the result is flagged.
pub fn predict_nadir(
    coeffs: &ModalCoefficients,
    f_e: f64,
    f_nom: f64,
    opt: PredictOptions,
) -> Result<NadirPrediction> {
    if coeffs.pairs.is_empty() && coeffs.reals.is_empty() {
        return Err(Error::NadirPrediction("no retained modes".into()));
    }
    let tau0 = opt.tau0.unwrap_or_else(|| default_tau0(coeffs));
    if tau0 <= 0.0 {
        return Err(Error::NadirPrediction(format!(
            "initial expansion point must be positive, got {tau0}"
        )));
    }

    let fixed_point = |start: f64| -> Option<(f64, usize)> {
        let mut tau = start;
        for it in 1..=opt.max_iter {
            let exp = taylor_coefficients(coeffs, tau, opt.literal_t0);
            match quadratic_root(&exp) {
                Some(t) if t.is_finite() && t > 0.0 && t <= opt.fallback_horizon => {
                    if (t - tau).abs() < opt.tol {
                        // accept only a genuine local minimum
                        if coeffs.second_derivative(t) > 0.0 {
                            return Some((t, it));
                        }
                        return None;
                    }
                    tau = t;
                }
                _ => return None,
            }
        }
        None
    };

    // A coarse probe of the response guards against converging onto a
    // shallower, later trough than the global one.
    let coarse_min = || -> (f64, f64) {
        let n = (opt.fallback_horizon / 0.05).round() as usize;
        let mut best = (0.0, f64::INFINITY);
        for i in 0..=n {
            let t = i as f64 * 0.05;
            let v = coeffs.response(t);
            if v < best.1 {
                best = (t, v);
            }
        }
        best
    };

    let mut analytic = fixed_point(tau0);
    let probe = coarse_min();
    if let Some((t, _)) = analytic {
        if coeffs.response(t) > probe.1 + 1e-9 * probe.1.abs().max(1e-12) && probe.0 > 0.0 {
            // restart the expansion at the deeper trough
            if let Some(better) = fixed_point(probe.0) {
                analytic = Some(better);
            }
        }
    } else if probe.0 > 0.0 {
        analytic = fixed_point(probe.0);
    }

    if let Some((t, iterations)) = analytic {
        return Ok(NadirPrediction {
            t_nadir: t,
            f_nadir: f_e + coeffs.response(t) * f_nom,
            f_e,
            modes_used: coeffs.n_modes(),
            iterations,
            fallback: false,
        });
    }

    // dense fallback
    let n = (opt.fallback_horizon / 1e-3).round() as usize;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * 1e-3).collect();
    let values: Vec<f64> = times.iter().map(|&t| coeffs.response(t)).collect();
    let (t, v) = crate::simulator::find_nadir_numeric(&times, &values);
    let interior = t > 0.0 && t < opt.fallback_horizon;
    if !interior {
        return Err(Error::NadirPrediction(
            "response has no interior minimum within the search horizon".into(),
        ));
    }
    Ok(NadirPrediction {
        t_nadir: t,
        f_nadir: f_e + v * f_nom,
        f_e,
        modes_used: coeffs.n_modes(),
        iterations: opt.max_iter,
        fallback: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample_coeffs() -> ModalCoefficients {
        // one well-damped pair plus one fast real mode, deficit-shaped
        ModalCoefficients {
            pairs: vec![PairCoefficient {
                alpha: -0.1553,
                beta: 0.1507,
                e: 1.2e-3,
                f: 3.1e-3,
                r_c: (1.2e-3_f64.powi(2) + 3.1e-3_f64.powi(2)).sqrt(),
                theta: 3.1e-3_f64.atan2(1.2e-3),
            }],
            reals: vec![RealCoefficient {
                lambda: -2.9163,
                gamma: 1.9e-3,
            }],
        }
    }

    #[test]
    fn droop_arithmetic_matches_hand_calculation() {
        // dP = 0.1 pu over two machines at R = 0.05 each
        let (dw, fe) = post_fault_frequency(0.1, &[20.0, 20.0], 60.0).unwrap();
        assert_abs_diff_eq!(dw, -0.0025, epsilon = 1e-15);
        assert_abs_diff_eq!(fe, 60.0 * (1.0 - 0.0025), epsilon = 1e-12);
        assert!(fe < 60.0);
    }

    #[test]
    fn zero_imbalance_rejected() {
        assert!(post_fault_frequency(0.0, &[20.0], 60.0).is_err());
        assert!(post_fault_frequency(0.1, &[], 60.0).is_err());
    }

    #[test]
    fn delta_x0_entries_follow_the_droop_contract() {
        let layout = StateLayout::new(vec!["A".into()], 0, 1);
        let dw = -0.0025;
        let dev = build_delta_x0(&layout, dw, &[20.0], 60.0).unwrap();
        let b = layout.block(0);
        assert_abs_diff_eq!(dev.dx0[b.omega], 0.0025, epsilon = 1e-15);
        assert_abs_diff_eq!(dev.dx0[b.y1], -0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(dev.dx0[b.y3], -0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(dev.dx0[b.tm], -0.05, epsilon = 1e-15);
        // everything else untouched
        let nonzero = dev.dx0.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 4);
        assert_abs_diff_eq!(dev.f_0 - dev.f_e, -dw * 60.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_shift_gives_zero_deviation() {
        let layout = StateLayout::new(vec!["A".into(), "B".into()], 0, 2);
        let dev = build_delta_x0(&layout, 0.0, &[20.0, 10.0], 60.0).unwrap();
        assert_eq!(dev.dx0.amax(), 0.0);
    }

    #[test]
    fn cosine_and_exponential_forms_agree() {
        let c = sample_coeffs();
        for i in 0..200 {
            let t = i as f64 * 0.15;
            assert_abs_diff_eq!(
                c.response(t),
                c.response_exponential_form(t),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn single_real_mode_response_at_zero() {
        let c = ModalCoefficients {
            pairs: vec![],
            reals: vec![RealCoefficient {
                lambda: -1.0,
                gamma: 1.0,
            }],
        };
        assert_abs_diff_eq!(c.response(0.0), 1.0, epsilon = 1e-15);
        // lambda gamma e^(lambda t) with R = 0
        assert_abs_diff_eq!(c.derivative(0.5), -(-0.5_f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let c = sample_coeffs();
        let h = 1e-6;
        for i in 1..100 {
            let t = i as f64 * 0.3;
            let fd = (c.response(t + h) - c.response(t - h)) / (2.0 * h);
            let an = c.derivative(t);
            let denom = an.abs().max(1e-12);
            assert!(
                ((an - fd) / denom).abs() < 1e-6 || (an - fd).abs() < 1e-12,
                "t={t}: analytic {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        let c = sample_coeffs();
        let h = 1e-5;
        for i in 1..50 {
            let t = i as f64 * 0.4;
            let fd = (c.derivative(t + h) - c.derivative(t - h)) / (2.0 * h);
            let an = c.second_derivative(t);
            assert!((an - fd).abs() < 1e-6 * an.abs().max(1.0));
        }
    }

    #[test]
    fn taylor_quadratic_is_second_order_accurate() {
        let c = sample_coeffs();
        let tau = 8.0;
        let exp = taylor_coefficients(&c, tau, None);
        // exact match at the expansion point
        assert_abs_diff_eq!(exp.quadratic(tau), c.derivative(tau), epsilon = 1e-12);
        // third-order remainder: e(h) / e(h/2) ~ 8
        let e = |h: f64| {
            let t = tau + h;
            (exp.quadratic(t) - c.derivative(t)).abs()
        };
        for h in [0.1, -0.1] {
            let r = e(h) / e(h / 2.0);
            assert!(
                (4.0..16.0).contains(&r),
                "remainder ratio {r} not cubic for h={h}"
            );
            assert!(e(h) < 1e-6, "remainder {} too large", e(h));
        }
    }

    #[test]
    fn real_mode_quadratic_coefficients_follow_printed_forms() {
        let tau = 2.0;
        let (l, g) = (-2.9163_f64, -1.9e-3_f64);
        let c = ModalCoefficients {
            pairs: vec![],
            reals: vec![RealCoefficient { lambda: l, gamma: g }],
        };
        let exp = taylor_coefficients(&c, tau, None);
        assert_abs_diff_eq!(exp.a4, l.powi(3) * (l * tau).exp() * g / 2.0, epsilon = 1e-18);
        assert!(exp.a4 > 0.0); // lambda^3 < 0 and gamma < 0
        assert_abs_diff_eq!(
            exp.a5,
            l * l * (l * tau).exp() * (1.0 - l * tau) * g,
            epsilon = 1e-18
        );
        assert_abs_diff_eq!(
            exp.a6,
            l * (l * tau).exp() * (1.0 - l * tau + l * l * tau * tau / 2.0) * g,
            epsilon = 1e-18
        );
        // literal-t0 variant only changes a4
        let exp0 = taylor_coefficients(&c, tau, Some(0.0));
        assert_abs_diff_eq!(exp0.a4, l.powi(3) * g / 2.0, epsilon = 1e-18);
        assert_abs_diff_eq!(exp0.a5, exp.a5, epsilon = 1e-18);
        assert_abs_diff_eq!(exp0.a6, exp.a6, epsilon = 1e-18);
    }

    #[test]
    fn predict_matches_dense_minimizer_on_sample() {
        let c = sample_coeffs();
        let pred = predict_nadir(&c, 59.7, 60.0, PredictOptions::default()).unwrap();
        assert!(!pred.fallback);
        // brute-force oracle
        let mut best = (0.0, f64::INFINITY);
        let mut t = 0.0;
        while t <= 60.0 {
            let v = c.response(t);
            if v < best.1 {
                best = (t, v);
            }
            t += 1e-3;
        }
        assert!((pred.t_nadir - best.0).abs() < 1e-3);
        assert_abs_diff_eq!(pred.f_nadir, 59.7 + best.1 * 60.0, epsilon = 1e-6);
        assert!(pred.f_nadir < pred.f_e);
        // stationarity at the converged time
        assert!(c.derivative(pred.t_nadir).abs() < 1e-8);
    }

    #[test]
    fn real_only_coefficients_use_the_real_triples() {
        // monotone recovery: gamma > 0 decaying to zero has no interior
        // minimum, so prediction must fail loudly
        let c = ModalCoefficients {
            pairs: vec![],
            reals: vec![RealCoefficient {
                lambda: -0.5,
                gamma: 2e-3,
            }],
        };
        let err = predict_nadir(&c, 59.8, 60.0, PredictOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NadirPrediction(_)));

        // two real modes shaping a dip: analytic quadratic still applies
        let c2 = ModalCoefficients {
            pairs: vec![],
            reals: vec![
                RealCoefficient {
                    lambda: -0.2,
                    gamma: -4e-3,
                },
                RealCoefficient {
                    lambda: -2.0,
                    gamma: 5e-3,
                },
            ],
        };
        // response(0) > 0, dips negative, recovers to 0: minimum exists
        let pred = predict_nadir(&c2, 59.8, 60.0, PredictOptions::default()).unwrap();
        let mut best = (0.0, f64::INFINITY);
        let mut t = 0.0;
        while t <= 60.0 {
            let v = c2.response(t);
            if v < best.1 {
                best = (t, v);
            }
            t += 1e-3;
        }
        assert!((pred.t_nadir - best.0).abs() < 2e-3, "{} vs {}", pred.t_nadir, best.0);
    }

    #[test]
    fn empty_coefficients_rejected() {
        let c = ModalCoefficients {
            pairs: vec![],
            reals: vec![],
        };
        assert!(predict_nadir(&c, 60.0, 60.0, PredictOptions::default()).is_err());
    }
}
