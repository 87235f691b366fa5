use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    /// Voltage setpoint (pu). Used for slack and PV buses; initial guess otherwise.
    #[serde(default = "one")]
    pub v_set: f64,
    /// Active load (pu on system base).
    #[serde(default)]
    pub p_load: f64,
    /// Reactive load (pu on system base).
    #[serde(default)]
    pub q_load: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// Series resistance (pu).
    #[serde(default)]
    pub r: f64,
    /// Series reactance (pu).
    pub x: f64,
    /// Total line-charging susceptance (pu); half is placed at each end.
    #[serde(default)]
    pub b: f64,
    /// Off-nominal tap ratio on the `from` side.
    #[serde(default = "one")]
    pub tap: f64,
}

/// Two-axis machine parameters. Reactances and time constants are on the
/// machine MVA base; `h` is the inertia constant in seconds on the machine
/// base. Conversion to the system base happens when the dynamic model is
/// assembled.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub id: String,
    pub bus: u32,
    pub mva_base: f64,
    /// Dispatched active power (pu on system base); ignored for the slack unit.
    #[serde(default)]
    pub p_gen: f64,
    /// Inertia constant (s, machine base).
    pub h: f64,
    /// Damping coefficient (pu torque per pu speed, machine base).
    #[serde(default)]
    pub d: f64,
    pub xd: f64,
    pub xd_p: f64,
    pub xq: f64,
    pub xq_p: f64,
    pub td0_p: f64,
    pub tq0_p: f64,
    /// Stator resistance (pu, machine base).
    #[serde(default)]
    pub rs: f64,
}

/// IEEE Type-1 excitation system parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExciterParams {
    pub gen: String,
    pub ka: f64,
    pub ta: f64,
    pub ke: f64,
    pub te: f64,
    pub kf: f64,
    pub tf: f64,
    /// Voltage transducer time constant.
    pub tr: f64,
    /// Saturation S_E(Efd) = se_a * exp(se_b * Efd).
    #[serde(default)]
    pub se_a: f64,
    #[serde(default)]
    pub se_b: f64,
    /// Regulator ceiling; enforced only when limits are enabled on the model.
    #[serde(default)]
    pub vr_min: Option<f64>,
    #[serde(default)]
    pub vr_max: Option<f64>,
}

/// IEESGO-style turbine/governor parameters (droop on the machine base).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernorParams {
    pub gen: String,
    /// Speed droop (pu, machine base).
    pub r_d: f64,
    /// Controller lag.
    pub t1: f64,
    /// Transient compensation lead.
    pub t2: f64,
    /// Transient compensation lag.
    pub t3: f64,
    /// Servo / steam-bowl lag.
    pub t4: f64,
    /// Steam-chest lag producing the mechanical power state.
    pub t_ch: f64,
    /// Reheat lag (active when k2 > 0).
    #[serde(default = "small_lag")]
    pub t5: f64,
    /// Crossover lag (active when k3 > 0).
    #[serde(default = "small_lag")]
    pub t6: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    /// Power reference; recomputed from the dispatch at initialization when absent.
    #[serde(default)]
    pub p_c: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn small_lag() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    base_mva: f64,
    f_nom: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    system: SystemSection,
    #[serde(default)]
    buses: Vec<Bus>,
    #[serde(default)]
    branches: Vec<Branch>,
    #[serde(default)]
    generators: Vec<Generator>,
    #[serde(default)]
    exciters: Vec<ExciterParams>,
    #[serde(default)]
    governors: Vec<GovernorParams>,
}

/// A validated grid case: static network plus dynamic device parameters.
#[derive(Debug, Clone)]
pub struct GridCase {
    pub base_mva: f64,
    pub f_nom: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub exciters: Vec<ExciterParams>,
    pub governors: Vec<GovernorParams>,
}

impl GridCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    pub fn bus_index(&self, id: u32) -> Result<usize> {
        self.buses
            .iter()
            .position(|b| b.id == id)
            .ok_or(Error::UnknownBus(id))
    }

    pub fn gen_index(&self, id: &str) -> Result<usize> {
        self.generators
            .iter()
            .position(|g| g.id == id)
            .ok_or_else(|| Error::UnknownGenerator(id.to_string()))
    }

    pub fn exciter(&self, gen_id: &str) -> &ExciterParams {
        self.exciters.iter().find(|e| e.gen == gen_id).unwrap()
    }

    pub fn governor(&self, gen_id: &str) -> &GovernorParams {
        self.governors.iter().find(|g| g.gen == gen_id).unwrap()
    }

    /// Inertia constant of generator `i` on the system base (seconds).
    pub fn h_sys(&self, i: usize) -> f64 {
        let g = &self.generators[i];
        g.h * g.mva_base / self.base_mva
    }

    /// Inverse droop of generator `i` on the system base (pu power per pu speed).
    pub fn inv_droop_sys(&self, i: usize) -> f64 {
        let g = &self.generators[i];
        let gov = self.governor(&g.id);
        (1.0 / gov.r_d) * g.mva_base / self.base_mva
    }

    /// Returns a copy with every inertia constant scaled by `k`.
    pub fn scale_inertia(&self, k: f64) -> GridCase {
        let mut out = self.clone();
        for g in &mut out.generators {
            g.h *= k;
        }
        out
    }

    fn validate(self) -> Result<GridCase> {
        if self.base_mva <= 0.0 {
            return Err(Error::Validation("base_mva must be positive".into()));
        }
        if self.f_nom <= 0.0 {
            return Err(Error::Validation("f_nom must be positive".into()));
        }
        let mut seen = HashSet::new();
        for b in &self.buses {
            if !seen.insert(b.id) {
                return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
            }
        }
        let n_slack = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        if n_slack != 1 {
            return Err(Error::Validation(format!(
                "expected exactly one slack bus, found {n_slack}"
            )));
        }
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !seen.contains(&end) {
                    return Err(Error::Validation(format!(
                        "branch {}-{} references unknown bus {end}",
                        br.from, br.to
                    )));
                }
            }
            if br.x == 0.0 {
                return Err(Error::Validation(format!(
                    "branch {}-{} has zero reactance",
                    br.from, br.to
                )));
            }
            if br.tap <= 0.0 {
                return Err(Error::Validation(format!(
                    "branch {}-{} has non-positive tap ratio",
                    br.from, br.to
                )));
            }
        }
        let mut gen_ids = HashSet::new();
        for g in &self.generators {
            if !gen_ids.insert(g.id.clone()) {
                return Err(Error::Validation(format!("duplicate generator id {:?}", g.id)));
            }
            if !seen.contains(&g.bus) {
                return Err(Error::Validation(format!(
                    "generator {:?} references unknown bus {}",
                    g.id, g.bus
                )));
            }
            let kind = self.buses.iter().find(|b| b.id == g.bus).unwrap().kind;
            if kind == BusKind::Pq {
                return Err(Error::Validation(format!(
                    "generator {:?} sits on PQ bus {}; generator buses must be pv or slack",
                    g.id, g.bus
                )));
            }
            if g.h <= 0.0 {
                return Err(Error::Validation(format!(
                    "generator {:?} has non-positive inertia",
                    g.id
                )));
            }
            if g.mva_base <= 0.0 || g.xd_p <= 0.0 || g.xq_p <= 0.0 || g.td0_p <= 0.0 || g.tq0_p <= 0.0 {
                return Err(Error::Validation(format!(
                    "generator {:?} has non-positive machine parameters",
                    g.id
                )));
            }
            let n_exc = self.exciters.iter().filter(|e| e.gen == g.id).count();
            if n_exc != 1 {
                return Err(Error::Validation(format!(
                    "generator {:?} needs exactly one exciter record, found {n_exc}",
                    g.id
                )));
            }
            let gov: Vec<_> = self.governors.iter().filter(|v| v.gen == g.id).collect();
            if gov.len() != 1 {
                return Err(Error::Validation(format!(
                    "generator {:?} needs exactly one governor record, found {}",
                    g.id,
                    gov.len()
                )));
            }
            if gov[0].r_d <= 0.0 {
                return Err(Error::Validation(format!(
                    "generator {:?} has non-positive droop",
                    g.id
                )));
            }
        }
        for e in &self.exciters {
            if !gen_ids.contains(&e.gen) {
                return Err(Error::Validation(format!(
                    "exciter record references unknown generator {:?}",
                    e.gen
                )));
            }
        }
        for v in &self.governors {
            if !gen_ids.contains(&v.gen) {
                return Err(Error::Validation(format!(
                    "governor record references unknown generator {:?}",
                    v.gen
                )));
            }
        }
        // PV buses without a generator have no voltage support.
        for b in &self.buses {
            if b.kind == BusKind::Pv && !self.generators.iter().any(|g| g.bus == b.id) {
                return Err(Error::Validation(format!(
                    "PV bus {} has no generator",
                    b.id
                )));
            }
        }
        Ok(self)
    }
}

/// Parse a case from TOML text and validate every invariant.
pub fn parse_case(text: &str) -> Result<GridCase> {
    let file: CaseFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    GridCase {
        base_mva: file.system.base_mva,
        f_nom: file.system.f_nom,
        buses: file.buses,
        branches: file.branches,
        generators: file.generators,
        exciters: file.exciters,
        governors: file.governors,
    }
    .validate()
}

/// Load and validate a case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_case(&text)
}
