use crate::error::{Error, Result};
use crate::grid::GridCase;

/// A disturbance applied at t = 0+.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    /// Scale the load at `bus` by (1 + percent/100).
    LoadStep { bus: u32, percent: f64 },
    /// Disconnect the named generator.
    GenTrip { gen: String },
}

impl Scenario {
    /// Parse the CLI form `load-step:BUS:PCT` or `gen-trip:GEN`.
    pub fn parse(s: &str) -> Result<Scenario> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["load-step", bus, pct] => {
                let bus = bus
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad bus id {bus:?}")))?;
                let percent = pct
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad percentage {pct:?}")))?;
                Ok(Scenario::LoadStep { bus, percent })
            }
            ["gen-trip", gen] => Ok(Scenario::GenTrip {
                gen: gen.to_string(),
            }),
            _ => Err(Error::InvalidArgument(format!(
                "scenario must be load-step:BUS:PCT or gen-trip:GEN, got {s:?}"
            ))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Scenario::LoadStep { bus, percent } => format!("load-step:{bus}:{percent}"),
            Scenario::GenTrip { gen } => format!("gen-trip:{gen}"),
        }
    }
}

/// Apply a scenario to a case, returning the modified copy. The input case
/// is left untouched.
pub fn apply_scenario(case: &GridCase, scenario: &Scenario) -> Result<GridCase> {
    let mut out = case.clone();
    match scenario {
        Scenario::LoadStep { bus, percent } => {
            let i = case.bus_index(*bus)?;
            let k = 1.0 + percent / 100.0;
            out.buses[i].p_load *= k;
            out.buses[i].q_load *= k;
        }
        Scenario::GenTrip { gen } => {
            let i = case.gen_index(gen)?;
            let id = out.generators[i].id.clone();
            out.generators.remove(i);
            out.exciters.retain(|e| e.gen != id);
            out.governors.retain(|g| g.gen != id);
            // A PV bus that lost its only unit reverts to PQ.
            let bus = case.generators[i].bus;
            if !out.generators.iter().any(|g| g.bus == bus) {
                let bi = out.bus_index(bus)?;
                if out.buses[bi].kind == crate::grid::BusKind::Pv {
                    out.buses[bi].kind = crate::grid::BusKind::Pq;
                }
            }
        }
    }
    Ok(out)
}
