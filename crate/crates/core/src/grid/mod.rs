//! Static network model: case files, admittance matrix, AC power flow, and
//! disturbance scenarios.

mod case;
mod powerflow;
mod scenario;
mod ybus;

pub use case::{
    load_case, parse_case, Branch, Bus, BusKind, ExciterParams, Generator, GovernorParams,
    GridCase,
};
pub use powerflow::{solve_power_flow, solve_power_flow_with, PfOptions, PowerFlowSolution};
pub use scenario::{apply_scenario, Scenario};
pub use ybus::build_ybus;
