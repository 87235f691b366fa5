use serde::Serialize;

/// Kind of a differential state variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StateKind {
    RotorAngle,
    RotorSpeed,
    FluxQ,
    FluxD,
    SensedVoltage,
    FieldVoltage,
    RateFeedback,
    RegulatorOutput,
    GovLag,
    GovCompensation,
    GovServo,
    TurbinePower,
    ReheatPower,
    CrossoverPower,
}

impl StateKind {
    pub fn short_name(self) -> &'static str {
        match self {
            StateKind::RotorAngle => "delta",
            StateKind::RotorSpeed => "omega",
            StateKind::FluxQ => "eq_p",
            StateKind::FluxD => "ed_p",
            StateKind::SensedVoltage => "vm",
            StateKind::FieldVoltage => "efd",
            StateKind::RateFeedback => "rf",
            StateKind::RegulatorOutput => "vr",
            StateKind::GovLag => "gov_y1",
            StateKind::GovCompensation => "gov_y2",
            StateKind::GovServo => "gov_y3",
            StateKind::TurbinePower => "tm",
            StateKind::ReheatPower => "gov_y4",
            StateKind::CrossoverPower => "gov_y5",
        }
    }

    /// Turbine/governor block states.
    pub fn is_governor(self) -> bool {
        matches!(
            self,
            StateKind::GovLag
                | StateKind::GovCompensation
                | StateKind::GovServo
                | StateKind::TurbinePower
                | StateKind::ReheatPower
                | StateKind::CrossoverPower
        )
    }
}

#[derive(Debug, Clone)]
pub struct StateVar {
    pub machine: String,
    pub kind: StateKind,
}

/// Per-machine positions in the differential state vector. The reference
/// machine has no angle state.
#[derive(Debug, Clone)]
pub struct MachineBlock {
    pub delta: Option<usize>,
    pub omega: usize,
    pub eq_p: usize,
    pub ed_p: usize,
    pub vm: usize,
    pub efd: usize,
    pub rf: usize,
    pub vr: usize,
    pub y1: usize,
    pub y2: usize,
    pub y3: usize,
    pub tm: usize,
    pub y4: usize,
    pub y5: usize,
}

/// Canonical ordering of the n differential and l algebraic variables.
///
/// Differential states are laid out machine by machine; algebraic variables
/// are bus voltages in rectangular coordinates followed by the machine
/// stator currents:  y = [vre_0, vim_0, ..., id_0, iq_0, ...].
#[derive(Debug, Clone)]
pub struct StateLayout {
    pub states: Vec<StateVar>,
    pub machines: Vec<String>,
    pub reference: usize,
    pub n_bus: usize,
    blocks: Vec<MachineBlock>,
}

impl StateLayout {
    /// Build the layout for the given in-service machines.
    pub fn new(machines: Vec<String>, reference: usize, n_bus: usize) -> StateLayout {
        let mut states = Vec::new();
        let mut blocks = Vec::with_capacity(machines.len());
        for (m, id) in machines.iter().enumerate() {
            let mut push = |kind: StateKind| {
                states.push(StateVar {
                    machine: id.clone(),
                    kind,
                });
                states.len() - 1
            };
            let delta = if m == reference {
                None
            } else {
                Some(push(StateKind::RotorAngle))
            };
            blocks.push(MachineBlock {
                delta,
                omega: push(StateKind::RotorSpeed),
                eq_p: push(StateKind::FluxQ),
                ed_p: push(StateKind::FluxD),
                vm: push(StateKind::SensedVoltage),
                efd: push(StateKind::FieldVoltage),
                rf: push(StateKind::RateFeedback),
                vr: push(StateKind::RegulatorOutput),
                y1: push(StateKind::GovLag),
                y2: push(StateKind::GovCompensation),
                y3: push(StateKind::GovServo),
                tm: push(StateKind::TurbinePower),
                y4: push(StateKind::ReheatPower),
                y5: push(StateKind::CrossoverPower),
            });
        }
        StateLayout {
            states,
            machines,
            reference,
            n_bus,
            blocks,
        }
    }

    pub fn n_diff(&self) -> usize {
        self.states.len()
    }

    pub fn n_alg(&self) -> usize {
        2 * self.n_bus + 2 * self.machines.len()
    }

    pub fn n_machines(&self) -> usize {
        self.machines.len()
    }

    pub fn block(&self, m: usize) -> &MachineBlock {
        &self.blocks[m]
    }

    /// Index set Z: rotor-speed states, machine order.
    pub fn speed_indices(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.omega).collect()
    }

    /// All turbine/governor state indices.
    pub fn governor_indices(&self) -> Vec<usize> {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind.is_governor())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn machine_index(&self, id: &str) -> Option<usize> {
        self.machines.iter().position(|m| m == id)
    }

    /// Algebraic indices of the rectangular voltage at a bus.
    pub fn v_indices(&self, bus: usize) -> (usize, usize) {
        (2 * bus, 2 * bus + 1)
    }

    /// Algebraic indices of machine `m`'s stator current.
    pub fn i_indices(&self, m: usize) -> (usize, usize) {
        let base = 2 * self.n_bus;
        (base + 2 * m, base + 2 * m + 1)
    }

    /// Column names for trajectory export, state order.
    pub fn state_names(&self) -> Vec<String> {
        self.states
            .iter()
            .map(|s| format!("{}.{}", s.machine, s.kind.short_name()))
            .collect()
    }

    /// Names of the algebraic variables, variable order.
    pub fn alg_names(&self, bus_ids: &[u32]) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_alg());
        for id in bus_ids {
            names.push(format!("bus{id}.v_re"));
            names.push(format!("bus{id}.v_im"));
        }
        for m in &self.machines {
            names.push(format!("{m}.i_d"));
            names.push(format!("{m}.i_q"));
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_machine_has_no_angle() {
        let l = StateLayout::new(vec!["A".into(), "B".into(), "C".into()], 1, 5);
        assert_eq!(l.n_diff(), 3 * 14 - 1);
        assert!(l.block(1).delta.is_none());
        assert!(l.block(0).delta.is_some());
        assert_eq!(l.speed_indices().len(), 3);
        // indices form a permutation of 0..n-1
        let mut all: Vec<usize> = (0..l.n_diff()).collect();
        let mut seen: Vec<usize> = l
            .blocks
            .iter()
            .flat_map(|b| {
                let mut v = vec![
                    b.omega, b.eq_p, b.ed_p, b.vm, b.efd, b.rf, b.vr, b.y1, b.y2, b.y3, b.tm,
                    b.y4, b.y5,
                ];
                if let Some(d) = b.delta {
                    v.push(d);
                }
                v
            })
            .collect();
        seen.sort_unstable();
        all.sort_unstable();
        assert_eq!(seen, all);
    }

    #[test]
    fn governor_indices_cover_six_states_per_machine() {
        let l = StateLayout::new(vec!["A".into(), "B".into()], 0, 2);
        assert_eq!(l.governor_indices().len(), 12);
    }
}
