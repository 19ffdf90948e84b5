//! A device model: one cell layout paired with the matching register
//! netlist, with the pair identifiers shared between the two so that opened
//! gate sites map directly onto forced netlist pairs.

use crate::circuit::ShiftRegister;
use crate::layout::{build_register_layout, CellLayout, Channel, PairId};
use crate::{Error, Result};

/// A shift register device: physical layout plus gate-level netlist.
#[derive(Clone, Debug)]
pub struct RegisterModel {
    pub layout: CellLayout,
    pub register: ShiftRegister,
}

impl RegisterModel {
    /// Builds the default device with `n_ff` stages.
    pub fn new(n_ff: u32) -> Result<Self> {
        Self::from_layout(build_register_layout(n_ff)?)
    }

    /// Pairs a layout with the register netlist it implements. The layout
    /// must contain flip-flops `0..n` for some `n >= 1`, and every netlist
    /// pair must exist in the layout on the same channel.
    pub fn from_layout(layout: CellLayout) -> Result<Self> {
        layout.validate()?;
        let ffs = layout.ff_indices();
        if ffs.is_empty() {
            return Err(Error::invalid("layout contains no transistor sites"));
        }
        let n = ffs.len() as u32;
        if ffs != (0..n).collect::<Vec<_>>() {
            return Err(Error::invalid(format!(
                "layout flip-flop indices {ffs:?} are not contiguous from 0"
            )));
        }
        let register = ShiftRegister::new(n)?;
        let pairs = layout.pairs();
        for stage in &register.stages {
            for gate in &stage.gates {
                for input in 0..gate.inputs.len() as u8 {
                    for channel in [Channel::Nmos, Channel::Pmos] {
                        let pair = gate.pair(input, channel);
                        if !pairs.contains_key(&pair) {
                            return Err(Error::invalid(format!(
                                "layout is missing pair {pair} required by the netlist"
                            )));
                        }
                    }
                }
            }
        }
        Ok(RegisterModel { layout, register })
    }

    pub fn n_stages(&self) -> u32 {
        self.register.n_stages()
    }

    /// All pair ids of one flip-flop, in deterministic order.
    pub fn pairs_of_ff(&self, ff: u32) -> Vec<PairId> {
        self.layout
            .pairs()
            .into_keys()
            .filter(|p| p.gate.ff == ff)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::build_flipflop_layout;

    #[test]
    fn default_model_matches_layout_and_netlist() {
        let model = RegisterModel::new(4).unwrap();
        assert_eq!(model.n_stages(), 4);
        assert_eq!(model.layout.ff_indices(), vec![0, 1, 2, 3]);
        assert_eq!(model.pairs_of_ff(2).len(), 28);
    }

    #[test]
    fn single_flipflop_layout_builds_a_one_stage_model() {
        let model = RegisterModel::from_layout(build_flipflop_layout()).unwrap();
        assert_eq!(model.n_stages(), 1);
    }

    #[test]
    fn mismatched_layouts_are_rejected() {
        let mut layout = build_register_layout(2).unwrap();
        // Drop one whole pair (both twins) of ff1: the netlist needs it.
        let gone = layout.sites[56].pair_id;
        layout.sites.retain(|s| s.pair_id != gone);
        assert!(RegisterModel::from_layout(layout).is_err());

        let mut layout = build_register_layout(2).unwrap();
        for site in &mut layout.sites {
            site.id.pair.gate.ff += 1; // ffs 1..2: not contiguous from 0
            site.pair_id.gate.ff += 1;
            site.gate_id.ff += 1;
        }
        layout.children.clear();
        assert!(RegisterModel::from_layout(layout).is_err());
    }
}
