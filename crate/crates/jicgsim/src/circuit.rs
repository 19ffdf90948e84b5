//! Gate-level netlists: three-valued NAND evaluation with forced-open pairs,
//! the six-NAND flip-flop, shift registers, settling, and stimulus traces.
//!
//! Each NAND input position owns one duplicated NMOS pair (series pull-down)
//! and one duplicated PMOS pair (parallel pull-up), identified by the same
//! [`PairId`]s the layout uses. A forced-open pair behaves as a conducting
//! transistor regardless of its gate input; because the two twins of a pair
//! are in series, a pair only appears in a [`ForcedState`] when *both* twins
//! were opened.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::layout::{Channel, GateId, PairId};
use crate::{Error, Result};

/// Clock frequencies the bench driver supports (MHz).
pub const STANDARD_CLOCKS_MHZ: [f64; 5] = [2.0, 4.0, 7.0, 10.0, 20.0];
/// Default shift clock (MHz).
pub const DEFAULT_CLOCK_MHZ: f64 = 2.0;
/// Maximum full relaxation sweeps per settle before declaring instability.
/// One sweep evaluates every gate once, so the budget is 8 × gate count
/// gate evaluations.
pub const SETTLE_SWEEP_LIMIT: usize = 8;

/// A three-valued logic level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Value {
    Zero,
    One,
    X,
}

impl Value {
    pub fn from_bool(b: bool) -> Value {
        if b {
            Value::One
        } else {
            Value::Zero
        }
    }

    /// `'0'`, `'1'` or `'x'`, as written in trace files.
    pub fn as_char(&self) -> char {
        match self {
            Value::Zero => '0',
            Value::One => '1',
            Value::X => 'x',
        }
    }
}

/// Index of a net in a register's value table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetId(pub usize);

/// One NAND gate. Input position `i` is driven through the NMOS pair
/// `(id, i, Nmos)` and the PMOS pair `(id, i, Pmos)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NandGate {
    pub id: GateId,
    pub inputs: Vec<NetId>,
    pub output: NetId,
}

impl NandGate {
    /// The pair implementing input position `input` on `channel`.
    pub fn pair(&self, input: u8, channel: Channel) -> PairId {
        PairId { gate: self.id, input, channel }
    }
}

/// The set of pairs currently forced conducting, plus the laser window that
/// produced them (used by [`ShiftRegister::run_trace`] to gate the forcing in
/// time and to annotate the trace).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForcedState {
    pub open_nmos: BTreeSet<PairId>,
    pub open_pmos: BTreeSet<PairId>,
    /// Active interval `[start, end)` in ns from trace start, if armed.
    pub window_ns: Option<(f64, f64)>,
    /// Power fraction recorded on the trace's laser channel while active.
    pub laser_power: f64,
}

impl ForcedState {
    pub fn is_empty(&self) -> bool {
        self.open_nmos.is_empty() && self.open_pmos.is_empty()
    }

    /// Same pair sets, armed with a time window and laser annotation.
    pub fn with_window(mut self, start_ns: f64, end_ns: f64, laser_power: f64) -> ForcedState {
        self.window_ns = Some((start_ns, end_ns));
        self.laser_power = laser_power;
        self
    }
}

/// Three-valued NAND with forced-open pairs, from conduction paths:
///
/// * pull-down conducts only if every series position conducts (input 1 or
///   its NMOS pair forced); any hard 0 blocks it;
/// * pull-up conducts if any parallel position conducts (input 0 or its PMOS
///   pair forced);
/// * a conducting pull-down wins any contention and yields 0; a pull-up alone
///   yields 1; neither yields `X` (floating — the settle loop holds the
///   previous level); undetermined paths through `X` inputs yield `X`.
pub fn eval_nand(gate: &NandGate, inputs: &[Value], forced: &ForcedState) -> Result<Value> {
    if inputs.len() != gate.inputs.len() {
        return Err(Error::invalid(format!(
            "gate {} has {} inputs, got {} values",
            gate.id,
            gate.inputs.len(),
            inputs.len()
        )));
    }
    Ok(eval_nand_values(gate, inputs, forced))
}

#[derive(Clone, Copy, PartialEq)]
enum Tri {
    True,
    False,
    Unknown,
}

fn eval_nand_values(gate: &NandGate, inputs: &[Value], forced: &ForcedState) -> Value {
    let mut pull_down = Tri::True;
    for (i, v) in inputs.iter().enumerate() {
        if forced.open_nmos.contains(&gate.pair(i as u8, Channel::Nmos)) {
            continue; // forced conducting regardless of the input level
        }
        match v {
            Value::One => {}
            Value::Zero => {
                pull_down = Tri::False;
                break;
            }
            Value::X => pull_down = Tri::Unknown,
        }
    }

    let mut pull_up = Tri::False;
    for (i, v) in inputs.iter().enumerate() {
        if forced.open_pmos.contains(&gate.pair(i as u8, Channel::Pmos)) {
            pull_up = Tri::True;
            break;
        }
        match v {
            Value::Zero => {
                pull_up = Tri::True;
                break;
            }
            Value::X => pull_up = Tri::Unknown,
            Value::One => {}
        }
    }

    match (pull_down, pull_up) {
        (Tri::True, _) => Value::Zero, // pull-down wins contention
        (Tri::False, Tri::True) => Value::One,
        _ => Value::X, // floating or undetermined
    }
}

/// One register stage: six NAND gates in a fixed relaxation order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipFlop {
    pub ff_index: u32,
    /// Gates in evaluation order.
    pub gates: Vec<NandGate>,
    pub d: NetId,
    pub clk: NetId,
    pub q: NetId,
    pub qb: NetId,
}

/// A chain of flip-flops sharing clock and clear-bar rails, with the first
/// stage's data input exposed and the last stage's output observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRegister {
    pub stages: Vec<FlipFlop>,
    values: Vec<Value>,
    clk: NetId,
    clrb: NetId,
    d_in: NetId,
    q_out: NetId,
}

impl ShiftRegister {
    /// Builds an `n_stages`-bit register (at least one stage).
    pub fn new(n_stages: u32) -> Result<Self> {
        if n_stages == 0 {
            return Err(Error::invalid("a shift register needs at least one stage"));
        }
        let clk = NetId(0);
        let clrb = NetId(1);
        let d_in = NetId(2);
        let mut stages = Vec::with_capacity(n_stages as usize);
        let mut n_nets = 3;
        let mut d = d_in;
        for s in 0..n_stages {
            let base = n_nets;
            n_nets += 6;
            let [n1, n2, n3, n4, q, qb] =
                [NetId(base), NetId(base + 1), NetId(base + 2), NetId(base + 3), NetId(base + 4), NetId(base + 5)];
            let gate = |label: u8, inputs: Vec<NetId>, output: NetId| NandGate {
                id: GateId { ff: s, label },
                inputs,
                output,
            };
            // Master latch (G2/G3 hold, G1/G4 steer), then output latch
            // (G5/G6). Relaxation order follows the signal flow.
            let gates = vec![
                gate(3, vec![n2, n4], n1),
                gate(2, vec![n1, clk], n2),
                gate(1, vec![n2, clk, n4], n3),
                gate(4, vec![n3, d], n4),
                gate(5, vec![n2, qb], q),
                gate(6, vec![clrb, q, n3], qb),
            ];
            stages.push(FlipFlop { ff_index: s, gates, d, clk, q, qb });
            d = q;
        }
        let q_out = stages.last().expect("at least one stage").q;
        let mut reg = ShiftRegister {
            stages,
            values: vec![Value::X; n_nets],
            clk,
            clrb,
            d_in,
            q_out,
        };
        reg.values[reg.clrb.0] = Value::One;
        Ok(reg)
    }

    pub fn n_stages(&self) -> u32 {
        self.stages.len() as u32
    }

    /// Current level of a net.
    pub fn value(&self, net: NetId) -> Value {
        self.values[net.0]
    }

    /// Current stored bit (Q output) of every stage.
    pub fn stored_bits(&self) -> Vec<Value> {
        self.stages.iter().map(|s| self.values[s.q.0]).collect()
    }

    fn set_pins(&mut self, clk_high: bool, d: bool) {
        self.values[self.clk.0] = Value::from_bool(clk_high);
        self.values[self.d_in.0] = Value::from_bool(d);
        self.values[self.clrb.0] = Value::One;
    }

    /// Forces every stage to store `bit` (clock low, data input at `bit`),
    /// then settles. This models the preload done before each measurement.
    pub fn init_state(&mut self, bit: bool) {
        for v in self.values.iter_mut() {
            *v = Value::X;
        }
        self.set_pins(false, bit);
        let q = Value::from_bool(bit);
        let qb = Value::from_bool(!bit);
        for s in 0..self.stages.len() {
            let stage = &self.stages[s];
            self.values[stage.q.0] = q;
            self.values[stage.qb.0] = qb;
        }
        self.settle(&ForcedState::default())
            .expect("a fault-free register settles from a consistent preload");
    }

    /// Relaxes every gate in order until no net changes, holding the previous
    /// level of any net whose gate floats or is undetermined. Fails with
    /// [`Error::Unstable`] if no fixed point is reached within
    /// [`SETTLE_SWEEP_LIMIT`] sweeps; net values then hold the last sweep's
    /// state.
    pub fn settle(&mut self, forced: &ForcedState) -> Result<()> {
        for _ in 0..SETTLE_SWEEP_LIMIT {
            let mut changed = false;
            for stage in &self.stages {
                for gate in &stage.gates {
                    let mut ins = [Value::X; 3];
                    for (k, net) in gate.inputs.iter().enumerate() {
                        ins[k] = self.values[net.0];
                    }
                    let new = eval_nand_values(gate, &ins[..gate.inputs.len()], forced);
                    if new != Value::X && new != self.values[gate.output.0] {
                        self.values[gate.output.0] = new;
                        changed = true;
                    }
                }
            }
            if !changed {
                return Ok(());
            }
        }
        Err(Error::Unstable(format!(
            "no fixed point after {SETTLE_SWEEP_LIMIT} sweeps of {} gates",
            self.stages.len() * 6
        )))
    }

    /// Clocks one bit per cycle through the register without any forcing and
    /// returns the observed output level after each cycle's rising edge.
    /// Continues from the current stored state (call [`Self::init_state`]
    /// first to preload).
    pub fn shift_sequence(&mut self, clock_mhz: f64, bits: &[bool]) -> Result<Vec<Value>> {
        validate_clock(clock_mhz, false)?;
        let none = ForcedState::default();
        let mut out = Vec::with_capacity(bits.len());
        for &bit in bits {
            self.set_pins(false, bit);
            self.settle(&none)?;
            self.set_pins(true, bit);
            self.settle(&none)?;
            out.push(self.values[self.q_out.0]);
        }
        Ok(out)
    }

    /// Runs a full measurement: preload to `spec.input_bit`, clock for
    /// `spec.n_cycles` cycles with the data input held at the same bit, and
    /// (optionally) force `shot`'s pairs open during its time window.
    /// Sampling happens at every half-clock boundary and at the window
    /// edges. If the netlist fails to settle at any sample the trace is
    /// flagged unstable and continues from the unsettled state.
    pub fn run_trace(&mut self, spec: &TraceSpec, shot: Option<&ForcedState>) -> Result<Trace> {
        spec.validate(self.n_stages())?;
        let window = match shot {
            None => None,
            Some(f) => Some(f.window_ns.ok_or_else(|| {
                Error::invalid("a forcing state needs a time window to run in a trace")
            })?),
        };
        let period_ns = 1000.0 / spec.clock_mhz;
        let half = period_ns / 2.0;
        let total_ns = spec.n_cycles as f64 * period_ns;

        // Half-clock boundaries carry their index so the phase is exact even
        // for periods that are not representable; window edges are merged in.
        let mut events: Vec<(f64, bool)> = (0..2 * spec.n_cycles)
            .map(|k| (k as f64 * half, k % 2 == 1))
            .collect();
        if let Some((start, end)) = window {
            if !(start.is_finite() && end.is_finite() && start >= 0.0 && end > start) {
                return Err(Error::invalid(format!(
                    "forcing window [{start}, {end}) ns is not a forward interval"
                )));
            }
            for t in [start, end] {
                if t < total_ns && events.iter().all(|(e, _)| (e - t).abs() > 1e-9) {
                    let clk_high = ((t / half) as u64) % 2 == 1;
                    events.push((t, clk_high));
                }
            }
            events.sort_by(|a, b| a.0.total_cmp(&b.0));
        }

        self.init_state(spec.input_bit);
        let none = ForcedState::default();
        let mut trace = Trace {
            clock_mhz: spec.clock_mhz,
            period_ns,
            input_bit: spec.input_bit,
            window_ns: window,
            unstable: false,
            times_ns: Vec::with_capacity(events.len()),
            laser: Vec::with_capacity(events.len()),
            clk: Vec::with_capacity(events.len()),
            d_in: Vec::with_capacity(events.len()),
            q_out: Vec::with_capacity(events.len()),
        };
        for (t, clk_high) in events {
            let active = match (window, shot) {
                (Some((start, end)), Some(_)) => t >= start && t < end,
                _ => false,
            };
            let forced = if active { shot.expect("active implies shot") } else { &none };
            self.set_pins(clk_high, spec.input_bit);
            if self.settle(forced).is_err() {
                trace.unstable = true;
            }
            trace.times_ns.push(t);
            trace.laser.push(if active { forced.laser_power } else { 0.0 });
            trace.clk.push(u8::from(clk_high));
            trace.d_in.push(u8::from(spec.input_bit));
            trace.q_out.push(self.values[self.q_out.0]);
        }
        Ok(trace)
    }
}

fn validate_clock(clock_mhz: f64, allow_nonstandard: bool) -> Result<()> {
    if !(clock_mhz.is_finite() && clock_mhz > 0.0) {
        return Err(Error::invalid(format!("clock must be positive, got {clock_mhz} MHz")));
    }
    if !allow_nonstandard && !STANDARD_CLOCKS_MHZ.contains(&clock_mhz) {
        return Err(Error::invalid(format!(
            "clock {clock_mhz} MHz is not one of the supported rates {STANDARD_CLOCKS_MHZ:?}; \
             enable nonstandard clocks to override"
        )));
    }
    Ok(())
}

/// Stimulus parameters of one trace run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub clock_mhz: f64,
    /// Level held on the data input for the whole run (and preloaded).
    pub input_bit: bool,
    pub n_cycles: usize,
    /// Accept clock rates outside [`STANDARD_CLOCKS_MHZ`].
    pub allow_nonstandard_clock: bool,
}

impl TraceSpec {
    /// The default stimulus for an `n_stages` register: 2 MHz, enough cycles
    /// to flush the pipeline twice plus margin.
    pub fn default_for(n_stages: u32, input_bit: bool) -> TraceSpec {
        TraceSpec {
            clock_mhz: DEFAULT_CLOCK_MHZ,
            input_bit,
            n_cycles: default_cycles(n_stages),
            allow_nonstandard_clock: false,
        }
    }

    fn validate(&self, n_stages: u32) -> Result<()> {
        validate_clock(self.clock_mhz, self.allow_nonstandard_clock)?;
        if self.n_cycles < 2 * n_stages as usize {
            return Err(Error::invalid(format!(
                "a {n_stages}-stage register needs at least {} cycles to flush twice, got {}",
                2 * n_stages,
                self.n_cycles
            )));
        }
        Ok(())
    }
}

/// Default trace length for an `n_stages` register.
pub fn default_cycles(n_stages: u32) -> usize {
    2 * n_stages as usize + 4
}

/// Default cycle in which campaign shots are fired.
pub fn default_fire_cycle(n_stages: u32) -> usize {
    n_stages as usize + 1
}

/// The forcing window for a shot of `duration_ns` fired in the middle of the
/// clock-low phase of `cycle`.
pub fn fire_window(clock_mhz: f64, cycle: usize, duration_ns: f64) -> (f64, f64) {
    let period_ns = 1000.0 / clock_mhz;
    let start = (cycle as f64 + 0.25) * period_ns;
    (start, start + duration_ns)
}

/// A sampled measurement record: laser activity, clock, data in, Q out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub clock_mhz: f64,
    pub period_ns: f64,
    pub input_bit: bool,
    /// Laser window `[start, end)` in ns, if a shot was armed.
    pub window_ns: Option<(f64, f64)>,
    /// True if any settle step failed to reach a fixed point.
    pub unstable: bool,
    pub times_ns: Vec<f64>,
    /// Laser drive (power fraction) at each sample.
    pub laser: Vec<f64>,
    pub clk: Vec<u8>,
    pub d_in: Vec<u8>,
    pub q_out: Vec<Value>,
}

impl Trace {
    /// Whether two traces sampled the same stimulus at the same times, so
    /// their outputs are directly comparable.
    pub fn stimulus_matches(&self, other: &Trace) -> bool {
        self.clock_mhz == other.clock_mhz
            && self.input_bit == other.input_bit
            && self.times_ns.len() == other.times_ns.len()
            && self
                .times_ns
                .iter()
                .zip(&other.times_ns)
                .all(|(a, b)| (a - b).abs() <= 1e-9)
            && self.clk == other.clk
            && self.d_in == other.d_in
    }

    /// Writes the trace as CSV with header `time_ns,laser,clk,d_in,q_out`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time_ns,laser,clk,d_in,q_out")?;
        for i in 0..self.times_ns.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                format_ns(self.times_ns[i]),
                self.laser[i],
                self.clk[i],
                self.d_in[i],
                self.q_out[i].as_char()
            )?;
        }
        Ok(())
    }
}

/// Formats a nanosecond timestamp compactly but losslessly for CSV.
fn format_ns(t: f64) -> String {
    if t == t.trunc() && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}
