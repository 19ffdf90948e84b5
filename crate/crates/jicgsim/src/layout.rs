//! Cell layouts: transistor gate sites, duplicated-pair geometry, filler
//! metal, and builders for inverter, NAND, flip-flop and register cells.
//!
//! Every logical transistor is implemented as a series pair of two physically
//! separated halves ("twins"). Both twins share one logical position (gate,
//! input index, channel); the pair conducts spuriously only if *both* twin
//! gate sites are driven open. The twin spacing is fixed at
//! [`PAIR_SPACING_UM`] and is a validated invariant of every layout.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::geom::{Point, Rect, COORD_EPS};
use crate::{Error, Result};

/// Centre-to-centre spacing between the two twin sites of every pair (µm).
pub const PAIR_SPACING_UM: f64 = 9.0;
/// Edge length of the square gate site of a single transistor half (µm).
pub const SITE_EDGE_UM: f64 = 1.0;
/// Width of one flip-flop cell (µm).
pub const FF_WIDTH_UM: f64 = 82.0;
/// Height of one flip-flop cell (µm).
pub const FF_HEIGHT_UM: f64 = 20.0;
/// Horizontal pitch between consecutive gate columns inside a flip-flop (µm).
const GATE_PITCH_UM: f64 = 13.5;
/// X offset of the first gate column inside a flip-flop (µm).
const GATE_X0_UM: f64 = 2.0;
/// Y offset of a gate's local origin inside a flip-flop (µm).
const GATE_Y0_UM: f64 = 3.5;
/// Vertical pitch between the transistor rows of consecutive gate inputs (µm).
const ROW_PITCH_UM: f64 = 1.5;
/// Vertical offset of a PMOS row above its NMOS row within one input (µm).
const PMOS_ROW_LIFT_UM: f64 = 4.5;
/// Width of one gate column (two twin sites 9 µm apart, 1 µm wide each).
const GATE_WIDTH_UM: f64 = PAIR_SPACING_UM + SITE_EDGE_UM;

/// Number of inputs of each flip-flop gate `G1..G6`, in label order.
pub const GATE_ARITY: [u8; 6] = [3, 2, 2, 2, 2, 3];

/// Relative drive coupling of the NMOS sites on the two gates whose spurious
/// pull-down clears a stored one (`G1` and `G5`). Their transistor rows sit
/// deeper in the well stack, so a larger fraction of the incident intensity
/// is needed to open them; this constant folds that into the site model.
pub const RESET_PATH_COUPLING: f64 = 35.0 / 45.0;

/// Default relative amplitude for per-cell coupling jitter.
pub const DEFAULT_JITTER_AMPLITUDE: f64 = 0.10;

/// Sampling pitch used for occlusion-fraction queries (µm).
const OCCLUSION_PITCH_UM: f64 = 0.1;

/// MOS channel type of a transistor site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Nmos,
    Pmos,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Nmos => write!(f, "nmos"),
            Channel::Pmos => write!(f, "pmos"),
        }
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nmos" => Ok(Channel::Nmos),
            "pmos" => Ok(Channel::Pmos),
            other => Err(Error::invalid(format!("unknown channel {other:?}"))),
        }
    }
}

/// One NAND gate of one flip-flop: flip-flop index plus gate label `1..=6`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GateId {
    /// Flip-flop (register stage) index, starting at 0.
    pub ff: u32,
    /// Gate label within the flip-flop, `1..=6`.
    pub label: u8,
}

impl fmt::Display for GateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ff{}/G{}", self.ff, self.label)
    }
}

impl FromStr for GateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("malformed gate id {s:?} (expected e.g. \"ff0/G2\")"));
        let (ff_part, g_part) = s.split_once('/').ok_or_else(bad)?;
        let ff = ff_part.strip_prefix("ff").ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let label = g_part.strip_prefix('G').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if !(1..=6).contains(&label) {
            return Err(bad());
        }
        Ok(GateId { ff, label })
    }
}

/// One duplicated transistor pair: a gate input position on one channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairId {
    pub gate: GateId,
    /// Input position within the gate, `0..arity`.
    pub input: u8,
    pub channel: Channel,
}

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/in{}/{}", self.gate, self.input, self.channel)
    }
}

impl FromStr for PairId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad =
            || Error::invalid(format!("malformed pair id {s:?} (expected e.g. \"ff0/G2/in1/nmos\")"));
        let mut parts = s.rsplitn(3, '/');
        let channel = parts.next().ok_or_else(bad)?.parse()?;
        let in_part = parts.next().ok_or_else(bad)?;
        let input = in_part.strip_prefix("in").ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let gate = parts.next().ok_or_else(bad)?.parse()?;
        Ok(PairId { gate, input, channel })
    }
}

/// One physical transistor gate site (one twin of a pair).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SiteId {
    pub pair: PairId,
    /// Twin index within the pair: 0 (left) or 1 (right).
    pub twin: u8,
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let twin = if self.twin == 0 { 'a' } else { 'b' };
        write!(f, "{}/{}", self.pair, twin)
    }
}

impl FromStr for SiteId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::invalid(format!("malformed site id {s:?} (expected e.g. \"ff0/G2/in1/nmos/a\")"))
        };
        let (pair_part, twin_part) = s.rsplit_once('/').ok_or_else(bad)?;
        let twin = match twin_part {
            "a" => 0,
            "b" => 1,
            _ => return Err(bad()),
        };
        Ok(SiteId { pair: pair_part.parse()?, twin })
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                text.parse().map_err(|e| D::Error::custom(format!("{e}")))
            }
        }
    };
}

string_serde!(GateId);
string_serde!(PairId);
string_serde!(SiteId);

/// One transistor gate site placed in absolute cell coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransistorSite {
    pub id: SiteId,
    /// The square gate region that must be illuminated to open this half.
    pub gate_region: Rect,
    pub channel: Channel,
    /// The pair this site belongs to (always `id.pair`).
    pub pair_id: PairId,
    /// The gate this site belongs to (always `id.pair.gate`).
    pub gate_id: GateId,
    /// Relative drive coupling: the fraction of incident mean intensity that
    /// acts on this site. 1.0 for ordinary sites.
    pub coupling: f64,
}

/// A named sub-cell placed inside a larger cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub name: String,
    /// Offset of the child's local origin in the parent frame.
    pub offset: Point,
    /// Child bounds, in the parent frame.
    pub bounds: Rect,
}

/// Parameters of a regular grid of opaque filler squares.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FillerSpec {
    pub width_um: f64,
    pub height_um: f64,
    pub gap_um: f64,
}

impl Default for FillerSpec {
    fn default() -> Self {
        FillerSpec { width_um: 2.0, height_um: 2.0, gap_um: 1.2 }
    }
}

impl FillerSpec {
    fn validate(&self) -> Result<()> {
        if self.width_um <= 0.0 || self.height_um <= 0.0 || self.gap_um <= 0.0 {
            return Err(Error::invalid(format!(
                "filler dimensions and gap must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A complete cell: bounds, transistor sites, opaque fillers, named children.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellLayout {
    pub bounds: Rect,
    pub sites: Vec<TransistorSite>,
    /// Opaque metal rectangles; light cannot reach sites beneath them.
    pub fillers: Vec<Rect>,
    pub children: Vec<Placement>,
}

impl CellLayout {
    /// Checks every structural invariant:
    /// sites lie inside the bounds, site ids are unique and internally
    /// consistent, every pair has exactly two same-channel twins spaced
    /// [`PAIR_SPACING_UM`] apart, distinct gate regions do not overlap, and
    /// couplings are positive.
    pub fn validate(&self) -> Result<()> {
        for site in &self.sites {
            if site.pair_id != site.id.pair {
                return Err(Error::invalid(format!(
                    "site {} carries mismatched pair id {}",
                    site.id, site.pair_id
                )));
            }
            if site.gate_id != site.id.pair.gate {
                return Err(Error::invalid(format!(
                    "site {} carries mismatched gate id {}",
                    site.id, site.gate_id
                )));
            }
            if site.channel != site.id.pair.channel {
                return Err(Error::invalid(format!(
                    "site {} carries mismatched channel {}",
                    site.id, site.channel
                )));
            }
            if !self.bounds.contains_rect(&site.gate_region) {
                return Err(Error::invalid(format!(
                    "site {} extends outside the cell bounds",
                    site.id
                )));
            }
            if !(site.coupling > 0.0 && site.coupling.is_finite()) {
                return Err(Error::invalid(format!(
                    "site {} has non-positive coupling {}",
                    site.id, site.coupling
                )));
            }
            let w = site.gate_region.width();
            let h = site.gate_region.height();
            if (w - SITE_EDGE_UM).abs() > COORD_EPS || (h - SITE_EDGE_UM).abs() > COORD_EPS {
                return Err(Error::invalid(format!(
                    "site {} gate region is {w} x {h} µm, expected {SITE_EDGE_UM} µm square",
                    site.id
                )));
            }
        }

        let mut by_pair: BTreeMap<PairId, Vec<&TransistorSite>> = BTreeMap::new();
        for site in &self.sites {
            by_pair.entry(site.pair_id).or_default().push(site);
        }
        for (pair, twins) in &by_pair {
            if twins.len() != 2 {
                return Err(Error::invalid(format!(
                    "pair {pair} has {} sites, expected exactly 2",
                    twins.len()
                )));
            }
            if twins[0].id == twins[1].id {
                return Err(Error::invalid(format!("pair {pair} repeats one twin id")));
            }
            let d = twins[0].gate_region.center().distance_to(twins[1].gate_region.center());
            if (d - PAIR_SPACING_UM).abs() > COORD_EPS {
                return Err(Error::invalid(format!(
                    "pair {pair} twins are {d} µm apart, expected {PAIR_SPACING_UM}"
                )));
            }
        }

        // Sweep over x to reject overlapping gate regions in O(n·k).
        let mut order: Vec<usize> = (0..self.sites.len()).collect();
        order.sort_by(|&a, &b| {
            self.sites[a]
                .gate_region
                .x0
                .total_cmp(&self.sites[b].gate_region.x0)
                .then(self.sites[a].gate_region.y0.total_cmp(&self.sites[b].gate_region.y0))
        });
        for (k, &i) in order.iter().enumerate() {
            let ri = &self.sites[i].gate_region;
            for &j in &order[k + 1..] {
                let rj = &self.sites[j].gate_region;
                if rj.x0 >= ri.x1 {
                    break;
                }
                if ri.overlaps(rj) {
                    return Err(Error::invalid(format!(
                        "gate regions of {} and {} overlap",
                        self.sites[i].id, self.sites[j].id
                    )));
                }
            }
        }

        for filler in &self.fillers {
            Rect::new(filler.x0, filler.y0, filler.x1, filler.y1)?;
        }
        Ok(())
    }

    /// Serialises the layout as pretty-printed JSON (with trailing newline).
    pub fn to_json_string(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    /// Parses a layout from JSON and validates it.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let layout: CellLayout = serde_json::from_str(text)?;
        layout.validate()?;
        Ok(layout)
    }

    /// Sorted list of flip-flop indices present in the layout.
    pub fn ff_indices(&self) -> Vec<u32> {
        let mut ffs: Vec<u32> = self.sites.iter().map(|s| s.gate_id.ff).collect();
        ffs.sort_unstable();
        ffs.dedup();
        ffs
    }

    /// Bounds of one flip-flop cell: the matching `ff{i}` child placement if
    /// present, the whole cell if it holds exactly that one flip-flop, or the
    /// bounding box of the flip-flop's sites otherwise.
    pub fn ff_cell_bounds(&self, ff: u32) -> Result<Rect> {
        let name = format!("ff{ff}");
        if let Some(child) = self.children.iter().find(|c| c.name == name) {
            return Ok(child.bounds);
        }
        let ffs = self.ff_indices();
        if ffs == [ff] {
            return Ok(self.bounds);
        }
        self.sites
            .iter()
            .filter(|s| s.gate_id.ff == ff)
            .map(|s| s.gate_region)
            .reduce(|a, b| a.union(&b))
            .ok_or_else(|| Error::not_found(format!("flip-flop {ff} has no sites in this layout")))
    }

    /// Bounding box of all gate sites belonging to `gate`.
    pub fn gate_bounding_box(&self, gate: GateId) -> Result<Rect> {
        self.sites
            .iter()
            .filter(|s| s.gate_id == gate)
            .map(|s| s.gate_region)
            .reduce(|a, b| a.union(&b))
            .ok_or_else(|| Error::not_found(format!("gate {gate} has no sites in this layout")))
    }

    /// Map from pair id to its (two) sites, for fast lookups.
    pub fn pairs(&self) -> BTreeMap<PairId, Vec<&TransistorSite>> {
        let mut map: BTreeMap<PairId, Vec<&TransistorSite>> = BTreeMap::new();
        for site in &self.sites {
            map.entry(site.pair_id).or_default().push(site);
        }
        map
    }

    /// Whether `p` lies under any opaque filler rectangle.
    pub fn is_occluded(&self, p: Point) -> bool {
        self.fillers.iter().any(|f| f.contains(p))
    }

    /// Fraction of `region` covered by fillers, estimated on a regular
    /// sub-sample grid (pitch 0.1 µm, cell-centred).
    pub fn occlusion_fraction(&self, region: &Rect) -> f64 {
        let (nx, ny) = occlusion_samples(region);
        let mut covered = 0usize;
        for iy in 0..ny {
            let y = region.y0 + (iy as f64 + 0.5) * region.height() / ny as f64;
            for ix in 0..nx {
                let x = region.x0 + (ix as f64 + 0.5) * region.width() / nx as f64;
                if self.is_occluded(Point::new(x, y)) {
                    covered += 1;
                }
            }
        }
        covered as f64 / (nx * ny) as f64
    }

    /// Copy of this layout with per-flip-flop coupling jitter applied: every
    /// site coupling in flip-flop `i` is scaled by `1 + amplitude·u_i`, where
    /// `u_i` is drawn uniformly from `[-1, 1)` by a seeded deterministic
    /// generator (one draw per flip-flop, in ascending index order).
    pub fn with_coupling_jitter(&self, seed: u64, amplitude: f64) -> Result<CellLayout> {
        if !(0.0..1.0).contains(&amplitude) {
            return Err(Error::invalid(format!(
                "jitter amplitude must lie in [0, 1), got {amplitude}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factors: BTreeMap<u32, f64> = BTreeMap::new();
        for ff in self.ff_indices() {
            factors.insert(ff, 1.0 + amplitude * rng.gen_range(-1.0..1.0));
        }
        let mut out = self.clone();
        for site in &mut out.sites {
            site.coupling *= factors[&site.gate_id.ff];
        }
        Ok(out)
    }
}

/// Sub-sample counts for an occlusion or mean-intensity query over `region`.
pub(crate) fn occlusion_samples(region: &Rect) -> (usize, usize) {
    let nx = (region.width() / OCCLUSION_PITCH_UM).ceil().max(1.0) as usize;
    let ny = (region.height() / OCCLUSION_PITCH_UM).ceil().max(1.0) as usize;
    (nx, ny)
}

fn pair_sites(
    gate: GateId,
    input: u8,
    channel: Channel,
    row_origin: Point,
    coupling: f64,
) -> Result<[TransistorSite; 2]> {
    let make = |twin: u8| -> Result<TransistorSite> {
        let cx = row_origin.x + SITE_EDGE_UM / 2.0 + twin as f64 * PAIR_SPACING_UM;
        let cy = row_origin.y + SITE_EDGE_UM / 2.0;
        let pair_id = PairId { gate, input, channel };
        Ok(TransistorSite {
            id: SiteId { pair: pair_id, twin },
            gate_region: Rect::from_center(Point::new(cx, cy), SITE_EDGE_UM, SITE_EDGE_UM)?,
            channel,
            pair_id,
            gate_id: gate,
            coupling,
        })
    };
    Ok([make(0)?, make(1)?])
}

/// Sites of one inverter (one NMOS pair and one PMOS pair for one input),
/// with the local origin at the lower-left corner of the NMOS row.
fn inverter_sites(
    origin: Point,
    gate: GateId,
    input: u8,
    nmos_coupling: f64,
) -> Result<Vec<TransistorSite>> {
    let mut sites = Vec::with_capacity(4);
    sites.extend(pair_sites(gate, input, Channel::Nmos, origin, nmos_coupling)?);
    sites.extend(pair_sites(
        gate,
        input,
        Channel::Pmos,
        origin.translated(0.0, PMOS_ROW_LIFT_UM),
        1.0,
    )?);
    Ok(sites)
}

fn inverter_bounds(origin: Point) -> Result<Rect> {
    Rect::new(
        origin.x,
        origin.y,
        origin.x + GATE_WIDTH_UM,
        origin.y + PMOS_ROW_LIFT_UM + SITE_EDGE_UM,
    )
}

/// A single standalone inverter cell (one duplicated NMOS/PMOS pair each).
pub fn build_inverter_layout() -> CellLayout {
    let origin = Point::new(0.0, 0.0);
    let gate = GateId { ff: 0, label: 1 };
    let layout = CellLayout {
        bounds: inverter_bounds(origin).expect("static inverter bounds"),
        sites: inverter_sites(origin, gate, 0, 1.0).expect("static inverter sites"),
        fillers: Vec::new(),
        children: Vec::new(),
    };
    debug_assert!(layout.validate().is_ok());
    layout
}

/// Sites of one n-input NAND gate: one inverter row stack per input, spaced
/// [`ROW_PITCH_UM`] apart vertically, all sharing the gate's x extent.
fn nand_sites(
    origin: Point,
    gate: GateId,
    n_inputs: u8,
    nmos_coupling: f64,
) -> Result<Vec<TransistorSite>> {
    let mut sites = Vec::new();
    for input in 0..n_inputs {
        let row = origin.translated(0.0, input as f64 * ROW_PITCH_UM);
        sites.extend(inverter_sites(row, gate, input, nmos_coupling)?);
    }
    Ok(sites)
}

fn nand_bounds(origin: Point, n_inputs: u8) -> Result<Rect> {
    Rect::new(
        origin.x,
        origin.y,
        origin.x + GATE_WIDTH_UM,
        origin.y + (n_inputs - 1) as f64 * ROW_PITCH_UM + PMOS_ROW_LIFT_UM + SITE_EDGE_UM,
    )
}

/// A standalone NAND cell with 2 or 3 inputs.
pub fn build_nand_layout(n_inputs: u8) -> Result<CellLayout> {
    if !(2..=3).contains(&n_inputs) {
        return Err(Error::invalid(format!(
            "NAND cells support 2 or 3 inputs, got {n_inputs}"
        )));
    }
    let origin = Point::new(0.0, 0.0);
    let gate = GateId { ff: 0, label: 1 };
    let mut children = Vec::new();
    for input in 0..n_inputs {
        let off = origin.translated(0.0, input as f64 * ROW_PITCH_UM);
        children.push(Placement {
            name: format!("in{input}"),
            offset: off,
            bounds: inverter_bounds(off)?,
        });
    }
    let layout = CellLayout {
        bounds: nand_bounds(origin, n_inputs)?,
        sites: nand_sites(origin, gate, n_inputs, 1.0)?,
        fillers: Vec::new(),
        children,
    };
    layout.validate()?;
    Ok(layout)
}

/// Sites and child placements of one flip-flop with its local origin at
/// `origin`, labelled as flip-flop `ff`.
fn flipflop_parts(origin: Point, ff: u32) -> Result<(Vec<TransistorSite>, Vec<Placement>)> {
    let mut sites = Vec::new();
    let mut children = Vec::new();
    for (idx, &arity) in GATE_ARITY.iter().enumerate() {
        let label = idx as u8 + 1;
        let gate = GateId { ff, label };
        let gate_origin =
            origin.translated(GATE_X0_UM + idx as f64 * GATE_PITCH_UM, GATE_Y0_UM);
        // The clear-a-one pull-down paths run through G1 and G5; their NMOS
        // rows couple to the beam more weakly than the rest of the cell.
        let nmos_coupling = if label == 1 || label == 5 { RESET_PATH_COUPLING } else { 1.0 };
        sites.extend(nand_sites(gate_origin, gate, arity, nmos_coupling)?);
        children.push(Placement {
            name: format!("G{label}"),
            offset: gate_origin,
            bounds: nand_bounds(gate_origin, arity)?,
        });
    }
    Ok((sites, children))
}

/// A single flip-flop cell: six NAND gates (labels `G1..G6`), 28 transistor
/// pairs, 56 gate sites.
pub fn build_flipflop_layout() -> CellLayout {
    let origin = Point::new(0.0, 0.0);
    let (sites, children) = flipflop_parts(origin, 0).expect("static flip-flop geometry");
    let layout = CellLayout {
        bounds: Rect::new(0.0, 0.0, FF_WIDTH_UM, FF_HEIGHT_UM).expect("static flip-flop bounds"),
        sites,
        fillers: Vec::new(),
        children,
    };
    debug_assert!(layout.validate().is_ok());
    layout
}

/// A shift-register cell of `n_ff` flip-flops tiled left to right.
pub fn build_register_layout(n_ff: u32) -> Result<CellLayout> {
    if n_ff == 0 {
        return Err(Error::invalid("a register needs at least one flip-flop"));
    }
    let mut sites = Vec::new();
    let mut children = Vec::new();
    for ff in 0..n_ff {
        let origin = Point::new(ff as f64 * FF_WIDTH_UM, 0.0);
        let (ff_sites, _) = flipflop_parts(origin, ff)?;
        sites.extend(ff_sites);
        children.push(Placement {
            name: format!("ff{ff}"),
            offset: origin,
            bounds: Rect::new(origin.x, 0.0, origin.x + FF_WIDTH_UM, FF_HEIGHT_UM)?,
        });
    }
    let layout = CellLayout {
        bounds: Rect::new(0.0, 0.0, n_ff as f64 * FF_WIDTH_UM, FF_HEIGHT_UM)?,
        sites,
        fillers: Vec::new(),
        children,
    };
    layout.validate()?;
    Ok(layout)
}

/// Copy of `layout` with a centred regular grid of opaque filler squares
/// added over the whole cell. Grids that do not fit yield zero or one
/// columns/rows; existing fillers and all sites are kept unchanged.
pub fn generate_fillers(layout: &CellLayout, spec: &FillerSpec) -> Result<CellLayout> {
    spec.validate()?;
    let xs = centred_run(layout.bounds.x0, layout.bounds.x1, spec.width_um, spec.gap_um);
    let ys = centred_run(layout.bounds.y0, layout.bounds.y1, spec.height_um, spec.gap_um);
    let mut out = layout.clone();
    for &y in &ys {
        for &x in &xs {
            out.fillers.push(Rect::new(x, y, x + spec.width_um, y + spec.height_um)?);
        }
    }
    Ok(out)
}

/// Left edges of as many `size`-wide tiles (separated by `gap`) as fit in
/// `[lo, hi]`, centred in the interval.
fn centred_run(lo: f64, hi: f64, size: f64, gap: f64) -> Vec<f64> {
    let extent = hi - lo;
    let pitch = size + gap;
    let n = ((extent + gap + COORD_EPS) / pitch).floor() as i64;
    if n <= 0 {
        return Vec::new();
    }
    let span = n as f64 * size + (n - 1) as f64 * gap;
    let start = lo + (extent - span) / 2.0;
    (0..n).map(|k| start + k as f64 * pitch).collect()
}

/// Copy of `layout` with one extra filler covering exactly the gate region of
/// `site` — the shielding countermeasure applied to a single transistor half.
pub fn place_filler_over_site(layout: &CellLayout, site: &SiteId) -> Result<CellLayout> {
    let found = layout
        .sites
        .iter()
        .find(|s| s.id == *site)
        .ok_or_else(|| Error::not_found(format!("site {site} is not in this layout")))?;
    let mut out = layout.clone();
    out.fillers.push(found.gate_region);
    Ok(out)
}
