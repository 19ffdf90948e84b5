//! Scan and escalation campaigns: sensitivity maps over a shot-centre grid,
//! the power/duration/objective escalation ladder, connected sensitive-region
//! extraction, and summary reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::beam::{BeamShot, Objective, SpotModel, MIN_PULSE_NS};
use crate::circuit::{
    default_fire_cycle, fire_window, ForcedState, Trace, TraceSpec, DEFAULT_CLOCK_MHZ,
};
use crate::fault::{
    classify, effective_pairs, opened_sites, pair_strength_field, FaultOutcome, FaultThresholds,
    PairStrength, PMOS_THRESHOLD_RATIO,
};
use crate::geom::{grid_coords, Point, Rect, COORD_EPS};
use crate::layout::{Channel, GateId};
use crate::model::RegisterModel;
use crate::{Error, Result};

/// Default scan grid step (µm).
pub const DEFAULT_GRID_STEP_UM: f64 = 0.5;
/// Default margin added around the target cell when covering it (µm).
pub const DEFAULT_GRID_MARGIN_UM: f64 = 2.0;

/// A rectangular grid of shot centres, inclusive of both corners.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub first: Point,
    pub last: Point,
    pub step_um: f64,
}

impl ScanGrid {
    /// Grid covering `rect` plus `margin` on every side.
    pub fn covering(rect: &Rect, margin_um: f64, step_um: f64) -> Result<ScanGrid> {
        if !(margin_um.is_finite() && margin_um >= 0.0) {
            return Err(Error::invalid(format!("grid margin must be >= 0, got {margin_um}")));
        }
        let grown = rect.expanded(margin_um);
        let grid = ScanGrid {
            first: Point::new(grown.x0, grown.y0),
            last: Point::new(grown.x1, grown.y1),
            step_um,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_um.is_finite() && self.step_um > 0.0) {
            return Err(Error::invalid(format!("grid step must be positive, got {}", self.step_um)));
        }
        if self.last.x < self.first.x || self.last.y < self.first.y {
            return Err(Error::invalid("grid corners are inverted".to_string()));
        }
        Ok(())
    }

    pub fn xs(&self) -> Vec<f64> {
        grid_coords(self.first.x, self.last.x, self.step_um).expect("validated grid")
    }

    pub fn ys(&self) -> Vec<f64> {
        grid_coords(self.first.y, self.last.y, self.step_um).expect("validated grid")
    }

    pub fn nx(&self) -> usize {
        self.xs().len()
    }

    pub fn ny(&self) -> usize {
        self.ys().len()
    }

    /// All centres in row-major order (y outer ascending, x inner ascending);
    /// the cell at `(ix, iy)` has index `iy·nx + ix`.
    pub fn points(&self) -> Vec<Point> {
        let xs = self.xs();
        self.ys()
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| Point::new(x, y)))
            .collect()
    }
}

/// Fixed shot parameters of one scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub magnification: u32,
    pub spot_model: SpotModel,
    pub power_fraction: f64,
    pub duration_ns: f64,
    /// Bit preloaded into every stage and held on the data input.
    pub input_bit: bool,
    pub clock_mhz: f64,
}

impl ScanParams {
    fn validate(&self) -> Result<()> {
        Objective::by_magnification(self.magnification)?;
        if !(0.0..=1.0).contains(&self.power_fraction) {
            return Err(Error::invalid(format!(
                "power fraction must lie in [0, 1], got {}",
                self.power_fraction
            )));
        }
        if !(self.duration_ns.is_finite() && self.duration_ns >= MIN_PULSE_NS) {
            return Err(Error::invalid(format!(
                "pulse duration must be at least {MIN_PULSE_NS} ns, got {}",
                self.duration_ns
            )));
        }
        if !crate::circuit::STANDARD_CLOCKS_MHZ.contains(&self.clock_mhz) {
            return Err(Error::invalid(format!(
                "scan clock {} MHz is not one of the supported rates {:?}",
                self.clock_mhz,
                crate::circuit::STANDARD_CLOCKS_MHZ
            )));
        }
        Ok(())
    }
}

/// Colour assigned to each outcome in map images (RGB).
pub const COLOR_MAP: [(FaultOutcome, [u8; 3]); 6] = [
    (FaultOutcome::None, [236, 236, 236]),
    (FaultOutcome::BitSet, [217, 72, 47]),
    (FaultOutcome::BitReset, [247, 198, 35]),
    (FaultOutcome::StuckAt, [58, 116, 196]),
    (FaultOutcome::Permanent, [40, 40, 40]),
    (FaultOutcome::Unstable, [142, 68, 173]),
];

fn color_of(outcome: FaultOutcome) -> [u8; 3] {
    COLOR_MAP
        .iter()
        .find(|(o, _)| *o == outcome)
        .map(|(_, c)| *c)
        .expect("every outcome has a colour")
}

/// Outcome of shooting every grid centre with one fixed parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMap {
    pub grid: ScanGrid,
    pub params: ScanParams,
    pub target_ff: u32,
    /// Row-major outcomes, index `iy·nx + ix`.
    pub cells: Vec<FaultOutcome>,
    /// Set when the scan could not observe anything (e.g. the grid misses
    /// the cell geometry entirely).
    pub warning: Option<String>,
}

impl SensitivityMap {
    pub fn cell(&self, ix: usize, iy: usize) -> FaultOutcome {
        self.cells[iy * self.grid.nx() + ix]
    }

    /// Histogram of outcomes over the map.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for c in &self.cells {
            *counts.entry(c.to_string()).or_insert(0) += 1;
        }
        counts
    }

    /// Writes `x_um,y_um,outcome` rows in grid order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x_um,y_um,outcome")?;
        let xs = self.grid.xs();
        let ys = self.grid.ys();
        for (iy, y) in ys.iter().enumerate() {
            for (ix, x) in xs.iter().enumerate() {
                writeln!(out, "{x},{y},{}", self.cells[iy * xs.len() + ix])?;
            }
        }
        Ok(())
    }

    /// Writes a binary pixmap (`P6`), one pixel per grid cell, top row =
    /// largest y, using [`COLOR_MAP`].
    pub fn write_ppm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let nx = self.grid.nx();
        let ny = self.grid.ny();
        write!(out, "P6\n{nx} {ny}\n255\n")?;
        let mut row = Vec::with_capacity(nx * 3);
        for iy in (0..ny).rev() {
            row.clear();
            for ix in 0..nx {
                row.extend_from_slice(&color_of(self.cells[iy * nx + ix]));
            }
            out.write_all(&row)?;
        }
        Ok(())
    }
}

/// Shared trace/outcome evaluator with memoization. One engine serves a
/// whole scan or escalation, so identical forced sets are simulated once.
struct OutcomeEngine<'a> {
    model: &'a RegisterModel,
    clock_mhz: f64,
    references: HashMap<(bool, u64), Trace>,
    memo: HashMap<(bool, u64, Vec<crate::layout::PairId>, Vec<crate::layout::PairId>), FaultOutcome>,
}

impl<'a> OutcomeEngine<'a> {
    fn new(model: &'a RegisterModel, clock_mhz: f64) -> Self {
        OutcomeEngine { model, clock_mhz, references: HashMap::new(), memo: HashMap::new() }
    }

    fn spec(&self, input_bit: bool) -> TraceSpec {
        TraceSpec {
            clock_mhz: self.clock_mhz,
            input_bit,
            n_cycles: crate::circuit::default_cycles(self.model.n_stages()),
            allow_nonstandard_clock: false,
        }
    }

    fn window(&self, duration_ns: f64) -> (f64, f64) {
        fire_window(self.clock_mhz, default_fire_cycle(self.model.n_stages()), duration_ns)
    }

    fn reference(&mut self, input_bit: bool, duration_ns: f64) -> Result<Trace> {
        let key = (input_bit, duration_ns.to_bits());
        if let Some(t) = self.references.get(&key) {
            return Ok(t.clone());
        }
        let (start, end) = self.window(duration_ns);
        let idle = ForcedState::default().with_window(start, end, 0.0);
        let mut reg = self.model.register.clone();
        let trace = reg.run_trace(&self.spec(input_bit), Some(&idle))?;
        self.references.insert(key, trace.clone());
        Ok(trace)
    }

    /// Classifies the forcing of `forced` during the standard fire window.
    /// The model has no damage mechanism, so the reference doubles as the
    /// post-reset re-run.
    fn outcome(
        &mut self,
        input_bit: bool,
        duration_ns: f64,
        forced: &ForcedState,
        laser_power: f64,
    ) -> Result<FaultOutcome> {
        if forced.is_empty() {
            return Ok(FaultOutcome::None);
        }
        let key = (
            input_bit,
            duration_ns.to_bits(),
            forced.open_nmos.iter().copied().collect::<Vec<_>>(),
            forced.open_pmos.iter().copied().collect::<Vec<_>>(),
        );
        if let Some(&hit) = self.memo.get(&key) {
            return Ok(hit);
        }
        let reference = self.reference(input_bit, duration_ns)?;
        let (start, end) = self.window(duration_ns);
        let armed = forced.clone().with_window(start, end, laser_power);
        let mut reg = self.model.register.clone();
        let observed = reg.run_trace(&self.spec(input_bit), Some(&armed))?;
        let outcome = classify(&reference, &observed, &reference)?;
        self.memo.insert(key, outcome);
        Ok(outcome)
    }
}

/// Pairs opened at `power` out of one centre's strength list. PMOS strengths
/// compare against the PMOS threshold.
fn forced_at_power(
    list: &[PairStrength],
    power: f64,
    thresholds: &FaultThresholds,
) -> ForcedState {
    let mut forced = ForcedState::default();
    for s in list {
        let open = match s.channel {
            Channel::Nmos => power * s.strength >= thresholds.i_crit_nmos,
            Channel::Pmos => power * s.strength >= thresholds.i_crit_pmos,
        };
        if open {
            match s.channel {
                Channel::Nmos => forced.open_nmos.insert(s.pair),
                Channel::Pmos => forced.open_pmos.insert(s.pair),
            };
        }
    }
    forced
}

/// Strength-field floor for scans up to `max_power`: pairs weaker than this
/// can never open at any usable drive.
fn field_floor(max_power: f64, thresholds: &FaultThresholds) -> f64 {
    if max_power <= 0.0 {
        return f64::INFINITY;
    }
    // PMOS entries are kept down to the same level; they simply never open
    // when compared against the higher PMOS threshold.
    thresholds.i_crit_nmos.min(thresholds.i_crit_pmos / PMOS_THRESHOLD_RATIO) / max_power
}

/// Shoots every centre of `grid` at the target flip-flop's register with the
/// fixed parameters and classifies each outcome.
///
/// Centres whose shot opens no pair are classified [`FaultOutcome::None`]
/// without tracing. A grid that never touches the cell geometry yields an
/// all-`none` map carrying a warning. Equal inputs give equal maps.
pub fn scan(
    model: &RegisterModel,
    target_ff: u32,
    grid: &ScanGrid,
    params: &ScanParams,
    thresholds: &FaultThresholds,
) -> Result<SensitivityMap> {
    params.validate()?;
    grid.validate()?;
    if target_ff >= model.n_stages() {
        return Err(Error::invalid(format!(
            "target flip-flop {target_ff} does not exist in a {}-stage register",
            model.n_stages()
        )));
    }
    let centers = grid.points();
    if !centers.iter().any(|c| model.layout.bounds.contains(*c)) {
        return Ok(SensitivityMap {
            grid: *grid,
            params: *params,
            target_ff,
            cells: vec![FaultOutcome::None; centers.len()],
            warning: Some(format!(
                "scan grid [{:?} .. {:?}] lies entirely outside the cell bounds {:?}",
                grid.first, grid.last, model.layout.bounds
            )),
        });
    }

    let waist = Objective::by_magnification(params.magnification)?
        .waist_um(params.spot_model);
    let field = pair_strength_field(
        &model.layout,
        &centers,
        waist,
        field_floor(params.power_fraction, thresholds),
    );
    let mut engine = OutcomeEngine::new(model, params.clock_mhz);
    let mut cells = Vec::with_capacity(centers.len());
    for list in &field {
        let forced = forced_at_power(list, params.power_fraction, thresholds);
        cells.push(engine.outcome(
            params.input_bit,
            params.duration_ns,
            &forced,
            params.power_fraction,
        )?);
    }
    Ok(SensitivityMap { grid: *grid, params: *params, target_ff, cells, warning: None })
}

/// The power / duration / objective escalation ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscalationLadder {
    pub power_start: f64,
    pub power_step: f64,
    pub power_end: f64,
    /// Pulse durations tried at each power, in the given (ascending) order.
    pub durations_ns: Vec<f64>,
    /// Objectives tried in this order; each runs its own ladder.
    pub magnifications: Vec<u32>,
}

impl Default for EscalationLadder {
    fn default() -> Self {
        EscalationLadder {
            power_start: 0.10,
            power_step: 0.05,
            power_end: 1.0,
            durations_ns: vec![50.0, 100.0, 500.0, 1000.0],
            magnifications: vec![5, 20, 50, 100],
        }
    }
}

impl EscalationLadder {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.power_start)
            || !(0.0..=1.0).contains(&self.power_end)
            || self.power_end < self.power_start
        {
            return Err(Error::invalid(format!(
                "power ladder [{}, {}] must be an increasing range within [0, 1]",
                self.power_start, self.power_end
            )));
        }
        if !(self.power_step.is_finite() && self.power_step > 0.0) {
            return Err(Error::invalid(format!(
                "power step must be positive, got {}",
                self.power_step
            )));
        }
        if self.durations_ns.is_empty() {
            return Err(Error::invalid("the ladder needs at least one pulse duration"));
        }
        for &d in &self.durations_ns {
            if !(d.is_finite() && d >= MIN_PULSE_NS) {
                return Err(Error::invalid(format!(
                    "ladder duration {d} ns is below the {MIN_PULSE_NS} ns minimum"
                )));
            }
        }
        if self.durations_ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("ladder durations must be strictly ascending"));
        }
        if self.magnifications.is_empty() {
            return Err(Error::invalid("the ladder needs at least one objective"));
        }
        let mut seen = BTreeSet::new();
        for &m in &self.magnifications {
            Objective::by_magnification(m)?;
            if !seen.insert(m) {
                return Err(Error::invalid(format!("objective {m}x appears twice in the ladder")));
            }
        }
        Ok(())
    }

    /// The drive levels of the ladder, ascending and inclusive of the end.
    pub fn powers(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0u32;
        loop {
            let p = self.power_start + k as f64 * self.power_step;
            if p > self.power_end + COORD_EPS {
                break;
            }
            out.push(p.min(1.0));
            k += 1;
        }
        out
    }
}

/// One rung of the ladder that was tried.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub power_fraction: f64,
    pub duration_ns: f64,
    /// Grid centres whose shot opened at least one pair at this power.
    pub candidate_cells: usize,
}

/// The first successful shot of one objective run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessRecord {
    pub power_fraction: f64,
    pub duration_ns: f64,
    pub center: Point,
    pub outcome: FaultOutcome,
    /// Whether replaying the exact shot through the full site-opening
    /// pipeline reproduced the same pair set and classification.
    pub repeat_confirmed: bool,
}

/// The ladder walk of one (objective, preloaded bit) combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRun {
    pub magnification: u32,
    pub input_bit: bool,
    pub attempts: Vec<Attempt>,
    pub success: Option<SuccessRecord>,
}

/// Everything one escalation campaign produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub spot_model: SpotModel,
    pub clock_mhz: f64,
    pub target_ff: u32,
    pub n_stages: u32,
    pub grid: ScanGrid,
    pub thresholds: FaultThresholds,
    pub ladder: EscalationLadder,
    pub runs: Vec<ObjectiveRun>,
}

/// Walks the escalation ladder for both preloaded bits and every objective:
/// powers ascend in the outer loop, durations in the inner loop, and the
/// first centre (in grid order) whose outcome is not `none` ends that
/// objective's run. The successful shot is replayed through the full
/// single-shot pipeline to confirm repeatability.
pub fn escalate(
    model: &RegisterModel,
    target_ff: u32,
    grid: &ScanGrid,
    ladder: &EscalationLadder,
    spot_model: SpotModel,
    thresholds: &FaultThresholds,
) -> Result<CampaignResult> {
    ladder.validate()?;
    grid.validate()?;
    if target_ff >= model.n_stages() {
        return Err(Error::invalid(format!(
            "target flip-flop {target_ff} does not exist in a {}-stage register",
            model.n_stages()
        )));
    }
    let centers = grid.points();
    let powers = ladder.powers();
    let max_power = powers.last().copied().unwrap_or(0.0);
    let mut engine = OutcomeEngine::new(model, DEFAULT_CLOCK_MHZ);
    let mut fields: HashMap<u32, Vec<Vec<PairStrength>>> = HashMap::new();
    let mut runs = Vec::new();

    for input_bit in [false, true] {
        for &mag in &ladder.magnifications {
            let waist = Objective::by_magnification(mag)?.waist_um(spot_model);
            let field = fields.entry(mag).or_insert_with(|| {
                pair_strength_field(
                    &model.layout,
                    &centers,
                    waist,
                    field_floor(max_power, thresholds),
                )
            });
            let mut run =
                ObjectiveRun { magnification: mag, input_bit, attempts: Vec::new(), success: None };
            'ladder: for &p in &powers {
                for &d in &ladder.durations_ns {
                    let mut candidates = 0usize;
                    let mut hit: Option<(usize, ForcedState, FaultOutcome)> = None;
                    for (i, list) in field.iter().enumerate() {
                        let forced = forced_at_power(list, p, thresholds);
                        if forced.is_empty() {
                            continue;
                        }
                        candidates += 1;
                        if hit.is_none() {
                            let outcome = engine.outcome(input_bit, d, &forced, p)?;
                            if outcome != FaultOutcome::None {
                                hit = Some((i, forced, outcome));
                            }
                        }
                    }
                    run.attempts.push(Attempt {
                        power_fraction: p,
                        duration_ns: d,
                        candidate_cells: candidates,
                    });
                    if let Some((idx, forced, outcome)) = hit {
                        let center = centers[idx];
                        let confirmed = confirm_shot(
                            model,
                            &mut engine,
                            mag,
                            spot_model,
                            center,
                            p,
                            d,
                            input_bit,
                            thresholds,
                            &forced,
                            outcome,
                        )?;
                        run.success = Some(SuccessRecord {
                            power_fraction: p,
                            duration_ns: d,
                            center,
                            outcome,
                            repeat_confirmed: confirmed,
                        });
                        break 'ladder;
                    }
                }
            }
            runs.push(run);
        }
    }

    Ok(CampaignResult {
        spot_model,
        clock_mhz: DEFAULT_CLOCK_MHZ,
        target_ff,
        n_stages: model.n_stages(),
        grid: *grid,
        thresholds: *thresholds,
        ladder: ladder.clone(),
        runs,
    })
}

/// Replays one successful shot through the full pipeline (site opening →
/// pair blocking → trace → classification) and checks it reproduces the
/// scan's forced set and outcome.
#[allow(clippy::too_many_arguments)]
fn confirm_shot(
    model: &RegisterModel,
    engine: &mut OutcomeEngine,
    magnification: u32,
    spot_model: SpotModel,
    center: Point,
    power_fraction: f64,
    duration_ns: f64,
    input_bit: bool,
    thresholds: &FaultThresholds,
    expected_forced: &ForcedState,
    expected_outcome: FaultOutcome,
) -> Result<bool> {
    let shot = BeamShot::new(magnification, spot_model, center, power_fraction, duration_ns)?;
    let opened = opened_sites(&shot, &model.layout, thresholds);
    let forced = effective_pairs(&opened, &model.layout);
    if forced.open_nmos != expected_forced.open_nmos
        || forced.open_pmos != expected_forced.open_pmos
    {
        return Ok(false);
    }
    let outcome = engine.outcome(input_bit, duration_ns, &forced, power_fraction)?;
    Ok(outcome == expected_outcome)
}

/// A 4-connected group of equal-outcome map cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitiveRegion {
    pub outcome: FaultOutcome,
    pub cell_count: usize,
    /// Union of the cell squares (each centre ± step/2).
    pub bbox: Rect,
    /// Mean of the member cell centres.
    pub centroid: Point,
    /// Gates whose site bounding box overlaps any member cell square.
    pub gates: Vec<GateId>,
}

/// Extracts the connected non-`none` regions of a map, in scan order of
/// their first cell. Cells connect through their 4-neighbourhood and only
/// within one outcome class.
pub fn sensitive_areas(map: &SensitivityMap, layout: &crate::layout::CellLayout) -> Vec<SensitiveRegion> {
    let nx = map.grid.nx();
    let ny = map.grid.ny();
    let xs = map.grid.xs();
    let ys = map.grid.ys();
    let half = map.grid.step_um / 2.0;
    let gate_boxes: Vec<(GateId, Rect)> = {
        let mut gates: Vec<GateId> = layout.sites.iter().map(|s| s.gate_id).collect();
        gates.sort_unstable();
        gates.dedup();
        gates
            .into_iter()
            .map(|g| (g, layout.gate_bounding_box(g).expect("gate has sites")))
            .collect()
    };

    let mut seen = vec![false; map.cells.len()];
    let mut regions = Vec::new();
    for start in 0..map.cells.len() {
        if seen[start] || map.cells[start] == FaultOutcome::None {
            continue;
        }
        let outcome = map.cells[start];
        let mut stack = vec![start];
        let mut members = Vec::new();
        seen[start] = true;
        while let Some(idx) = stack.pop() {
            members.push(idx);
            let (ix, iy) = (idx % nx, idx / nx);
            let mut push = |jx: usize, jy: usize| {
                let j = jy * nx + jx;
                if !seen[j] && map.cells[j] == outcome {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if ix > 0 {
                push(ix - 1, iy);
            }
            if ix + 1 < nx {
                push(ix + 1, iy);
            }
            if iy > 0 {
                push(ix, iy - 1);
            }
            if iy + 1 < ny {
                push(ix, iy + 1);
            }
        }
        members.sort_unstable();

        let mut sum = Point::new(0.0, 0.0);
        let mut bbox: Option<Rect> = None;
        let mut gates: BTreeSet<GateId> = BTreeSet::new();
        for &idx in &members {
            let center = Point::new(xs[idx % nx], ys[idx / nx]);
            sum.x += center.x;
            sum.y += center.y;
            let square = Rect::from_center(center, 2.0 * half, 2.0 * half)
                .expect("positive grid step");
            bbox = Some(match bbox {
                None => square,
                Some(b) => b.union(&square),
            });
            for (gate, gbox) in &gate_boxes {
                if gbox.overlaps(&square) {
                    gates.insert(*gate);
                }
            }
        }
        let n = members.len() as f64;
        regions.push(SensitiveRegion {
            outcome,
            cell_count: members.len(),
            bbox: bbox.expect("region has at least one cell"),
            centroid: Point::new(sum.x / n, sum.y / n),
            gates: gates.into_iter().collect(),
        });
    }
    regions
}

/// One row of the campaign summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub magnification: u32,
    /// `"0"`, `"1"`, or `"0 or 1"` when both preloads behaved identically.
    pub input: String,
    pub outcome: FaultOutcome,
    pub onset_power_fraction: Option<f64>,
    pub onset_duration_ns: Option<f64>,
    /// Power range that was tried (min, max).
    pub powers_tested: (f64, f64),
    /// Duration range that was tried (min, max).
    pub durations_tested_ns: (f64, f64),
}

/// The campaign summary: one row per objective and distinguishable preload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub spot_model: SpotModel,
    pub clock_mhz: f64,
    pub target_ff: u32,
    pub n_stages: u32,
    pub rows: Vec<ReportRow>,
}

/// Collapses a campaign into the summary table: objectives in descending
/// magnification; the two preloads merge into one `"0 or 1"` row when
/// neither produced an effect, and otherwise appear as separate rows with
/// their onset parameters.
pub fn summarize(result: &CampaignResult) -> CampaignReport {
    let mut mags: Vec<u32> = result.runs.iter().map(|r| r.magnification).collect();
    mags.sort_unstable_by(|a, b| b.cmp(a));
    mags.dedup();

    let mut rows = Vec::new();
    for mag in mags {
        let of_mag: Vec<&ObjectiveRun> =
            result.runs.iter().filter(|r| r.magnification == mag).collect();
        let tested = |runs: &[&ObjectiveRun]| {
            let mut p_min = f64::INFINITY;
            let mut p_max = f64::NEG_INFINITY;
            let mut d_min = f64::INFINITY;
            let mut d_max = f64::NEG_INFINITY;
            for run in runs {
                for a in &run.attempts {
                    p_min = p_min.min(a.power_fraction);
                    p_max = p_max.max(a.power_fraction);
                    d_min = d_min.min(a.duration_ns);
                    d_max = d_max.max(a.duration_ns);
                }
            }
            ((p_min, p_max), (d_min, d_max))
        };
        if of_mag.iter().all(|r| r.success.is_none()) {
            let ((p_min, p_max), (d_min, d_max)) = tested(&of_mag);
            rows.push(ReportRow {
                magnification: mag,
                input: "0 or 1".to_string(),
                outcome: FaultOutcome::None,
                onset_power_fraction: None,
                onset_duration_ns: None,
                powers_tested: (p_min, p_max),
                durations_tested_ns: (d_min, d_max),
            });
            continue;
        }
        for run in of_mag {
            let ((p_min, p_max), (d_min, d_max)) = tested(&[run]);
            let (outcome, onset_p, onset_d) = match &run.success {
                Some(s) => (s.outcome, Some(s.power_fraction), Some(s.duration_ns)),
                None => (FaultOutcome::None, None, None),
            };
            rows.push(ReportRow {
                magnification: run.magnification,
                input: if run.input_bit { "1" } else { "0" }.to_string(),
                outcome,
                onset_power_fraction: onset_p,
                onset_duration_ns: onset_d,
                powers_tested: (p_min, p_max),
                durations_tested_ns: (d_min, d_max),
            });
        }
    }
    CampaignReport {
        spot_model: result.spot_model,
        clock_mhz: result.clock_mhz,
        target_ff: result.target_ff,
        n_stages: result.n_stages,
        rows,
    }
}

/// Renders the summary as an aligned text table.
pub fn render_report_table(report: &CampaignReport) -> String {
    let mut lines = Vec::new();
    lines.push(format!(
        "target ff{} of {} stages, {} spots, {} MHz clock",
        report.target_ff, report.n_stages, report.spot_model, report.clock_mhz
    ));
    lines.push(format!(
        "{:<10} {:<8} {:<10} {:<14} {:<14} {}",
        "objective", "input", "outcome", "onset power", "onset width", "tested"
    ));
    for row in &report.rows {
        let onset_p = row
            .onset_power_fraction
            .map(|p| format!("{:.0}%", p * 100.0))
            .unwrap_or_else(|| "-".to_string());
        let onset_d = row
            .onset_duration_ns
            .map(|d| format!("{d} ns"))
            .unwrap_or_else(|| "-".to_string());
        lines.push(format!(
            "{:<10} {:<8} {:<10} {:<14} {:<14} {:.0}%-{:.0}%, {}-{} ns",
            format!("{}x", row.magnification),
            row.input,
            row.outcome.to_string(),
            onset_p,
            onset_d,
            row.powers_tested.0 * 100.0,
            row.powers_tested.1 * 100.0,
            row.durations_tested_ns.0,
            row.durations_tested_ns.1,
        ));
    }
    lines.push(String::new());
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::calibrate_default;
    use crate::layout::build_flipflop_layout;

    fn calibrated_model() -> (RegisterModel, FaultThresholds) {
        let model = RegisterModel::new(1).unwrap();
        let cal = calibrate_default(&build_flipflop_layout(), SpotModel::Measured).unwrap();
        (model, cal.thresholds)
    }

    fn params(power: f64, duration: f64, input: bool) -> ScanParams {
        ScanParams {
            magnification: 20,
            spot_model: SpotModel::Measured,
            power_fraction: power,
            duration_ns: duration,
            input_bit: input,
            clock_mhz: 2.0,
        }
    }

    #[test]
    fn grid_covering_is_inclusive_and_ordered() {
        let rect = Rect::new(0.0, 0.0, 82.0, 20.0).unwrap();
        let grid = ScanGrid::covering(&rect, 2.0, 0.5).unwrap();
        assert_eq!(grid.nx(), 173);
        assert_eq!(grid.ny(), 49);
        let pts = grid.points();
        assert_eq!(pts.len(), 173 * 49);
        assert_eq!(pts[0], Point::new(-2.0, -2.0));
        assert_eq!(pts[1], Point::new(-1.5, -2.0), "x varies fastest");
        assert_eq!(*pts.last().unwrap(), Point::new(84.0, 22.0));
        assert!(ScanGrid::covering(&rect, 2.0, 0.0).is_err());
        assert!(ScanGrid::covering(&rect, -1.0, 0.5).is_err());
    }

    #[test]
    fn ladder_defaults_and_validation() {
        let ladder = EscalationLadder::default();
        ladder.validate().unwrap();
        let powers = ladder.powers();
        assert_eq!(powers.len(), 19);
        assert_eq!(powers[0], 0.10);
        assert!((powers[18] - 1.0).abs() < 1e-12);
        assert_eq!(ladder.durations_ns, vec![50.0, 100.0, 500.0, 1000.0]);
        assert_eq!(ladder.magnifications, vec![5, 20, 50, 100]);

        let mut bad = EscalationLadder::default();
        bad.power_step = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = EscalationLadder::default();
        bad.durations_ns = vec![100.0, 50.0];
        assert!(bad.validate().is_err());
        let mut bad = EscalationLadder::default();
        bad.magnifications = vec![20, 20];
        assert!(bad.validate().is_err());
        let mut bad = EscalationLadder::default();
        bad.durations_ns = vec![1.0];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scan_outside_geometry_warns_and_reads_none() {
        let (model, th) = calibrated_model();
        let grid = ScanGrid {
            first: Point::new(500.0, 500.0),
            last: Point::new(510.0, 505.0),
            step_um: 0.5,
        };
        let map = scan(&model, 0, &grid, &params(1.0, 50.0, false), &th).unwrap();
        assert!(map.warning.is_some());
        assert!(map.cells.iter().all(|c| *c == FaultOutcome::None));
    }

    #[test]
    fn scan_at_zero_power_is_all_none() {
        let (model, th) = calibrated_model();
        let grid = ScanGrid::covering(&model.layout.bounds, 0.0, 4.0).unwrap();
        let map = scan(&model, 0, &grid, &params(0.0, 50.0, false), &th).unwrap();
        assert!(map.warning.is_none());
        assert!(map.cells.iter().all(|c| *c == FaultOutcome::None));
    }

    #[test]
    fn scan_rejects_bad_targets_and_params() {
        let (model, th) = calibrated_model();
        let grid = ScanGrid::covering(&model.layout.bounds, 0.0, 4.0).unwrap();
        assert!(scan(&model, 5, &grid, &params(0.5, 50.0, false), &th).is_err());
        assert!(scan(&model, 0, &grid, &params(1.5, 50.0, false), &th).is_err());
        assert!(scan(&model, 0, &grid, &params(0.5, 1.0, false), &th).is_err());
    }

    #[test]
    fn set_scan_finds_regions_on_the_set_gates_only() {
        let (model, th) = calibrated_model();
        let grid = ScanGrid::covering(&model.layout.bounds, 2.0, 0.5).unwrap();
        let map = scan(&model, 0, &grid, &params(0.45, 50.0, false), &th).unwrap();
        let regions = sensitive_areas(&map, &model.layout);
        assert!(!regions.is_empty());
        let mut labels = BTreeSet::new();
        for r in &regions {
            assert_eq!(r.outcome, FaultOutcome::BitSet);
            for g in &r.gates {
                labels.insert(g.label);
            }
            // Every region must hug its gate: centroid within 3 µm of the
            // gate's site-box centre.
            assert_eq!(r.gates.len(), 1, "one gate per region: {:?}", r.gates);
            let gbox = model.layout.gate_bounding_box(r.gates[0]).unwrap();
            assert!(r.centroid.distance_to(gbox.center()) <= 3.0);
        }
        assert_eq!(labels.into_iter().collect::<Vec<_>>(), vec![2, 6]);
    }

    #[test]
    fn scans_are_deterministic_byte_for_byte() {
        let (model, th) = calibrated_model();
        let grid = ScanGrid {
            first: Point::new(70.0, 3.0),
            last: Point::new(79.0, 8.0),
            step_um: 0.5,
        };
        let p = params(0.45, 50.0, false);
        let a = scan(&model, 0, &grid, &p, &th).unwrap();
        let b = scan(&model, 0, &grid, &p, &th).unwrap();
        assert_eq!(a, b);
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        a.write_csv(&mut csv_a).unwrap();
        b.write_csv(&mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
        let mut ppm = Vec::new();
        a.write_ppm(&mut ppm).unwrap();
        let header = format!("P6\n{} {}\n255\n", grid.nx(), grid.ny());
        assert!(ppm.starts_with(header.as_bytes()));
        assert_eq!(ppm.len(), header.len() + grid.nx() * grid.ny() * 3);
    }

    #[test]
    fn map_csv_lists_every_cell_in_grid_order() {
        let (model, th) = calibrated_model();
        let grid = ScanGrid {
            first: Point::new(0.0, 0.0),
            last: Point::new(2.0, 1.0),
            step_um: 1.0,
        };
        let map = scan(&model, 0, &grid, &params(0.2, 50.0, true), &th).unwrap();
        let mut csv = Vec::new();
        map.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x_um,y_um,outcome");
        assert_eq!(lines.len(), 1 + 6);
        assert!(lines[1].starts_with("0,0,"));
        assert!(lines[2].starts_with("1,0,"));
        assert!(lines[4].starts_with("0,1,"));
    }

    #[test]
    fn sensitive_areas_merge_only_4_connected_equal_outcomes() {
        // Synthetic 4x3 map exercised without any scanning.
        let grid = ScanGrid {
            first: Point::new(0.0, 0.0),
            last: Point::new(3.0, 2.0),
            step_um: 1.0,
        };
        use FaultOutcome::{BitReset, BitSet, None as N};
        let cells = vec![
            BitSet, BitSet, N, BitReset, //
            N, BitSet, N, N, //
            BitSet, N, BitSet, BitSet,
        ];
        let map = SensitivityMap {
            grid,
            params: params(0.5, 50.0, false),
            target_ff: 0,
            cells,
            warning: None,
        };
        let layout = build_flipflop_layout();
        let regions = sensitive_areas(&map, &layout);
        // Components: {(0,0),(1,0),(1,1)}, {(3,0)}, {(0,2)}, {(2,2),(3,2)}.
        assert_eq!(regions.len(), 4);
        assert_eq!(regions[0].cell_count, 3);
        assert_eq!(regions[0].outcome, BitSet);
        let c = regions[0].centroid;
        assert!((c.x - 2.0 / 3.0).abs() < 1e-12 && (c.y - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(regions[1].cell_count, 1);
        assert_eq!(regions[1].outcome, BitReset);
        assert_eq!(regions[2].cell_count, 1);
        assert_eq!(regions[3].cell_count, 2);
        assert_eq!(regions[3].bbox, Rect::new(1.5, 1.5, 3.5, 2.5).unwrap());
    }

    #[test]
    fn short_ladder_escalation_succeeds_and_confirms() {
        let (model, th) = calibrated_model();
        let grid = ScanGrid::covering(&model.layout.bounds, 2.0, 0.5).unwrap();
        let ladder = EscalationLadder {
            power_start: 0.35,
            power_step: 0.05,
            power_end: 0.45,
            durations_ns: vec![50.0],
            magnifications: vec![20],
        };
        let result = escalate(&model, 0, &grid, &ladder, SpotModel::Measured, &th).unwrap();
        assert_eq!(result.runs.len(), 2);
        let set_run = &result.runs[0];
        assert!(!set_run.input_bit);
        let s = set_run.success.as_ref().expect("set must be achievable");
        assert_eq!(s.outcome, FaultOutcome::BitSet);
        assert_eq!(s.power_fraction, 0.35);
        assert!(s.repeat_confirmed);
        let reset_run = &result.runs[1];
        assert!(reset_run.input_bit);
        let s = reset_run.success.as_ref().expect("reset must be achievable");
        assert_eq!(s.outcome, FaultOutcome::BitReset);
        assert!((s.power_fraction - 0.45).abs() < 1e-12);
        assert!(s.repeat_confirmed);
        // The set run stopped at its success; the reset run walked further.
        assert_eq!(set_run.attempts.len(), 1);
        assert_eq!(reset_run.attempts.len(), 3);
    }

    #[test]
    fn summary_merges_quiet_objectives_and_splits_effects() {
        let mk_run = |mag: u32, input: bool, success: Option<SuccessRecord>| ObjectiveRun {
            magnification: mag,
            input_bit: input,
            attempts: vec![Attempt { power_fraction: 0.1, duration_ns: 50.0, candidate_cells: 0 }],
            success,
        };
        let success = |p: f64, outcome: FaultOutcome| SuccessRecord {
            power_fraction: p,
            duration_ns: 50.0,
            center: Point::new(0.0, 0.0),
            outcome,
            repeat_confirmed: true,
        };
        let result = CampaignResult {
            spot_model: SpotModel::Measured,
            clock_mhz: 2.0,
            target_ff: 0,
            n_stages: 1,
            grid: ScanGrid { first: Point::new(0.0, 0.0), last: Point::new(1.0, 1.0), step_um: 0.5 },
            thresholds: FaultThresholds::from_nmos(1.59e-3).unwrap(),
            ladder: EscalationLadder::default(),
            runs: vec![
                mk_run(5, false, None),
                mk_run(20, false, Some(success(0.35, FaultOutcome::BitSet))),
                mk_run(50, false, None),
                mk_run(100, false, None),
                mk_run(5, true, None),
                mk_run(20, true, Some(success(0.45, FaultOutcome::BitReset))),
                mk_run(50, true, None),
                mk_run(100, true, None),
            ],
        };
        let report = summarize(&result);
        assert_eq!(report.rows.len(), 5);
        assert_eq!(report.rows[0].magnification, 100);
        assert_eq!(report.rows[0].input, "0 or 1");
        assert_eq!(report.rows[0].outcome, FaultOutcome::None);
        assert_eq!(report.rows[1].magnification, 50);
        assert_eq!(report.rows[2].magnification, 20);
        assert_eq!(report.rows[2].input, "0");
        assert_eq!(report.rows[2].outcome, FaultOutcome::BitSet);
        assert_eq!(report.rows[2].onset_power_fraction, Some(0.35));
        assert_eq!(report.rows[3].input, "1");
        assert_eq!(report.rows[3].outcome, FaultOutcome::BitReset);
        assert_eq!(report.rows[4].magnification, 5);
        let table = render_report_table(&report);
        assert!(table.contains("bit_set"));
        assert!(table.contains("35%"));
    }
}
