//! Intensity-threshold fault model and threshold calibration.
//!
//! A transistor gate site opens (conducts spuriously) while the shot's mean
//! intensity over its gate region, scaled by the site's coupling, reaches the
//! channel's critical intensity. A duplicated pair only becomes effective
//! when both of its twins open; a single open half is blocked by its series
//! partner. Pulse duration never changes which sites open — it only sets how
//! long the forcing window lasts.
//!
//! Calibration searches for the NMOS critical intensity that reproduces a
//! set of behavioural targets (which outcomes must be achievable at which
//! power, and where nothing may happen), then fixes the PMOS threshold at a
//! constant ratio above it.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beam::{mean_intensity_over, BeamShot, Objective, RegionSampler, SpotModel, MAX_POWER_W};
use crate::circuit::{
    default_fire_cycle, fire_window, ForcedState, ShiftRegister, Trace, TraceSpec,
};
use crate::geom::{grid_coords, Point};
use crate::layout::{CellLayout, Channel, PairId, SiteId};
use crate::{Error, Result};

/// Fixed ratio between the PMOS and NMOS critical intensities. The p-channel
/// devices sit in the well and need roughly twice the drive to open.
pub const PMOS_THRESHOLD_RATIO: f64 = 2.0;
/// Grid step used by calibration when probing shot centres (µm).
pub const CALIBRATION_GRID_STEP_UM: f64 = 0.5;
/// Margin added around the probed flip-flop cell (µm).
pub const CALIBRATION_GRID_MARGIN_UM: f64 = 2.0;
/// Pulse duration used by calibration probes (ns).
pub const CALIBRATION_PROBE_DURATION_NS: f64 = 50.0;
/// Unit pair strengths below this are treated as dark (model resolution).
pub(crate) const STRENGTH_FLOOR: f64 = 1e-9;

/// Critical mean intensities (W/µm²) above which a gate site opens.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultThresholds {
    pub i_crit_nmos: f64,
    pub i_crit_pmos: f64,
}

impl FaultThresholds {
    /// Builds validated thresholds: both positive, NMOS strictly weaker.
    pub fn new(i_crit_nmos: f64, i_crit_pmos: f64) -> Result<Self> {
        if !(i_crit_nmos.is_finite() && i_crit_nmos > 0.0) {
            return Err(Error::invalid(format!(
                "NMOS critical intensity must be positive, got {i_crit_nmos}"
            )));
        }
        if !(i_crit_pmos.is_finite() && i_crit_pmos > i_crit_nmos) {
            return Err(Error::invalid(format!(
                "PMOS critical intensity must exceed the NMOS one, got {i_crit_pmos} vs {i_crit_nmos}"
            )));
        }
        Ok(FaultThresholds { i_crit_nmos, i_crit_pmos })
    }

    /// Thresholds with the PMOS level at the fixed ratio above the NMOS one.
    pub fn from_nmos(i_crit_nmos: f64) -> Result<Self> {
        FaultThresholds::new(i_crit_nmos, PMOS_THRESHOLD_RATIO * i_crit_nmos)
    }

    pub fn for_channel(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Nmos => self.i_crit_nmos,
            Channel::Pmos => self.i_crit_pmos,
        }
    }
}

/// Categorical outcome of one shot on one preloaded register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultOutcome {
    /// Output never deviated from the reference.
    None,
    /// A stored 0 read back as 1 transiently, then normal operation resumed.
    BitSet,
    /// A stored 1 read back as 0 transiently, then normal operation resumed.
    BitReset,
    /// The deviation persisted to the end of the trace but a reset cleared it.
    StuckAt,
    /// The deviation survived a reset.
    Permanent,
    /// The netlist failed to settle (or produced undefined levels).
    Unstable,
}

impl fmt::Display for FaultOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FaultOutcome::None => "none",
            FaultOutcome::BitSet => "bit_set",
            FaultOutcome::BitReset => "bit_reset",
            FaultOutcome::StuckAt => "stuck_at",
            FaultOutcome::Permanent => "permanent",
            FaultOutcome::Unstable => "unstable",
        };
        write!(f, "{s}")
    }
}

/// Every gate site whose coupled mean intensity under `shot` reaches its
/// channel's critical intensity. Duration plays no role here.
pub fn opened_sites(
    shot: &BeamShot,
    layout: &CellLayout,
    thresholds: &FaultThresholds,
) -> BTreeSet<SiteId> {
    layout
        .sites
        .iter()
        .filter(|site| {
            let mean = mean_intensity_over(shot, &site.gate_region, layout);
            site.coupling * mean >= thresholds.for_channel(site.channel)
        })
        .map(|site| site.id)
        .collect()
}

/// Collapses opened sites to forced pairs: a pair conducts spuriously only
/// if *both* twins opened. The result carries no time window yet; arm it
/// with [`ForcedState::with_window`] before tracing.
pub fn effective_pairs(opened: &BTreeSet<SiteId>, layout: &CellLayout) -> ForcedState {
    let mut forced = ForcedState::default();
    for (pair, twins) in layout.pairs() {
        if twins.iter().all(|site| opened.contains(&site.id)) {
            match pair.channel {
                Channel::Nmos => forced.open_nmos.insert(pair),
                Channel::Pmos => forced.open_pmos.insert(pair),
            };
        }
    }
    forced
}

/// Classifies one measurement against its reference and post-reset re-run.
///
/// * no output deviation → [`FaultOutcome::None`];
/// * deviations confined to before the trace's final clock period are
///   transient upsets, classified by the polarity of the first deviation;
/// * deviations reaching the final period are latched: cleared by the reset
///   → [`FaultOutcome::StuckAt`], surviving it → [`FaultOutcome::Permanent`];
/// * an unstable observation (failed settle or undefined levels) →
///   [`FaultOutcome::Unstable`].
///
/// All three traces must share one stimulus (same clock, bit, sample times).
pub fn classify(reference: &Trace, observed: &Trace, post_reset: &Trace) -> Result<FaultOutcome> {
    if !reference.stimulus_matches(observed) || !reference.stimulus_matches(post_reset) {
        return Err(Error::invalid(
            "classification needs reference, observed and post-reset traces of one stimulus",
        ));
    }
    if observed.unstable {
        return Ok(FaultOutcome::Unstable);
    }
    let deviations: Vec<usize> = (0..reference.times_ns.len())
        .filter(|&i| observed.q_out[i] != reference.q_out[i])
        .collect();
    let Some(&first) = deviations.first() else {
        return Ok(FaultOutcome::None);
    };

    let t_last = *reference.times_ns.last().expect("non-empty trace");
    let final_period_start = t_last - reference.period_ns;
    let persistent = deviations.iter().any(|&i| observed.times_ns[i] > final_period_start);
    if persistent {
        let reset_clean = (0..reference.times_ns.len())
            .all(|i| post_reset.q_out[i] == reference.q_out[i]);
        return Ok(if reset_clean { FaultOutcome::StuckAt } else { FaultOutcome::Permanent });
    }

    match (reference.q_out[first], observed.q_out[first]) {
        (crate::circuit::Value::Zero, crate::circuit::Value::One) => Ok(FaultOutcome::BitSet),
        (crate::circuit::Value::One, crate::circuit::Value::Zero) => Ok(FaultOutcome::BitReset),
        // An undefined level on either side means the simulation left the
        // settled regime.
        _ => Ok(FaultOutcome::Unstable),
    }
}

// ---------------------------------------------------------------------------
// Pair strength fields
// ---------------------------------------------------------------------------

/// Unit strength of one pair as seen from one shot centre: the smaller of
/// the two twins' coupled mean intensities at full drive. The pair opens
/// under a shot of power fraction `p` iff `p · strength >= i_crit(channel)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PairStrength {
    pub pair: PairId,
    pub channel: Channel,
    pub strength: f64,
}

struct PairGeometry {
    pair: PairId,
    channel: Channel,
    max_coupling: f64,
    couplings: [f64; 2],
    rects: [crate::geom::Rect; 2],
    samplers: [RegionSampler; 2],
}

fn pair_geometries(layout: &CellLayout) -> Vec<PairGeometry> {
    layout
        .pairs()
        .into_iter()
        .map(|(pair, twins)| {
            debug_assert_eq!(twins.len(), 2);
            PairGeometry {
                pair,
                channel: pair.channel,
                max_coupling: twins[0].coupling.max(twins[1].coupling),
                couplings: [twins[0].coupling, twins[1].coupling],
                rects: [twins[0].gate_region, twins[1].gate_region],
                samplers: [
                    RegionSampler::new(&twins[0].gate_region, layout),
                    RegionSampler::new(&twins[1].gate_region, layout),
                ],
            }
        })
        .collect()
}

impl PairGeometry {
    /// Cheap upper bound on this pair's unit strength from `center`: the
    /// unoccluded intensity at the nearest point of the *farther* twin.
    fn strength_bound(&self, center: Point, waist: f64) -> f64 {
        let d = self.rects[0]
            .distance_to_point(center)
            .max(self.rects[1].distance_to_point(center));
        let peak = 2.0 * MAX_POWER_W / (std::f64::consts::PI * waist * waist);
        self.max_coupling * peak * (-2.0 * d * d / (waist * waist)).exp()
    }

    fn strength(&self, center: Point, waist: f64) -> f64 {
        let a = self.couplings[0] * self.samplers[0].unit_mean(center, waist);
        let b = self.couplings[1] * self.samplers[1].unit_mean(center, waist);
        a.min(b)
    }
}

/// Per-centre pair strengths over a set of shot centres, descending by
/// strength, with entries below `floor` dropped.
pub(crate) fn pair_strength_field(
    layout: &CellLayout,
    centers: &[Point],
    waist: f64,
    floor: f64,
) -> Vec<Vec<PairStrength>> {
    let geoms = pair_geometries(layout);
    centers
        .par_iter()
        .map(|&center| {
            let mut list: Vec<PairStrength> = geoms
                .iter()
                .filter(|g| g.strength_bound(center, waist) >= floor)
                .filter_map(|g| {
                    let strength = g.strength(center, waist);
                    (strength >= floor).then_some(PairStrength {
                        pair: g.pair,
                        channel: g.channel,
                        strength,
                    })
                })
                .collect();
            list.sort_by(|a, b| b.strength.total_cmp(&a.strength).then(a.pair.cmp(&b.pair)));
            list
        })
        .collect()
}

/// Exact maximum unit pair strength of one channel over all centres
/// (running-max pruned, so far sites are skipped without sampling).
pub(crate) fn max_pair_strength(
    layout: &CellLayout,
    centers: &[Point],
    waist: f64,
    channel: Channel,
) -> f64 {
    let geoms: Vec<PairGeometry> =
        pair_geometries(layout).into_iter().filter(|g| g.channel == channel).collect();
    let mut best: f64 = 0.0;
    for &center in centers {
        for g in &geoms {
            if g.strength_bound(center, waist) <= best {
                continue;
            }
            best = best.max(g.strength(center, waist));
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// What one calibration target demands at one objective and power level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Some shot centre must produce a transient set of a stored 0.
    BitSetAchievable,
    /// Some shot centre must produce a transient clear of a stored 1.
    BitResetAchievable,
    /// No shot centre may disturb the register at all.
    NoFault,
    /// No pair may become effective anywhere (both-twin opening impossible).
    NoEffectivePair,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TargetKind::BitSetAchievable => "bit-set-achievable",
            TargetKind::BitResetAchievable => "bit-reset-achievable",
            TargetKind::NoFault => "no-fault",
            TargetKind::NoEffectivePair => "no-effective-pair",
        };
        write!(f, "{s}")
    }
}

/// One behavioural calibration target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub kind: TargetKind,
    pub magnification: u32,
    pub power_fraction: f64,
}

impl CalibrationTarget {
    pub fn describe(&self) -> String {
        format!("{} at {}x, power {}", self.kind, self.magnification, self.power_fraction)
    }
}

/// The default target set: transient set and clear must appear under the
/// 20x objective at 35% and 45% drive, the 20x objective one step below the
/// set onset must do nothing, and the 5x, 50x and 100x objectives must not
/// open any pair even at full drive.
pub fn default_targets() -> Vec<CalibrationTarget> {
    vec![
        CalibrationTarget { kind: TargetKind::BitSetAchievable, magnification: 20, power_fraction: 0.35 },
        CalibrationTarget { kind: TargetKind::BitResetAchievable, magnification: 20, power_fraction: 0.45 },
        CalibrationTarget { kind: TargetKind::NoFault, magnification: 20, power_fraction: 0.30 },
        CalibrationTarget { kind: TargetKind::NoEffectivePair, magnification: 5, power_fraction: 1.0 },
        CalibrationTarget { kind: TargetKind::NoEffectivePair, magnification: 50, power_fraction: 1.0 },
        CalibrationTarget { kind: TargetKind::NoEffectivePair, magnification: 100, power_fraction: 1.0 },
    ]
}

/// Which side of the feasible interval a target constrains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    /// The threshold must not exceed the bound (else the effect disappears).
    Upper,
    /// The threshold must strictly exceed the bound (else something happens).
    Lower,
}

/// How one target constrained the NMOS threshold, and the slack left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub target: CalibrationTarget,
    pub side: BoundSide,
    /// The bound this target imposes on the NMOS critical intensity.
    pub bound: f64,
    /// Slack of the chosen threshold against the bound (non-negative).
    pub margin: f64,
}

/// A calibrated fault model plus the evidence behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub spot_model: SpotModel,
    pub thresholds: FaultThresholds,
    /// Feasible open-closed interval for the NMOS critical intensity.
    pub feasible_nmos: (f64, f64),
    pub pmos_ratio: f64,
    pub targets: Vec<TargetReport>,
    pub grid_step_um: f64,
    pub grid_margin_um: f64,
    pub probe_clock_mhz: f64,
    pub probe_duration_ns: f64,
}

/// Memoized probe simulator: one register, one stimulus per input bit.
struct ProbeSim {
    register: ShiftRegister,
    specs: [TraceSpec; 2],
    references: [Trace; 2],
    window: (f64, f64),
    cache: HashMap<(bool, Vec<PairId>, Vec<PairId>), FaultOutcome>,
}

impl ProbeSim {
    fn new(n_stages: u32, clock_mhz: f64, duration_ns: f64) -> Result<Self> {
        let register = ShiftRegister::new(n_stages)?;
        let window = fire_window(clock_mhz, default_fire_cycle(n_stages), duration_ns);
        let mut specs = [TraceSpec::default_for(n_stages, false); 2];
        specs[1].input_bit = true;
        let mut references = Vec::with_capacity(2);
        for spec in &specs {
            let mut reg = register.clone();
            let idle =
                ForcedState::default().with_window(window.0, window.1, 0.0);
            references.push(reg.run_trace(spec, Some(&idle))?);
        }
        let references: [Trace; 2] =
            references.try_into().expect("exactly two reference traces");
        Ok(ProbeSim { register, specs, references, window, cache: HashMap::new() })
    }

    /// Outcome of forcing `forced` during the probe window with the register
    /// preloaded to `input_bit`. The fault model has no damage mechanism, so
    /// the post-reset re-run always reproduces the reference.
    fn outcome(&mut self, input_bit: bool, forced: &ForcedState) -> Result<FaultOutcome> {
        if forced.is_empty() {
            return Ok(FaultOutcome::None);
        }
        let key = (
            input_bit,
            forced.open_nmos.iter().copied().collect::<Vec<_>>(),
            forced.open_pmos.iter().copied().collect::<Vec<_>>(),
        );
        if let Some(&hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let idx = usize::from(input_bit);
        let armed = forced.clone().with_window(self.window.0, self.window.1, 1.0);
        let mut reg = self.register.clone();
        let observed = reg.run_trace(&self.specs[idx], Some(&armed))?;
        let reference = &self.references[idx];
        let outcome = classify(reference, &observed, reference)?;
        self.cache.insert(key, outcome);
        Ok(outcome)
    }
}

/// Calibrates the critical intensities against behavioural targets.
///
/// For every achievability target the procedure computes the largest NMOS
/// threshold at which the demanded outcome still occurs for some shot centre
/// on a 0.5 µm grid over the first flip-flop cell (an upper bound); for every
/// quiet target it computes the largest threshold at which something still
/// happens (a lower bound). If the open interval between the strongest lower
/// bound and the weakest upper bound is empty the calibration fails, naming
/// the binding achievability target; otherwise the NMOS threshold is fixed
/// at the interval midpoint and the PMOS threshold at the fixed ratio above.
pub fn calibrate(
    layout: &CellLayout,
    spot_model: SpotModel,
    targets: &[CalibrationTarget],
) -> Result<Calibration> {
    if targets.is_empty() {
        return Err(Error::invalid("calibration needs at least one target"));
    }
    for t in targets {
        Objective::by_magnification(t.magnification)?;
        if !(0.0..=1.0).contains(&t.power_fraction) {
            return Err(Error::invalid(format!(
                "target power fraction must lie in [0, 1], got {}",
                t.power_fraction
            )));
        }
    }
    layout.validate()?;
    if !layout.ff_indices().contains(&0) {
        return Err(Error::invalid("calibration probes flip-flop 0, which this layout lacks"));
    }

    let cell = layout.ff_cell_bounds(0)?.expanded(CALIBRATION_GRID_MARGIN_UM);
    let xs = grid_coords(cell.x0, cell.x1, CALIBRATION_GRID_STEP_UM)?;
    let ys = grid_coords(cell.y0, cell.y1, CALIBRATION_GRID_STEP_UM)?;
    let centers: Vec<Point> =
        ys.iter().flat_map(|&y| xs.iter().map(move |&x| Point::new(x, y))).collect();

    let n_stages = layout.ff_indices().len() as u32;
    let mut probe = ProbeSim::new(
        n_stages,
        crate::circuit::DEFAULT_CLOCK_MHZ,
        CALIBRATION_PROBE_DURATION_NS,
    )?;

    // Strength fields are shared between targets of one magnification.
    let mut fields: HashMap<u32, Vec<Vec<PairStrength>>> = HashMap::new();
    let mut reports: Vec<TargetReport> = Vec::with_capacity(targets.len());

    for target in targets {
        let objective = Objective::by_magnification(target.magnification)?;
        let waist = objective.waist_um(spot_model);
        let p = target.power_fraction;
        let (side, bound) = match target.kind {
            TargetKind::NoEffectivePair => {
                let n = max_pair_strength(layout, &centers, waist, Channel::Nmos);
                let pm = max_pair_strength(layout, &centers, waist, Channel::Pmos);
                (BoundSide::Lower, (p * n).max(p * pm / PMOS_THRESHOLD_RATIO))
            }
            TargetKind::NoFault => {
                let field = fields.entry(target.magnification).or_insert_with(|| {
                    pair_strength_field(layout, &centers, waist, STRENGTH_FLOOR)
                });
                let mut best = 0.0_f64;
                for list in ordered_center_lists(field) {
                    explore_thresholds(list, p, &mut best, |forced, probe| {
                        Ok(probe.outcome(false, forced)? != FaultOutcome::None
                            || probe.outcome(true, forced)? != FaultOutcome::None)
                    }, &mut probe)?;
                }
                (BoundSide::Lower, best)
            }
            TargetKind::BitSetAchievable | TargetKind::BitResetAchievable => {
                let field = fields.entry(target.magnification).or_insert_with(|| {
                    pair_strength_field(layout, &centers, waist, STRENGTH_FLOOR)
                });
                let (input, want) = if target.kind == TargetKind::BitSetAchievable {
                    (false, FaultOutcome::BitSet)
                } else {
                    (true, FaultOutcome::BitReset)
                };
                let mut best = 0.0_f64;
                for list in ordered_center_lists(field) {
                    explore_thresholds(list, p, &mut best, |forced, probe| {
                        Ok(probe.outcome(input, forced)? == want)
                    }, &mut probe)?;
                }
                (BoundSide::Upper, best)
            }
        };
        reports.push(TargetReport { target: *target, side, bound, margin: 0.0 });
    }

    let lower = reports
        .iter()
        .filter(|r| r.side == BoundSide::Lower)
        .map(|r| r.bound)
        .fold(0.0_f64, f64::max);
    let upper_report = reports
        .iter()
        .filter(|r| r.side == BoundSide::Upper)
        .min_by(|a, b| a.bound.total_cmp(&b.bound))
        .ok_or_else(|| {
            Error::invalid("calibration needs at least one achievability target")
        })?;
    let upper = upper_report.bound;
    if !(lower < upper) || upper <= 0.0 {
        return Err(Error::CalibrationInfeasible {
            constraint: upper_report.target.describe(),
            detail: format!(
                "needs an NMOS critical intensity of at most {upper:.6e} W/µm², but quiet \
                 targets force it above {lower:.6e} W/µm²"
            ),
        });
    }

    let i_crit_nmos = (lower + upper) / 2.0;
    let thresholds = FaultThresholds::from_nmos(i_crit_nmos)?;
    for r in &mut reports {
        r.margin = match r.side {
            BoundSide::Upper => r.bound - i_crit_nmos,
            BoundSide::Lower => i_crit_nmos - r.bound,
        };
    }

    Ok(Calibration {
        spot_model,
        thresholds,
        feasible_nmos: (lower, upper),
        pmos_ratio: PMOS_THRESHOLD_RATIO,
        targets: reports,
        grid_step_um: CALIBRATION_GRID_STEP_UM,
        grid_margin_um: CALIBRATION_GRID_MARGIN_UM,
        probe_clock_mhz: crate::circuit::DEFAULT_CLOCK_MHZ,
        probe_duration_ns: CALIBRATION_PROBE_DURATION_NS,
    })
}

/// Calibration against [`default_targets`].
pub fn calibrate_default(layout: &CellLayout, spot_model: SpotModel) -> Result<Calibration> {
    calibrate(layout, spot_model, &default_targets())
}

/// Centre strength lists ordered by their strongest entry, descending, so
/// the global best rises as fast as possible and later centres prune early.
fn ordered_center_lists(field: &[Vec<PairStrength>]) -> Vec<&Vec<PairStrength>> {
    let mut lists: Vec<&Vec<PairStrength>> = field.iter().filter(|l| !l.is_empty()).collect();
    lists.sort_by(|a, b| b[0].strength.total_cmp(&a[0].strength));
    lists
}

/// Walks one centre's candidate thresholds in descending order and raises
/// `best` to the largest threshold whose forced pair set satisfies `accept`.
/// Candidates at or below the current best are skipped: they cannot improve
/// the maximum.
fn explore_thresholds<F>(
    list: &[PairStrength],
    power: f64,
    best: &mut f64,
    mut accept: F,
    probe: &mut ProbeSim,
) -> Result<()>
where
    F: FnMut(&ForcedState, &mut ProbeSim) -> Result<bool>,
{
    // Candidate thresholds: values of i_crit_nmos at which one more pair
    // becomes effective (PMOS strengths translate via the fixed ratio).
    let mut candidates: Vec<f64> = list
        .iter()
        .map(|s| match s.channel {
            Channel::Nmos => power * s.strength,
            Channel::Pmos => power * s.strength / PMOS_THRESHOLD_RATIO,
        })
        .collect();
    candidates.sort_by(|a, b| b.total_cmp(a));
    for t in candidates {
        if t <= *best {
            return Ok(());
        }
        let mut forced = ForcedState::default();
        for s in list {
            let opens = match s.channel {
                Channel::Nmos => power * s.strength >= t,
                Channel::Pmos => power * s.strength >= PMOS_THRESHOLD_RATIO * t,
            };
            if opens {
                match s.channel {
                    Channel::Nmos => forced.open_nmos.insert(s.pair),
                    Channel::Pmos => forced.open_pmos.insert(s.pair),
                };
            }
        }
        if accept(&forced, probe)? {
            *best = t;
            return Ok(());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam::SpotModel;
    use crate::circuit::Value;
    use crate::layout::{build_flipflop_layout, place_filler_over_site, GateId};
    use approx::assert_relative_eq;

    fn shot(mag: u32, cx: f64, cy: f64, p: f64, dur: f64) -> BeamShot {
        BeamShot::new(mag, SpotModel::Measured, Point::new(cx, cy), p, dur).unwrap()
    }

    #[test]
    fn thresholds_validate_ordering() {
        assert!(FaultThresholds::new(1e-3, 2e-3).is_ok());
        assert!(FaultThresholds::new(0.0, 1e-3).is_err());
        assert!(FaultThresholds::new(2e-3, 1e-3).is_err());
        assert!(FaultThresholds::new(1e-3, 1e-3).is_err());
        let t = FaultThresholds::from_nmos(1e-3).unwrap();
        assert_eq!(t.i_crit_pmos, 2e-3);
        assert_eq!(t.for_channel(Channel::Nmos), 1e-3);
        assert_eq!(t.for_channel(Channel::Pmos), 2e-3);
    }

    #[test]
    fn outcome_labels_are_snake_case() {
        assert_eq!(FaultOutcome::BitSet.to_string(), "bit_set");
        assert_eq!(FaultOutcome::StuckAt.to_string(), "stuck_at");
        assert_eq!(serde_json::to_string(&FaultOutcome::BitReset).unwrap(), "\"bit_reset\"");
    }

    #[test]
    fn opened_sites_ignore_duration_and_respect_occlusion() {
        let ff = build_flipflop_layout();
        let th = FaultThresholds::from_nmos(1.59e-3).unwrap();
        let s_short = shot(20, 74.5, 5.5, 0.45, 2.0);
        let s_long = shot(20, 74.5, 5.5, 0.45, 1000.0);
        let opened = opened_sites(&s_short, &ff, &th);
        assert_eq!(opened, opened_sites(&s_long, &ff, &th), "duration must not matter");
        assert!(!opened.is_empty());
        // Shield one opened site: it (and only it) drops out.
        let victim = *opened.iter().next().unwrap();
        let shielded = place_filler_over_site(&ff, &victim).unwrap();
        let after = opened_sites(&s_short, &shielded, &th);
        assert!(!after.contains(&victim));
        assert!(after.iter().all(|id| opened.contains(id)));
    }

    #[test]
    fn opening_threshold_is_inclusive() {
        let ff = build_flipflop_layout();
        let site = &ff.sites[0];
        let s = shot(20, site.gate_region.center().x, site.gate_region.center().y, 0.5, 50.0);
        let mean = mean_intensity_over(&s, &site.gate_region, &ff) * site.coupling;
        let exactly = FaultThresholds::new(mean, 2.0 * mean).unwrap();
        assert!(opened_sites(&s, &ff, &exactly).contains(&site.id));
        let above = FaultThresholds::new(mean * (1.0 + 1e-9), mean * 3.0).unwrap();
        assert!(!opened_sites(&s, &ff, &above).contains(&site.id));
    }

    #[test]
    fn half_open_pairs_are_blocked() {
        let ff = build_flipflop_layout();
        let pair = ff.sites[0].pair_id;
        let twins: Vec<SiteId> =
            ff.sites.iter().filter(|s| s.pair_id == pair).map(|s| s.id).collect();
        assert_eq!(twins.len(), 2);
        let one: BTreeSet<SiteId> = [twins[0]].into();
        let both: BTreeSet<SiteId> = twins.iter().copied().collect();
        assert!(effective_pairs(&one, &ff).is_empty(), "a single twin must be blocked");
        let forced = effective_pairs(&both, &ff);
        assert_eq!(forced.open_nmos.len() + forced.open_pmos.len(), 1);
    }

    fn synthetic_trace(q: &[Value], window: Option<(f64, f64)>) -> Trace {
        let n = q.len();
        Trace {
            clock_mhz: 2.0,
            period_ns: 500.0,
            input_bit: false,
            window_ns: window,
            unstable: false,
            times_ns: (0..n).map(|k| k as f64 * 250.0).collect(),
            laser: vec![0.0; n],
            clk: (0..n).map(|k| (k % 2) as u8).collect(),
            d_in: vec![0; n],
            q_out: q.to_vec(),
        }
    }

    #[test]
    fn classify_covers_every_outcome() {
        use Value::{One, Zero};
        let reference = synthetic_trace(&[Zero; 12], None);

        assert_eq!(
            classify(&reference, &reference.clone(), &reference).unwrap(),
            FaultOutcome::None
        );

        let mut set = reference.clone();
        set.q_out[5] = One;
        set.q_out[6] = One;
        assert_eq!(classify(&reference, &set, &reference).unwrap(), FaultOutcome::BitSet);

        let ones = synthetic_trace(&[One; 12], None);
        let mut reset = ones.clone();
        reset.q_out[5] = Zero;
        assert_eq!(classify(&ones, &reset, &ones).unwrap(), FaultOutcome::BitReset);

        let mut stuck = reference.clone();
        for i in 5..12 {
            stuck.q_out[i] = One;
        }
        assert_eq!(classify(&reference, &stuck, &reference).unwrap(), FaultOutcome::StuckAt);
        assert_eq!(classify(&reference, &stuck, &stuck).unwrap(), FaultOutcome::Permanent);

        let mut wild = reference.clone();
        wild.q_out[4] = One;
        wild.unstable = true;
        assert_eq!(classify(&reference, &wild, &reference).unwrap(), FaultOutcome::Unstable);

        let mut undef = reference.clone();
        undef.q_out[4] = Value::X;
        assert_eq!(classify(&reference, &undef, &reference).unwrap(), FaultOutcome::Unstable);
    }

    #[test]
    fn classify_rejects_mismatched_stimulus() {
        let a = synthetic_trace(&[Value::Zero; 12], None);
        let mut b = synthetic_trace(&[Value::Zero; 12], None);
        b.clk[3] = 1 - b.clk[3];
        assert!(classify(&a, &b, &a).is_err());
        let short = synthetic_trace(&[Value::Zero; 10], None);
        assert!(classify(&a, &short, &a).is_err());
    }

    #[test]
    fn deviation_only_in_the_final_period_is_latched() {
        use Value::{One, Zero};
        let reference = synthetic_trace(&[Zero; 12], None);
        let mut tail = reference.clone();
        tail.q_out[11] = One; // last sample only: inside the final period
        assert_eq!(classify(&reference, &tail, &reference).unwrap(), FaultOutcome::StuckAt);
        let mut early = reference.clone();
        early.q_out[9] = One; // exactly one period before the end: transient
        assert_eq!(classify(&reference, &early, &reference).unwrap(), FaultOutcome::BitSet);
    }

    // ------------------------------------------------------------------
    // Calibration oracles (frozen from an independent numeric evaluation
    // of the same geometry: grid search over 0.5 µm centres, mean site
    // intensities via 0.1 µm cell-centred sampling).
    // ------------------------------------------------------------------

    #[test]
    fn calibration_reproduces_frozen_interval_and_midpoint() {
        let layout = build_flipflop_layout();
        let cal = calibrate_default(&layout, SpotModel::Measured).unwrap();
        assert_relative_eq!(cal.feasible_nmos.0, 1.467879e-3, max_relative = 1e-5);
        assert_relative_eq!(cal.feasible_nmos.1, 1.712526e-3, max_relative = 1e-5);
        assert_relative_eq!(cal.thresholds.i_crit_nmos, 1.590202e-3, max_relative = 1e-5);
        assert_relative_eq!(
            cal.thresholds.i_crit_pmos,
            PMOS_THRESHOLD_RATIO * cal.thresholds.i_crit_nmos,
            max_relative = 1e-12
        );
        for report in &cal.targets {
            assert!(report.margin >= 0.0, "{:?}", report);
        }
        // The two transient-effect targets bound the threshold from above
        // at the same level (shared route geometry at different drives).
        let uppers: Vec<&TargetReport> =
            cal.targets.iter().filter(|r| r.side == BoundSide::Upper).collect();
        assert_eq!(uppers.len(), 2);
        assert_relative_eq!(uppers[0].bound, uppers[1].bound, max_relative = 1e-9);
    }

    #[test]
    fn calibration_with_datasheet_spots_fails_on_the_bit_set_target() {
        let layout = build_flipflop_layout();
        let err = calibrate_default(&layout, SpotModel::Datasheet).unwrap_err();
        match err {
            Error::CalibrationInfeasible { constraint, .. } => {
                assert!(
                    constraint.starts_with("bit-set-achievable"),
                    "binding constraint was {constraint:?}"
                );
            }
            other => panic!("expected a calibration failure, got {other:?}"),
        }
    }

    #[test]
    fn calibrate_validates_inputs() {
        let layout = build_flipflop_layout();
        assert!(calibrate(&layout, SpotModel::Measured, &[]).is_err());
        let bad_power = [CalibrationTarget {
            kind: TargetKind::BitSetAchievable,
            magnification: 20,
            power_fraction: 1.5,
        }];
        assert!(calibrate(&layout, SpotModel::Measured, &bad_power).is_err());
        let bad_mag = [CalibrationTarget {
            kind: TargetKind::BitSetAchievable,
            magnification: 10,
            power_fraction: 0.5,
        }];
        assert!(calibrate(&layout, SpotModel::Measured, &bad_mag).is_err());
        let no_upper = [CalibrationTarget {
            kind: TargetKind::NoFault,
            magnification: 20,
            power_fraction: 0.3,
        }];
        assert!(calibrate(&layout, SpotModel::Measured, &no_upper).is_err());
    }

    #[test]
    fn calibrated_thresholds_make_the_designed_routes_work() {
        // End-to-end: a 20x shot at 45% drive on the strongest clear route
        // must flip a stored one, and the same shot at 30% must do nothing.
        let layout = build_flipflop_layout();
        let cal = calibrate_default(&layout, SpotModel::Measured).unwrap();
        let th = cal.thresholds;

        let hot = shot(20, 61.0, 5.5, 0.45, 50.0);
        let opened = opened_sites(&hot, &layout, &th);
        let forced = effective_pairs(&opened, &layout);
        assert!(!forced.open_nmos.is_empty());
        assert!(
            forced.open_nmos.iter().any(|p| p.gate == GateId { ff: 0, label: 5 }),
            "the clear route runs through G5"
        );

        let cold = shot(20, 61.0, 5.5, 0.30, 50.0);
        let opened = opened_sites(&cold, &layout, &th);
        assert!(effective_pairs(&opened, &layout).is_empty());
    }
}
