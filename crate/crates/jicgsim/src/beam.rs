//! Focused Gaussian laser spot: objective table, waist from the 80%
//! encircled-energy diameter, and intensity queries with filler occlusion.
//!
//! A circular Gaussian beam of total power `P` and waist `w` has the radial
//! intensity profile `I(r) = (2·P / (π·w²)) · exp(−2·r²/w²)` (power per unit
//! area), so the energy fraction inside radius `r` is `1 − exp(−2·r²/w²)`.
//! Datasheets quote the diameter `d80` that encircles 80% of the power;
//! inverting the fraction at `r = d80/2` gives `w = (d80/2) / sqrt(ln(5)/2)`.

use serde::{Deserialize, Serialize};

use crate::geom::{Point, Rect};
use crate::layout::{occlusion_samples, CellLayout};
use crate::{Error, Result};

/// Laser wavelength (nm); near-infrared so it penetrates the substrate.
pub const WAVELENGTH_NM: f64 = 808.0;
/// Maximum continuous optical power delivered at the objective (W).
pub const MAX_POWER_W: f64 = 0.848;
/// Shortest supported pulse duration (ns).
pub const MIN_PULSE_NS: f64 = 2.0;
/// Energy fraction that defines the quoted spot diameter.
const ENCIRCLED_FRACTION: f64 = 0.80;

/// Which spot-size column of the objective table a shot uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpotModel {
    /// Spot diameters measured on the actual bench (larger, the default).
    #[default]
    Measured,
    /// Nominal diffraction-limited datasheet diameters.
    Datasheet,
}

impl std::fmt::Display for SpotModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpotModel::Measured => write!(f, "measured"),
            SpotModel::Datasheet => write!(f, "datasheet"),
        }
    }
}

impl std::str::FromStr for SpotModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "measured" => Ok(SpotModel::Measured),
            "datasheet" => Ok(SpotModel::Datasheet),
            other => Err(Error::invalid(format!(
                "unknown spot model {other:?} (expected \"measured\" or \"datasheet\")"
            ))),
        }
    }
}

/// One microscope objective: magnification and its 80% spot diameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub magnification: u32,
    pub d80_datasheet_um: f64,
    pub d80_measured_um: f64,
}

/// The four objectives of the injection bench, ascending magnification.
pub const OBJECTIVES: [Objective; 4] = [
    Objective { magnification: 5, d80_datasheet_um: 15.0, d80_measured_um: 45.0 },
    Objective { magnification: 20, d80_datasheet_um: 4.0, d80_measured_um: 11.0 },
    Objective { magnification: 50, d80_datasheet_um: 1.5, d80_measured_um: 3.2 },
    Objective { magnification: 100, d80_datasheet_um: 1.0, d80_measured_um: 1.45 },
];

impl Objective {
    /// Looks an objective up by magnification.
    pub fn by_magnification(magnification: u32) -> Result<Objective> {
        OBJECTIVES
            .iter()
            .copied()
            .find(|o| o.magnification == magnification)
            .ok_or_else(|| {
                Error::not_found(format!(
                    "no {magnification}x objective (available: 5x, 20x, 50x, 100x)"
                ))
            })
    }

    /// The 80% encircled-energy diameter under the chosen spot model (µm).
    pub fn d80_um(&self, model: SpotModel) -> f64 {
        match model {
            SpotModel::Measured => self.d80_measured_um,
            SpotModel::Datasheet => self.d80_datasheet_um,
        }
    }

    /// Gaussian waist under the chosen spot model (µm).
    pub fn waist_um(&self, model: SpotModel) -> f64 {
        waist_from_d80(self.d80_um(model)).expect("objective table diameters are positive")
    }
}

/// Converts an 80% encircled-energy diameter to the Gaussian waist (µm).
pub fn waist_from_d80(d80_um: f64) -> Result<f64> {
    if !(d80_um.is_finite() && d80_um > 0.0) {
        return Err(Error::invalid(format!("spot diameter must be positive, got {d80_um}")));
    }
    // 1 − exp(−2 r²/w²) = 0.8 at r = d80/2  =>  w = r / sqrt(ln(5)/2).
    let k = (-(1.0 - ENCIRCLED_FRACTION).ln() / 2.0).sqrt();
    Ok(d80_um / 2.0 / k)
}

/// The laser source driving the bench.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSource {
    pub wavelength_nm: f64,
    pub max_power_w: f64,
}

impl Default for BeamSource {
    fn default() -> Self {
        BeamSource { wavelength_nm: WAVELENGTH_NM, max_power_w: MAX_POWER_W }
    }
}

/// One laser shot: objective, spot model, spot centre, drive level, duration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamShot {
    pub objective: Objective,
    pub spot_model: SpotModel,
    pub center: Point,
    /// Fraction of [`MAX_POWER_W`] delivered, in `[0, 1]`.
    pub power_fraction: f64,
    pub duration_ns: f64,
}

impl BeamShot {
    /// Builds a validated shot.
    pub fn new(
        magnification: u32,
        spot_model: SpotModel,
        center: Point,
        power_fraction: f64,
        duration_ns: f64,
    ) -> Result<Self> {
        let objective = Objective::by_magnification(magnification)?;
        if !(0.0..=1.0).contains(&power_fraction) {
            return Err(Error::invalid(format!(
                "power fraction must lie in [0, 1], got {power_fraction}"
            )));
        }
        if !(duration_ns.is_finite() && duration_ns >= MIN_PULSE_NS) {
            return Err(Error::invalid(format!(
                "pulse duration must be at least {MIN_PULSE_NS} ns, got {duration_ns}"
            )));
        }
        if !(center.x.is_finite() && center.y.is_finite()) {
            return Err(Error::invalid("shot centre must be finite".to_string()));
        }
        Ok(BeamShot { objective, spot_model, center, power_fraction, duration_ns })
    }

    /// Gaussian waist of this shot (µm).
    pub fn waist_um(&self) -> f64 {
        self.objective.waist_um(self.spot_model)
    }

    /// Delivered optical power (W).
    pub fn power_w(&self) -> f64 {
        self.power_fraction * MAX_POWER_W
    }

    /// Peak (on-axis) intensity (W/µm²), ignoring occlusion.
    pub fn peak_intensity(&self) -> f64 {
        let w = self.waist_um();
        2.0 * self.power_w() / (std::f64::consts::PI * w * w)
    }

    /// Unoccluded intensity at distance `r` from the spot centre (W/µm²).
    pub fn intensity_at_radius(&self, r: f64) -> f64 {
        let w = self.waist_um();
        self.peak_intensity() * (-2.0 * r * r / (w * w)).exp()
    }
}

/// Intensity at `point`: the Gaussian profile, forced to zero wherever an
/// opaque filler of `layout` covers the point (W/µm²).
pub fn intensity_at(shot: &BeamShot, point: Point, layout: &CellLayout) -> f64 {
    if layout.is_occluded(point) {
        return 0.0;
    }
    shot.intensity_at_radius(shot.center.distance_to(point))
}

/// Fraction of the shot's power enclosed within `radius` of the spot centre.
pub fn energy_within(shot: &BeamShot, radius_um: f64) -> Result<f64> {
    if !(radius_um.is_finite() && radius_um >= 0.0) {
        return Err(Error::invalid(format!("radius must be non-negative, got {radius_um}")));
    }
    let w = shot.waist_um();
    Ok(1.0 - (-2.0 * radius_um * radius_um / (w * w)).exp())
}

/// Mean intensity over `region`, sampled on a cell-centred 0.1 µm grid with
/// occluded samples contributing zero (W/µm²).
pub fn mean_intensity_over(shot: &BeamShot, region: &Rect, layout: &CellLayout) -> f64 {
    let sampler = RegionSampler::new(region, layout);
    shot.power_fraction * sampler.unit_mean(shot.center, shot.waist_um())
}

/// Pre-computed sample points of one region, with occluded points dropped.
/// `unit_mean` then evaluates the mean intensity at full drive (power
/// fraction 1.0) for any spot centre and waist; scale by the actual power
/// fraction to get a shot's mean intensity.
pub(crate) struct RegionSampler {
    points: Vec<Point>,
    n_total: usize,
}

impl RegionSampler {
    pub(crate) fn new(region: &Rect, layout: &CellLayout) -> Self {
        let (nx, ny) = occlusion_samples(region);
        let mut points = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            let y = region.y0 + (iy as f64 + 0.5) * region.height() / ny as f64;
            for ix in 0..nx {
                let x = region.x0 + (ix as f64 + 0.5) * region.width() / nx as f64;
                let p = Point::new(x, y);
                if !layout.is_occluded(p) {
                    points.push(p);
                }
            }
        }
        RegionSampler { points, n_total: nx * ny }
    }

    /// Mean intensity over the region for a unit power fraction (W/µm²).
    pub(crate) fn unit_mean(&self, center: Point, waist_um: f64) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let peak = 2.0 * MAX_POWER_W / (std::f64::consts::PI * waist_um * waist_um);
        let inv_w2 = -2.0 / (waist_um * waist_um);
        let sum: f64 = self
            .points
            .iter()
            .map(|p| {
                let dx = p.x - center.x;
                let dy = p.y - center.y;
                ((dx * dx + dy * dy) * inv_w2).exp()
            })
            .sum();
        peak * sum / self.n_total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{build_flipflop_layout, place_filler_over_site};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn shot(mag: u32, model: SpotModel, cx: f64, cy: f64, p: f64) -> BeamShot {
        BeamShot::new(mag, model, Point::new(cx, cy), p, 50.0).unwrap()
    }

    #[test]
    fn waist_matches_independent_values() {
        // Frozen from an independent numeric evaluation of
        // w = (d80/2)/sqrt(ln(5)/2) for the objective table.
        assert_relative_eq!(
            Objective::by_magnification(100).unwrap().waist_um(SpotModel::Measured),
            0.808195,
            max_relative = 1e-6
        );
        assert_relative_eq!(
            Objective::by_magnification(50).unwrap().waist_um(SpotModel::Measured),
            1.783602,
            max_relative = 1e-6
        );
        assert_relative_eq!(
            Objective::by_magnification(20).unwrap().waist_um(SpotModel::Measured),
            6.131131,
            max_relative = 1e-6
        );
        assert_relative_eq!(
            Objective::by_magnification(5).unwrap().waist_um(SpotModel::Measured),
            25.081898,
            max_relative = 1e-6
        );
        assert!(waist_from_d80(0.0).is_err());
        assert!(waist_from_d80(-1.0).is_err());
    }

    #[test]
    fn d80_radius_encircles_eighty_percent() {
        for obj in OBJECTIVES {
            for model in [SpotModel::Measured, SpotModel::Datasheet] {
                let s = BeamShot::new(obj.magnification, model, Point::new(0.0, 0.0), 1.0, 50.0)
                    .unwrap();
                let frac = energy_within(&s, obj.d80_um(model) / 2.0).unwrap();
                assert_relative_eq!(frac, 0.80, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn peak_intensity_matches_independent_values() {
        // Frozen peaks: 2·p·0.848/(π·w²) for (20x, 0.35) and (5x, 1.0).
        let s20 = shot(20, SpotModel::Measured, 0.0, 0.0, 0.35);
        assert_relative_eq!(s20.peak_intensity(), 5.0265e-3, max_relative = 1e-4);
        let s5 = shot(5, SpotModel::Measured, 0.0, 0.0, 1.0);
        assert_relative_eq!(s5.peak_intensity(), 8.5813e-4, max_relative = 1e-4);
    }

    #[test]
    fn shot_validation_rejects_bad_parameters() {
        let c = Point::new(0.0, 0.0);
        assert!(BeamShot::new(10, SpotModel::Measured, c, 0.5, 50.0).is_err());
        assert!(BeamShot::new(20, SpotModel::Measured, c, -0.1, 50.0).is_err());
        assert!(BeamShot::new(20, SpotModel::Measured, c, 1.1, 50.0).is_err());
        assert!(BeamShot::new(20, SpotModel::Measured, c, 0.5, 1.9).is_err());
        assert!(BeamShot::new(20, SpotModel::Measured, c, 0.5, 2.0).is_ok());
    }

    #[test]
    fn occluded_points_read_zero_intensity() {
        let ff = build_flipflop_layout();
        let site = ff.sites[0].clone();
        let shielded = place_filler_over_site(&ff, &site.id).unwrap();
        let s = shot(20, SpotModel::Measured, site.gate_region.center().x, site.gate_region.center().y, 1.0);
        let open = intensity_at(&s, site.gate_region.center(), &ff);
        let blocked = intensity_at(&s, site.gate_region.center(), &shielded);
        assert!(open > 0.0);
        assert_eq!(blocked, 0.0);
        // Mean over the covered site drops to zero; a far site is unaffected.
        assert_eq!(mean_intensity_over(&s, &site.gate_region, &shielded), 0.0);
        let far = &ff.sites[55].gate_region;
        assert_eq!(
            mean_intensity_over(&s, far, &shielded),
            mean_intensity_over(&s, far, &ff)
        );
    }

    #[test]
    fn mean_intensity_approaches_centre_intensity_for_small_regions() {
        let ff = build_flipflop_layout();
        let s = shot(5, SpotModel::Measured, 10.0, 10.0, 1.0);
        let tiny = Rect::new(19.95, 9.95, 20.05, 10.05).unwrap();
        let mean = mean_intensity_over(&s, &tiny, &ff);
        let centre = intensity_at(&s, Point::new(20.0, 10.0), &ff);
        // The cell-centred quadrature leaves a second-order curvature
        // residual over the 0.1 µm region.
        assert_relative_eq!(mean, centre, max_relative = 1e-4);
    }

    #[test]
    fn measured_spots_are_always_weaker_than_datasheet_spots() {
        for obj in OBJECTIVES {
            assert!(obj.d80_measured_um > obj.d80_datasheet_um);
            let m = obj.waist_um(SpotModel::Measured);
            let d = obj.waist_um(SpotModel::Datasheet);
            assert!(m > d);
        }
    }

    proptest! {
        // Intensity decays monotonically with radius.
        #[test]
        fn intensity_monotone_in_radius(r1 in 0.0f64..40.0, dr in 0.0f64..40.0) {
            let s = shot(20, SpotModel::Measured, 0.0, 0.0, 0.7);
            prop_assert!(s.intensity_at_radius(r1) >= s.intensity_at_radius(r1 + dr));
        }

        // Encircled energy is a monotone fraction in [0, 1).
        #[test]
        fn energy_within_is_monotone_fraction(r1 in 0.0f64..60.0, dr in 0.0f64..60.0) {
            let s = shot(5, SpotModel::Measured, 0.0, 0.0, 1.0);
            let a = energy_within(&s, r1).unwrap();
            let b = energy_within(&s, r1 + dr).unwrap();
            prop_assert!((0.0..1.0).contains(&a));
            prop_assert!(b >= a);
        }

        // Adding a filler can only reduce the mean intensity over any region.
        #[test]
        fn occlusion_never_increases_mean_intensity(site_idx in 0usize..56, cx in 0.0f64..82.0, cy in 0.0f64..20.0) {
            let ff = build_flipflop_layout();
            let id = ff.sites[site_idx].id;
            let shielded = place_filler_over_site(&ff, &id).unwrap();
            let s = shot(20, SpotModel::Measured, cx, cy, 1.0);
            for probe in [&ff.sites[site_idx].gate_region, &ff.sites[(site_idx + 7) % 56].gate_region] {
                let open = mean_intensity_over(&s, probe, &ff);
                let blocked = mean_intensity_over(&s, probe, &shielded);
                prop_assert!(blocked <= open + 1e-18);
            }
        }

        // Power scales the field linearly.
        #[test]
        fn intensity_linear_in_power(p in 0.01f64..1.0, r in 0.0f64..20.0) {
            let s1 = shot(20, SpotModel::Measured, 0.0, 0.0, p);
            let sf = shot(20, SpotModel::Measured, 0.0, 0.0, 1.0);
            prop_assert!((s1.intensity_at_radius(r) - p * sf.intensity_at_radius(r)).abs() <= 1e-12 * sf.intensity_at_radius(0.0));
        }
    }
}
