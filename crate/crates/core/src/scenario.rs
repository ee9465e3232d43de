//! Synthetic ground truth: a layered earth model with a growing plume
//! anomaly across N monitor surveys, plus noisy post-stack data simulation.
//!
//! The plume is a parametric anisotropic blob with monotone radii and
//! amplitude and a small upward drift per survey (buoyancy proxy), truncated
//! to compact support below 1e-3 of its peak. Survey parameters interpolate
//! linearly between first- and last-survey endpoints, so schedules with
//! different N span the same growth trajectory and first-to-last difference.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::grid::Grid2D;
use crate::poststack::{add_noise, PoststackOperator, SurveyData};
use crate::real::Real;
use crate::rng::StreamRng;

/// Support cutoff: the blob is zeroed where it falls below this fraction of
/// its own peak, giving every anomaly a compact, nested support.
pub const PLUME_SUPPORT_CUTOFF: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct EarthModel<T> {
    pub background: Grid2D<T>,
    pub extent_z_km: f64,
    pub extent_x_km: f64,
    pub property_range: (f64, f64),
}

impl<T: Real> EarthModel<T> {
    /// Depth sample interval in meters.
    pub fn dz_m(&self) -> f64 {
        self.extent_z_km * 1000.0 / self.background.nz() as f64
    }
}

/// Growth plan for the plume anomaly across `num_surveys` monitors.
/// `(first, last)` pairs interpolate linearly in the survey index.
#[derive(Debug, Clone)]
pub struct PlumeSchedule {
    pub num_surveys: usize,
    /// Injection point in grid coordinates (depth row, lateral column).
    pub center_z: f64,
    pub center_x: f64,
    /// Vertical half-radius in grid cells, (first, last).
    pub radius_z: (f64, f64),
    /// Horizontal half-radius in grid cells, (first, last).
    pub radius_x: (f64, f64),
    /// Peak property contrast, (first, last); negative for CO2 in an
    /// impedance-like model. Magnitude must be non-decreasing.
    pub amplitude: (f64, f64),
    /// Upward drift of the center per survey step, in grid cells.
    pub drift_per_survey: f64,
    /// Exponent on the normalized squared radius; 1 is Gaussian, larger
    /// values flatten the core and sharpen the flank.
    pub profile_power: f64,
}

impl PlumeSchedule {
    pub fn validate(&self, nz: usize, nx: usize) -> Result<()> {
        if self.num_surveys == 0 {
            return Err(CoreError::InvalidArg {
                name: "num_surveys",
                why: "need at least one survey",
            });
        }
        if !(self.radius_z.0 > 0.0 && self.radius_x.0 > 0.0) {
            return Err(CoreError::InvalidArg {
                name: "radius",
                why: "radii must be positive",
            });
        }
        if self.radius_z.1 < self.radius_z.0
            || self.radius_x.1 < self.radius_x.0
            || self.amplitude.1.abs() < self.amplitude.0.abs()
        {
            return Err(CoreError::InvalidArg {
                name: "schedule",
                why: "radii and amplitude magnitude must be non-decreasing",
            });
        }
        if !(self.profile_power > 0.0) {
            return Err(CoreError::InvalidArg {
                name: "profile_power",
                why: "must be positive",
            });
        }
        // the last survey's support ellipse must stay inside the grid
        let reach = libm::pow(2.0 * libm::log(1.0 / PLUME_SUPPORT_CUTOFF), 0.5 / self.profile_power);
        let cz_last = self.center_z - self.drift_per_survey * (self.num_surveys as f64 - 1.0);
        let rz = self.radius_z.1 * reach;
        let rx = self.radius_x.1 * reach;
        if cz_last - rz < 0.0
            || self.center_z + rz > (nz - 1) as f64
            || self.center_x - rx < 0.0
            || self.center_x + rx > (nx - 1) as f64
        {
            return Err(CoreError::InvalidArg {
                name: "schedule",
                why: "plume support leaves the grid",
            });
        }
        Ok(())
    }

    /// Interpolated parameters for survey `i` (1-based):
    /// `(center_z, center_x, radius_z, radius_x, amplitude)`.
    pub fn params_at(&self, i: usize) -> Result<(f64, f64, f64, f64, f64)> {
        if i == 0 || i > self.num_surveys {
            return Err(CoreError::InvalidArg {
                name: "survey_index",
                why: "out of 1..=num_surveys",
            });
        }
        let frac = if self.num_surveys > 1 {
            (i - 1) as f64 / (self.num_surveys - 1) as f64
        } else {
            0.0
        };
        let lerp = |(a, b): (f64, f64)| a + (b - a) * frac;
        Ok((
            self.center_z - self.drift_per_survey * (i - 1) as f64,
            self.center_x,
            lerp(self.radius_z),
            lerp(self.radius_x),
            lerp(self.amplitude),
        ))
    }
}

/// Piecewise-constant horizontal layers with gently undulating interfaces
/// and random per-layer property values inside `value_range`.
pub fn build_layered_background<T: Real>(
    nz: usize,
    nx: usize,
    num_layers: usize,
    value_range: (f64, f64),
    extent_z_km: f64,
    extent_x_km: f64,
    property_range: (f64, f64),
    rng: &mut StreamRng,
) -> Result<EarthModel<T>> {
    if num_layers < 2 {
        return Err(CoreError::InvalidArg {
            name: "num_layers",
            why: "need at least 2 layers",
        });
    }
    if nz < num_layers || nx == 0 {
        return Err(CoreError::EmptyShape);
    }
    if !(value_range.0 < value_range.1)
        || value_range.0 < property_range.0
        || value_range.1 > property_range.1
    {
        return Err(CoreError::InvalidArg {
            name: "value_range",
            why: "must be a non-empty subrange of property_range",
        });
    }
    if !(extent_z_km > 0.0) || !(extent_x_km > 0.0) {
        return Err(CoreError::InvalidArg {
            name: "extent",
            why: "must be positive",
        });
    }

    let (lo, hi) = value_range;
    let values: Vec<f64> = (0..num_layers)
        .map(|_| lo + (hi - lo) * rng.next_uniform())
        .collect();

    // undulating interface depths: evenly spaced bases plus a low-frequency
    // sinusoid of ~2% grid height
    struct Interface {
        base: f64,
        amp: f64,
        freq: f64,
        phase: f64,
    }
    let interfaces: Vec<Interface> = (1..num_layers)
        .map(|k| Interface {
            base: nz as f64 * k as f64 / num_layers as f64,
            amp: 0.02 * nz as f64 * (0.5 + rng.next_uniform()),
            freq: 1.0 + 2.0 * rng.next_uniform(),
            phase: 2.0 * core::f64::consts::PI * rng.next_uniform(),
        })
        .collect();

    let mut g = Grid2D::zeros(nz, nx);
    for j in 0..nx {
        let t = j as f64 / nx as f64;
        let mut depths: Vec<f64> = interfaces
            .iter()
            .map(|itf| {
                itf.base + itf.amp * libm::sin(2.0 * core::f64::consts::PI * itf.freq * t + itf.phase)
            })
            .collect();
        depths.sort_by(|a, b| a.partial_cmp(b).expect("finite depths"));
        for i in 0..nz {
            let layer = depths.iter().take_while(|&&d| (i as f64) >= d).count();
            g.set(i, j, T::from_f64(values[layer]));
        }
    }
    Ok(EarthModel {
        background: g,
        extent_z_km,
        extent_x_km,
        property_range,
    })
}

/// Anomaly grid for survey `i` (1-based): a smooth anisotropic blob with
/// compact support (values below `PLUME_SUPPORT_CUTOFF` of peak become 0).
pub fn grow_plume<T: Real>(
    schedule: &PlumeSchedule,
    i: usize,
    nz: usize,
    nx: usize,
) -> Result<Grid2D<T>> {
    schedule.validate(nz, nx)?;
    let (cz, cx, rz, rx, amp) = schedule.params_at(i)?;
    let mut g = Grid2D::zeros(nz, nx);
    if amp == 0.0 {
        return Ok(g);
    }
    let q_cut = 2.0 * libm::log(1.0 / PLUME_SUPPORT_CUTOFF);
    let p = schedule.profile_power;
    for iz in 0..nz {
        let dzr = (iz as f64 - cz) / rz;
        for ix in 0..nx {
            let dxr = (ix as f64 - cx) / rx;
            let q = dzr * dzr + dxr * dxr;
            let qp = libm::pow(q, p);
            if qp <= q_cut {
                g.set(iz, ix, T::from_f64(amp * libm::exp(-0.5 * qp)));
            }
        }
    }
    Ok(g)
}

/// Boolean support mask where the anomaly magnitude exceeds
/// `threshold * peak` for survey `i`.
pub fn plume_mask(
    schedule: &PlumeSchedule,
    i: usize,
    threshold: f64,
    nz: usize,
    nx: usize,
) -> Result<Grid2D<bool>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CoreError::InvalidArg {
            name: "threshold",
            why: "must lie in (0, 1)",
        });
    }
    let anomaly: Grid2D<f64> = grow_plume(schedule, i, nz, nx)?;
    let peak = anomaly
        .as_slice()
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let cut = threshold * peak;
    Ok(anomaly.map(|v| v.abs() > cut))
}

/// Ground truths `x*_i = background + anomaly_i` and noisy data
/// `y_i = A x*_i + sigma * eta_i` for every survey in the schedule.
pub fn simulate_surveys<T: Real>(
    model: &EarthModel<T>,
    schedule: &PlumeSchedule,
    op: &PoststackOperator,
    noise_sigma: f64,
    rng: &StreamRng,
) -> Result<(Vec<Grid2D<T>>, Vec<SurveyData<T>>)> {
    let (nz, nx) = model.background.dims();
    if op.dims() != (nz, nx) {
        return Err(CoreError::ShapeMismatch {
            expected: (nz, nx),
            got: op.dims(),
        });
    }
    schedule.validate(nz, nx)?;
    let mut truths = Vec::with_capacity(schedule.num_surveys);
    let mut surveys = Vec::with_capacity(schedule.num_surveys);
    for i in 1..=schedule.num_surveys {
        let anomaly = grow_plume::<T>(schedule, i, nz, nx)?;
        let mut x = model.background.clone();
        x.add_scaled(&anomaly, T::one())?;
        let clean = op.apply_forward(&x)?;
        let mut noise_rng = rng.derive(i as u64);
        let survey = add_noise(&clean, noise_sigma, i, &mut noise_rng);
        truths.push(x);
        surveys.push(survey);
    }
    Ok((truths, surveys))
}
