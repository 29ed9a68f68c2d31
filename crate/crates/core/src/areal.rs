//! Areal traffic variables measured from vehicle trajectories.
//!
//! Areal flow and areal density weight Edie's generalized definitions by
//! the mean projected vehicle area and normalize by the road width, so that
//! heterogeneous vehicles contribute in proportion to the road surface they
//! cover. Everything here works in SI units (see [`crate::units`]).

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArealError {
    #[error("invalid vehicle category `{name}`: {reason}")]
    InvalidCategory { name: String, reason: String },
    #[error("invalid trajectory for vehicle `{id}`: {reason}")]
    InvalidTrajectory { id: String, reason: String },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("areal speed is undefined for zero areal density")]
    UndefinedSpeed,
    #[error("degenerate window: {0}")]
    DegenerateWindow(String),
    #[error("window too large: neglected boundary term is {fraction:.3} of the volume (limit {limit:.3})")]
    WindowTooLarge { fraction: f64, limit: f64 },
    #[error("scaling inputs must be positive: {0}")]
    NonPositiveScale(String),
    #[error("detector passage with non-positive speed {0}")]
    ZeroSpeedPassage(f64),
    #[error("observation period must be positive")]
    NonPositivePeriod,
}

pub type Result<T> = std::result::Result<T, ArealError>;

/// Physical dimensions and observed speed bounds of one vehicle type.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleCategory {
    pub name: String,
    /// m
    pub length: f64,
    /// m
    pub width: f64,
    /// m/s
    pub v_max_observed: f64,
    /// m/s
    pub v_min_observed: f64,
}

impl VehicleCategory {
    pub fn new(
        name: impl Into<String>,
        length: f64,
        width: f64,
        v_max_observed: f64,
        v_min_observed: f64,
    ) -> Result<Self> {
        let name = name.into();
        let fail = |reason: &str| ArealError::InvalidCategory {
            name: name.clone(),
            reason: reason.to_string(),
        };
        if !(length > 0.0 && length.is_finite()) {
            return Err(fail("length must be positive"));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(fail("width must be positive"));
        }
        if !(v_min_observed >= 0.0 && v_max_observed >= v_min_observed) {
            return Err(fail("observed speeds must satisfy vmax >= vmin >= 0"));
        }
        Ok(Self {
            name,
            length,
            width,
            v_max_observed,
            v_min_observed,
        })
    }

    /// Category with dimensions only; speed bounds left open.
    pub fn with_dimensions(name: impl Into<String>, length: f64, width: f64) -> Result<Self> {
        Self::new(name, length, width, f64::INFINITY, 0.0)
    }

    pub fn projected_area(&self) -> f64 {
        projected_area(self)
    }
}

/// Footprint `length × width` of a category, in m².
pub fn projected_area(category: &VehicleCategory) -> f64 {
    category.length * category.width
}

/// Time-stamped longitudinal positions of one vehicle.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub vehicle_id: String,
    pub category: Arc<VehicleCategory>,
    samples: Vec<(f64, f64)>,
}

impl Trajectory {
    /// `samples` are `(t [s], x [m])` pairs; times must be strictly
    /// increasing and positions non-decreasing.
    pub fn new(
        vehicle_id: impl Into<String>,
        category: Arc<VehicleCategory>,
        samples: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let vehicle_id = vehicle_id.into();
        let fail = |reason: String| ArealError::InvalidTrajectory {
            id: vehicle_id.clone(),
            reason,
        };
        if samples.len() < 2 {
            return Err(fail(format!("{} samples, need at least 2", samples.len())));
        }
        for (i, w) in samples.windows(2).enumerate() {
            let ((t0, x0), (t1, x1)) = (w[0], w[1]);
            if !(t0.is_finite() && x0.is_finite() && t1.is_finite() && x1.is_finite()) {
                return Err(fail(format!("non-finite sample near index {i}")));
            }
            if t1 <= t0 {
                return Err(fail(format!("time not strictly increasing at index {}", i + 1)));
            }
            if x1 < x0 {
                return Err(fail(format!("position decreases at index {}", i + 1)));
            }
        }
        Ok(Self {
            vehicle_id,
            category,
            samples,
        })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn area(&self) -> f64 {
        self.category.projected_area()
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].0
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].0
    }

    /// Position at time `t` by linear interpolation, `None` outside the
    /// sampled span.
    pub fn position_at(&self, t: f64) -> Option<f64> {
        if t < self.start_time() || t > self.end_time() {
            return None;
        }
        let i = self.samples.partition_point(|&(ts, _)| ts <= t);
        if i == self.samples.len() {
            return Some(self.samples[i - 1].1);
        }
        let (ta, xa) = self.samples[i - 1];
        let (tb, xb) = self.samples[i];
        Some(xa + (xb - xa) * (t - ta) / (tb - ta))
    }

    /// First time the vehicle reaches position `x`, `None` if it never does
    /// within the sampled span (or already started beyond it).
    pub fn time_at(&self, x: f64) -> Option<f64> {
        let (t_first, x_first) = self.samples[0];
        if x_first > x {
            return None;
        }
        if x_first == x {
            return Some(t_first);
        }
        self.samples.windows(2).find_map(|w| {
            let ((ta, xa), (tb, xb)) = (w[0], w[1]);
            (xa < x && xb >= x).then(|| ta + (tb - ta) * (x - xa) / (xb - xa))
        })
    }

    /// Distance travelled and time spent inside `region`, with linear
    /// interpolation between samples.
    pub fn clip(&self, region: &RegionVolume) -> (f64, f64) {
        let mut dx = 0.0;
        let mut dt = 0.0;
        for w in self.samples.windows(2) {
            if let Some((s0, s1)) = clip_segment(w[0], w[1], region) {
                let ((ta, xa), (tb, xb)) = (w[0], w[1]);
                dx += (xb - xa) * (s1 - s0);
                dt += (tb - ta) * (s1 - s0);
            }
        }
        (dx, dt)
    }
}

/// Liang–Barsky parameter interval of the segment a→b inside the region.
fn clip_segment(a: (f64, f64), b: (f64, f64), r: &RegionVolume) -> Option<(f64, f64)> {
    let (ta, xa) = a;
    let (tb, xb) = b;
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    for (p, q) in [
        (-(tb - ta), ta - r.t0),
        (tb - ta, r.t1 - ta),
        (-(xb - xa), xa - r.x0),
        (xb - xa, r.x1 - xa),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let s = q / p;
            if p < 0.0 {
                lo = lo.max(s);
            } else {
                hi = hi.min(s);
            }
        }
    }
    (hi > lo).then_some((lo, hi))
}

/// A time–space–width measurement volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionVolume {
    pub x0: f64,
    pub x1: f64,
    pub t0: f64,
    pub t1: f64,
    pub road_width: f64,
}

impl RegionVolume {
    pub fn new(x0: f64, x1: f64, t0: f64, t1: f64, road_width: f64) -> Result<Self> {
        if !(x1 > x0) {
            return Err(ArealError::InvalidRegion(format!("x1 ({x1}) must exceed x0 ({x0})")));
        }
        if !(t1 > t0) {
            return Err(ArealError::InvalidRegion(format!("t1 ({t1}) must exceed t0 ({t0})")));
        }
        if !(road_width > 0.0) {
            return Err(ArealError::InvalidRegion(format!(
                "road width must be positive, got {road_width}"
            )));
        }
        Ok(Self {
            x0,
            x1,
            t0,
            t1,
            road_width,
        })
    }

    pub fn length(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    /// Δx·Δt·w in m²·s.
    pub fn volume(&self) -> f64 {
        self.length() * self.duration() * self.road_width
    }
}

/// `(q_a, k_a, v_a)` in SI units: m²/(s·m), dimensionless, m/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArealState {
    pub flow: f64,
    pub density: f64,
    /// Zero for an empty state.
    pub speed: f64,
}

impl ArealState {
    pub const EMPTY: ArealState = ArealState {
        flow: 0.0,
        density: 0.0,
        speed: 0.0,
    };

    pub fn from_flow_density(flow: f64, density: f64) -> Self {
        let speed = if density > 0.0 { flow / density } else { 0.0 };
        Self { flow, density, speed }
    }

    pub fn is_empty(&self) -> bool {
        self.density == 0.0
    }
}

/// Aggregates of all trajectories clipped to one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMeasure {
    pub region: RegionVolume,
    /// Vehicles with positive time spent in the region.
    pub vehicles: usize,
    /// m²; zero when no vehicle contributes.
    pub mean_area: f64,
    /// Σ dx_i, m.
    pub total_distance: f64,
    /// Σ dt_i, s.
    pub total_time: f64,
}

impl RegionMeasure {
    pub fn is_empty(&self) -> bool {
        self.vehicles == 0
    }

    /// Areal flow `ā·Σdx / (Δx·Δt·w)`, m²/(s·m).
    pub fn areal_flow(&self) -> f64 {
        self.mean_area * self.total_distance / self.region.volume()
    }

    /// Areal density `ā·Σdt / (Δx·Δt·w)`, dimensionless.
    pub fn areal_density(&self) -> f64 {
        self.mean_area * self.total_time / self.region.volume()
    }

    /// Edie flow `Σdx / (Δx·Δt)`, veh/s.
    pub fn count_flow(&self) -> f64 {
        self.total_distance / (self.region.length() * self.region.duration())
    }

    /// Edie density `Σdt / (Δx·Δt)`, veh/m.
    pub fn count_density(&self) -> f64 {
        self.total_time / (self.region.length() * self.region.duration())
    }

    pub fn state(&self) -> ArealState {
        if self.is_empty() {
            return ArealState::EMPTY;
        }
        ArealState {
            flow: self.areal_flow(),
            density: self.areal_density(),
            speed: self.total_distance / self.total_time,
        }
    }
}

/// Clips every trajectory to `region` and accumulates travel totals. A
/// vehicle partially inside contributes its clipped distance and time but
/// its full area to the mean.
pub fn measure_region(trajectories: &[Trajectory], region: &RegionVolume) -> RegionMeasure {
    let mut vehicles = 0usize;
    let mut area_sum = 0.0;
    let mut total_distance = 0.0;
    let mut total_time = 0.0;
    for tr in trajectories {
        let (dx, dt) = tr.clip(region);
        if dt > 0.0 {
            vehicles += 1;
            area_sum += tr.area();
            total_distance += dx;
            total_time += dt;
        }
    }
    RegionMeasure {
        region: *region,
        vehicles,
        mean_area: if vehicles > 0 { area_sum / vehicles as f64 } else { 0.0 },
        total_distance,
        total_time,
    }
}

/// A measured value together with the number of contributing vehicles, so
/// that a legitimately empty region can be told apart from a zero reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured {
    pub value: f64,
    pub vehicles: usize,
}

impl Measured {
    pub fn is_empty(&self) -> bool {
        self.vehicles == 0
    }
}

/// Areal flow over a region, m²/(s·m).
pub fn areal_flow(trajectories: &[Trajectory], region: &RegionVolume) -> Measured {
    let m = measure_region(trajectories, region);
    Measured {
        value: if m.is_empty() { 0.0 } else { m.areal_flow() },
        vehicles: m.vehicles,
    }
}

/// Areal density over a region, dimensionless.
pub fn areal_density(trajectories: &[Trajectory], region: &RegionVolume) -> Measured {
    let m = measure_region(trajectories, region);
    Measured {
        value: if m.is_empty() { 0.0 } else { m.areal_density() },
        vehicles: m.vehicles,
    }
}

/// `q_a / k_a`, m/s.
pub fn areal_speed(flow: f64, density: f64) -> Result<f64> {
    if !(density > 0.0) {
        return Err(ArealError::UndefinedSpeed);
    }
    Ok(flow / density)
}

/// Which side of the time–space region is bounded by the first and last
/// vehicle trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdieWindow {
    /// Vehicles crossing the upstream edge during the period; each travels
    /// the whole distance window.
    Distance,
    /// Vehicles inside the segment at the start of the period; each is
    /// followed for the whole time window.
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdieOptions {
    pub mode: EdieWindow,
    /// Upper bound on the neglected boundary term as a fraction of the
    /// rectangular volume.
    pub max_boundary_fraction: f64,
}

impl EdieOptions {
    pub fn new(mode: EdieWindow) -> Self {
        Self {
            mode,
            max_boundary_fraction: 0.25,
        }
    }
}

/// Result of a windowed estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdieEstimate {
    pub state: ArealState,
    pub vehicles: usize,
    /// Boundary triangles removed from `T·X·W`, as a fraction of it.
    pub boundary_fraction: f64,
}

/// Windowed areal estimates for a platoon bounded by its first and last
/// vehicles.
///
/// Distance window (length `X`, period `T`):
/// `Vol = T·X·W − X²W/2·(1/v₀ + 1/v_N)`, `q_a = ā·n·X / Vol`,
/// `k_a = ā·Σ X/v_i / Vol`.
///
/// Time window: `Vol = T·X·W − T²W/2·(v₀ + v_N)`, `q_a = ā·Σ T·v_i / Vol`,
/// `k_a = ā·n·T / Vol`.
pub fn edie_region_estimates(
    trajectories: &[Trajectory],
    region: &RegionVolume,
    options: EdieOptions,
) -> Result<EdieEstimate> {
    let x_len = region.length();
    let t_len = region.duration();
    let w = region.road_width;

    // (order key, speed, area) of each participating vehicle.
    let mut members: Vec<(f64, f64, f64)> = Vec::new();
    match options.mode {
        EdieWindow::Distance => {
            for tr in trajectories {
                let Some(t_in) = tr.time_at(region.x0) else { continue };
                if t_in < region.t0 || t_in >= region.t1 {
                    continue;
                }
                let speed = match tr.time_at(region.x1) {
                    Some(t_out) => x_len / (t_out - t_in),
                    None => {
                        let (t_end, x_end) = tr.samples()[tr.samples().len() - 1];
                        if t_end > t_in {
                            (x_end - region.x0) / (t_end - t_in)
                        } else {
                            0.0
                        }
                    }
                };
                members.push((t_in, speed, tr.area()));
            }
        }
        EdieWindow::Time => {
            for tr in trajectories {
                let Some(x_start) = tr.position_at(region.t0) else {
                    continue;
                };
                if x_start < region.x0 || x_start >= region.x1 {
                    continue;
                }
                let (t_end, x_end) = match tr.position_at(region.t1) {
                    Some(x) => (region.t1, x),
                    None => tr.samples()[tr.samples().len() - 1],
                };
                let speed = if t_end > region.t0 {
                    (x_end - x_start) / (t_end - region.t0)
                } else {
                    0.0
                };
                // leading vehicle first
                members.push((-x_start, speed, tr.area()));
            }
        }
    }

    if members.is_empty() {
        return Ok(EdieEstimate {
            state: ArealState::EMPTY,
            vehicles: 0,
            boundary_fraction: 0.0,
        });
    }
    members.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = members.len() as f64;
    let mean_area = members.iter().map(|m| m.2).sum::<f64>() / n;
    let v_first = members[0].1;
    let v_last = members[members.len() - 1].1;
    if !(v_first > 0.0 && v_last > 0.0) {
        return Err(ArealError::DegenerateWindow(format!(
            "boundary vehicle speeds must be positive (v0 = {v_first}, vN = {v_last})"
        )));
    }

    let rect = t_len * x_len * w;
    let (boundary, flow_num, density_num) = match options.mode {
        EdieWindow::Distance => {
            if let Some(m) = members.iter().find(|m| !(m.1 > 0.0)) {
                return Err(ArealError::DegenerateWindow(format!(
                    "vehicle crossing at t = {} never advances",
                    m.0
                )));
            }
            let boundary = x_len * x_len * w / 2.0 * (1.0 / v_first + 1.0 / v_last);
            let time_sum: f64 = members.iter().map(|m| x_len / m.1).sum();
            (boundary, mean_area * n * x_len, mean_area * time_sum)
        }
        EdieWindow::Time => {
            let boundary = t_len * t_len * w / 2.0 * (v_first + v_last);
            let dist_sum: f64 = members.iter().map(|m| t_len * m.1).sum();
            (boundary, mean_area * dist_sum, mean_area * n * t_len)
        }
    };
    let fraction = boundary / rect;
    if fraction > options.max_boundary_fraction || fraction >= 1.0 {
        return Err(ArealError::WindowTooLarge {
            fraction,
            limit: options.max_boundary_fraction,
        });
    }
    let vol = rect - boundary;
    Ok(EdieEstimate {
        state: ArealState::from_flow_density(flow_num / vol, density_num / vol),
        vehicles: members.len(),
        boundary_fraction: fraction,
    })
}

fn check_scale(mean_area: f64, road_width: f64) -> Result<f64> {
    if !(mean_area > 0.0) {
        return Err(ArealError::NonPositiveScale(format!("mean area {mean_area}")));
    }
    if !(road_width > 0.0) {
        return Err(ArealError::NonPositiveScale(format!("road width {road_width}")));
    }
    Ok(mean_area / road_width)
}

/// `k_a = (ā / w)·k`, with `k` in veh/m.
pub fn areal_density_from_count(k: f64, mean_area: f64, road_width: f64) -> Result<f64> {
    Ok(check_scale(mean_area, road_width)? * k)
}

/// Inverse of [`areal_density_from_count`], veh/m.
pub fn count_density_from_areal(k_a: f64, mean_area: f64, road_width: f64) -> Result<f64> {
    Ok(k_a / check_scale(mean_area, road_width)?)
}

/// `q_a = (ā / w)·q`, with `q` in veh/s.
pub fn areal_flow_from_count(q: f64, mean_area: f64, road_width: f64) -> Result<f64> {
    Ok(check_scale(mean_area, road_width)? * q)
}

/// Inverse of [`areal_flow_from_count`], veh/s.
pub fn count_flow_from_areal(q_a: f64, mean_area: f64, road_width: f64) -> Result<f64> {
    Ok(q_a / check_scale(mean_area, road_width)?)
}

/// One vehicle crossing a point detector.
#[derive(Debug, Clone)]
pub struct DetectorPassage {
    /// Arrival time at the detector, s.
    pub time: f64,
    pub category: Arc<VehicleCategory>,
    /// m/s
    pub speed: f64,
}

impl DetectorPassage {
    /// Time the detector of length `d` stays covered, `(L_i + d) / v_i`.
    pub fn duration(&self, detector_length: f64) -> Result<f64> {
        if !(self.speed > 0.0) {
            return Err(ArealError::ZeroSpeedPassage(self.speed));
        }
        Ok((self.category.length + detector_length) / self.speed)
    }
}

/// Occupancy `Σ (L_i + d)/v_i / T`.
pub fn occupancy(passages: &[DetectorPassage], detector_length: f64, period: f64) -> Result<f64> {
    if !(period > 0.0) {
        return Err(ArealError::NonPositivePeriod);
    }
    let mut covered = 0.0;
    for p in passages {
        covered += p.duration(detector_length)?;
    }
    Ok(covered / period)
}

/// Homogeneous closed form `O_c = k_a·(w/B)·(1 + d/L)`.
pub fn occupancy_from_ka_homogeneous(k_a: f64, road_width: f64, length: f64, width: f64, detector_length: f64) -> f64 {
    k_a * (road_width / width) * (1.0 + detector_length / length)
}

/// Area occupancy `Σ (L_i + d)·B_i/v_i / (T·w)`.
pub fn area_occupancy(passages: &[DetectorPassage], detector_length: f64, road_width: f64, period: f64) -> Result<f64> {
    if !(period > 0.0) {
        return Err(ArealError::NonPositivePeriod);
    }
    let mut covered = 0.0;
    for p in passages {
        covered += p.duration(detector_length)? * p.category.width;
    }
    Ok(covered / (period * road_width))
}

/// Homogeneous closed form `ao = k_a·(1 + d/L)`.
pub fn area_occupancy_from_ka_homogeneous(k_a: f64, length: f64, detector_length: f64) -> f64 {
    k_a * (1.0 + detector_length / length)
}

/// Screenline areal state from detector passages over a period `T`: the
/// limit of [`measure_region`] for a vanishing region length, with each
/// vehicle crossing at its passage speed. `q_a = ā·n/(T·w)`,
/// `k_a = ā·Σ(1/v_i)/(T·w)`.
pub fn detector_state(passages: &[DetectorPassage], road_width: f64, period: f64) -> Result<ArealState> {
    if !(period > 0.0) {
        return Err(ArealError::NonPositivePeriod);
    }
    if passages.is_empty() {
        return Ok(ArealState::EMPTY);
    }
    let n = passages.len() as f64;
    let mean_area = passages.iter().map(|p| p.category.projected_area()).sum::<f64>() / n;
    let mut pace = 0.0;
    for p in passages {
        if !(p.speed > 0.0) {
            return Err(ArealError::ZeroSpeedPassage(p.speed));
        }
        pace += 1.0 / p.speed;
    }
    let flow = mean_area * n / (period * road_width);
    let density = mean_area * pace / (period * road_width);
    Ok(ArealState::from_flow_density(flow, density))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units;

    fn cat(name: &str, l: f64, b: f64) -> Arc<VehicleCategory> {
        Arc::new(VehicleCategory::with_dimensions(name, l, b).unwrap())
    }

    #[test]
    fn projected_areas_of_table_categories() {
        let car = VehicleCategory::new("car", 4.7, 1.7, units::kmh(65.0), units::kmh(3.0)).unwrap();
        let tw = VehicleCategory::new("TW", 1.8, 0.6, units::kmh(65.0), units::kmh(5.0)).unwrap();
        let bus = VehicleCategory::new("bus", 10.5, 2.5, units::kmh(50.0), units::kmh(3.0)).unwrap();
        assert!((projected_area(&car) - 7.99).abs() < 1e-12);
        assert!((projected_area(&tw) - 1.08).abs() < 1e-12);
        assert!((projected_area(&bus) - 26.25).abs() < 1e-12);
    }

    #[test]
    fn category_rejects_bad_dimensions() {
        assert!(VehicleCategory::with_dimensions("x", 0.0, 1.0).is_err());
        assert!(VehicleCategory::with_dimensions("x", 1.0, -1.0).is_err());
        assert!(VehicleCategory::new("x", 1.0, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn trajectory_validation() {
        let c = cat("car", 4.0, 2.0);
        assert!(Trajectory::new("a", c.clone(), vec![(0.0, 0.0)]).is_err());
        assert!(Trajectory::new("a", c.clone(), vec![(0.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(Trajectory::new("a", c.clone(), vec![(0.0, 5.0), (1.0, 4.0)]).is_err());
        assert!(Trajectory::new("a", c, vec![(0.0, 0.0), (1.0, 0.0)]).is_ok());
    }

    #[test]
    fn clipping_interpolates_at_boundaries() {
        let c = cat("car", 4.0, 2.0);
        let tr = Trajectory::new("a", c, vec![(0.0, 0.0), (10.0, 100.0)]).unwrap();
        let r = RegionVolume::new(20.0, 50.0, 0.0, 4.0, 10.0).unwrap();
        let (dx, dt) = tr.clip(&r);
        assert!((dx - 20.0).abs() < 1e-12);
        assert!((dt - 2.0).abs() < 1e-12);
    }

    #[test]
    fn screenline_flow_of_three_vehicles() {
        // Three 8 m² vehicles crossing x = 100 within one minute; the region
        // is 1 mm long so it behaves as a screenline.
        let c = cat("v8", 4.0, 2.0);
        let trs: Vec<_> = (0..3)
            .map(|i| {
                let t_cross = 10.0 + 15.0 * i as f64;
                Trajectory::new(
                    format!("v{i}"),
                    c.clone(),
                    vec![(t_cross - 10.0, 0.0), (t_cross + 10.0, 200.0)],
                )
                .unwrap()
            })
            .collect();
        let r = RegionVolume::new(100.0, 100.001, 0.0, 60.0, 10.5).unwrap();
        let q = areal_flow(&trs, &r);
        assert_eq!(q.vehicles, 3);
        // 24 m² / ((1/60 h) · 10.5 m)
        assert!((units::to_flow_display(q.value) - 137.142857).abs() < 1e-3);
        // area-sum form: Σ b_i / (Δt·w)
        assert!((q.value - 24.0 / (60.0 * 10.5)).abs() < 1e-9);
    }

    #[test]
    fn snapshot_density_two_vehicles() {
        let c = cat("v8", 4.0, 2.0);
        let trs = vec![
            Trajectory::new("a", c.clone(), vec![(0.0, 20.0), (60.0, 30.0)]).unwrap(),
            Trajectory::new("b", c, vec![(0.0, 60.0), (60.0, 70.0)]).unwrap(),
        ];
        let r = RegionVolume::new(0.0, 100.0, 0.0, 60.0, 10.5).unwrap();
        let k = areal_density(&trs, &r);
        assert!((units::to_density_display(k.value) - 15.238095).abs() < 1e-5);
    }

    #[test]
    fn jam_packing_density_below_theoretical() {
        // Six files of cars across the 10.5 m width, one car length long.
        let c = cat("car", 4.7, 1.7);
        let trs: Vec<_> = (0..6)
            .map(|i| Trajectory::new(format!("c{i}"), c.clone(), vec![(0.0, 0.0), (60.0, 0.0)]).unwrap())
            .collect();
        // oracle: explicit placement, summed footprint over segment area
        let footprint: f64 = 6.0 * 4.7 * 1.7;
        let oracle = footprint / (4.7 * 10.5);
        let r = RegionVolume::new(-0.0001, 4.6999, 0.0, 60.0, 10.5).unwrap();
        let k = areal_density(&trs, &r);
        assert!((k.value - oracle).abs() < 1e-12);
        let disp = units::to_density_display(k.value);
        assert!((disp - 971.43).abs() < 0.01 && disp < 1000.0);
    }

    #[test]
    fn empty_and_stationary_regions() {
        let c = cat("v8", 4.0, 2.0);
        let r = RegionVolume::new(0.0, 100.0, 0.0, 60.0, 10.5).unwrap();
        let q = areal_flow(&[], &r);
        assert!(q.is_empty() && q.value == 0.0);
        let parked = Trajectory::new("p", c, vec![(0.0, 50.0), (60.0, 50.0)]).unwrap();
        let q = areal_flow(std::slice::from_ref(&parked), &r);
        assert_eq!(q.vehicles, 1);
        assert_eq!(q.value, 0.0);
        assert!(areal_density(&[parked], &r).value > 0.0);
    }

    #[test]
    fn speed_from_flow_and_density() {
        let q = units::flow(137.142857);
        let k = units::density(15.238095);
        let v = areal_speed(q, k).unwrap();
        assert!((units::to_kmh(v) - 9.0).abs() < 1e-4);
        assert_eq!(areal_speed(0.0, 0.1).unwrap(), 0.0);
        assert_eq!(areal_speed(1.0, 0.0), Err(ArealError::UndefinedSpeed));
    }

    #[test]
    fn count_to_areal_scaling() {
        let k = 100.0 / 1000.0; // veh/m
        let ka = areal_density_from_count(k, 7.99, 10.5).unwrap();
        assert!((units::to_density_display(ka) - 76.0952).abs() < 1e-3);
        assert_eq!(areal_density_from_count(0.0, 7.99, 10.5).unwrap(), 0.0);
        let back = count_density_from_areal(ka, 7.99, 10.5).unwrap();
        assert!((back - k).abs() <= f64::EPSILON * k);
        assert!(areal_density_from_count(1.0, 0.0, 10.5).is_err());
        assert!(areal_flow_from_count(1.0, 7.99, -1.0).is_err());
    }

    #[test]
    fn occupancy_closed_forms() {
        let oc = occupancy_from_ka_homogeneous(0.0761, 10.5, 4.7, 1.7, 2.0);
        assert!((oc - 0.670049).abs() < 1e-5);
        let ao = area_occupancy_from_ka_homogeneous(0.0761, 4.7, 2.0);
        assert!((ao - 0.108483).abs() < 1e-5);
        assert_eq!(area_occupancy_from_ka_homogeneous(0.3, 4.7, 0.0), 0.3);
        assert!((occupancy_from_ka_homogeneous(0.3, 10.5, 4.7, 1.7, 0.0) - 0.3 * 10.5 / 1.7).abs() < 1e-15);
    }

    #[test]
    fn occupancy_errors_and_empty() {
        let c = cat("car", 4.7, 1.7);
        assert_eq!(occupancy(&[], 2.0, 60.0).unwrap(), 0.0);
        assert_eq!(area_occupancy(&[], 2.0, 10.5, 60.0).unwrap(), 0.0);
        let stopped = DetectorPassage {
            time: 1.0,
            category: c,
            speed: 0.0,
        };
        assert!(matches!(
            occupancy(&[stopped], 2.0, 60.0),
            Err(ArealError::ZeroSpeedPassage(_))
        ));
        assert_eq!(occupancy(&[], 2.0, 0.0), Err(ArealError::NonPositivePeriod));
    }

    fn platoon(n: usize, speed: f64, spacing: f64, c: &Arc<VehicleCategory>) -> Vec<Trajectory> {
        (0..n)
            .map(|i| {
                let x0 = -(i as f64) * spacing;
                Trajectory::new(format!("p{i}"), c.clone(), vec![(0.0, x0), (600.0, x0 + 600.0 * speed)]).unwrap()
            })
            .collect()
    }

    #[test]
    fn time_window_single_vehicle() {
        let c = cat("v8", 4.0, 2.0);
        let tr = platoon(1, 10.0, 20.0, &c);
        let r = RegionVolume::new(-50.0, 50.0, 0.0, 0.5, 10.5).unwrap();
        let e = edie_region_estimates(&tr, &r, EdieOptions::new(EdieWindow::Time)).unwrap();
        // one-term sum over a volume reduced by T²W·v
        let vol = 0.5 * 100.0 * 10.5 - 0.25 * 10.5 / 2.0 * 20.0;
        assert!((e.state.flow - 8.0 * 0.5 * 10.0 / vol).abs() < 1e-12);
        assert_eq!(e.vehicles, 1);
    }

    #[test]
    fn distance_window_halving_quarters_boundary_term() {
        let c = cat("v8", 4.0, 2.0);
        let trs = platoon(40, 10.0, 25.0, &c);
        let opts = EdieOptions::new(EdieWindow::Distance);
        let big = RegionVolume::new(0.0, 20.0, 0.0, 60.0, 10.5).unwrap();
        let small = RegionVolume::new(0.0, 10.0, 0.0, 60.0, 10.5).unwrap();
        let eb = edie_region_estimates(&trs, &big, opts).unwrap();
        let es = edie_region_estimates(&trs, &small, opts).unwrap();
        // boundary volume ∝ X² while the rectangle ∝ X
        let term = |e: &EdieEstimate, r: &RegionVolume| e.boundary_fraction * r.volume();
        assert!((term(&eb, &big) / term(&es, &small) - 4.0).abs() < 1e-9);
        // brute-force screenline: vehicles crossing x = 0 during the period
        let screen = RegionVolume::new(0.0, 1e-6, 0.0, 60.0, 10.5).unwrap();
        let q_screen = areal_flow(&trs, &screen).value;
        let err_big = (eb.state.flow - q_screen).abs();
        let err_small = (es.state.flow - q_screen).abs();
        assert!(err_small < err_big);
    }

    #[test]
    fn window_degenerate_and_oversized() {
        let c = cat("v8", 4.0, 2.0);
        let stopped = vec![Trajectory::new("s", c.clone(), vec![(0.0, 0.0), (60.0, 0.0)]).unwrap()];
        let r = RegionVolume::new(-5.0, 5.0, 0.0, 10.0, 10.5).unwrap();
        assert!(matches!(
            edie_region_estimates(&stopped, &r, EdieOptions::new(EdieWindow::Time)),
            Err(ArealError::DegenerateWindow(_))
        ));
        let trs = platoon(5, 1.0, 10.0, &c);
        let r = RegionVolume::new(0.0, 50.0, 0.0, 60.0, 10.5).unwrap();
        assert!(matches!(
            edie_region_estimates(&trs, &r, EdieOptions::new(EdieWindow::Distance)),
            Err(ArealError::WindowTooLarge { .. })
        ));
    }
}
