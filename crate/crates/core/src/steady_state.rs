//! Stationary-period detection from oblique cumulative area and occupancy
//! curves.

use std::sync::Arc;

use thiserror::Error;

use crate::areal::{self, ArealError, ArealState, DetectorPassage, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteadyError {
    #[error("negative increment {value} at t = {t}")]
    NegativeIncrement { t: f64, value: f64 },
    #[error("events must be sorted by time (t = {0} after a later event)")]
    Unsorted(f64),
    #[error("degenerate interval [{t_s}, {t_e}]")]
    DegenerateInterval { t_s: f64, t_e: f64 },
    #[error("curves are not on a common time grid")]
    GridMismatch,
    #[error(transparent)]
    Areal(#[from] ArealError),
}

pub type Result<T> = std::result::Result<T, SteadyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    /// Cumulative projected area, m².
    Area,
    /// Cumulative detector occupancy time, s.
    Occupancy,
}

/// Right-continuous step curve: the value at `t` includes every event at
/// or before `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeCurve {
    pub kind: CurveKind,
    /// `(t, value after the event)`
    pub points: Vec<(f64, f64)>,
}

impl CumulativeCurve {
    fn from_increments(kind: CurveKind, events: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut points: Vec<(f64, f64)> = Vec::new();
        let mut total = 0.0;
        for (t, inc) in events {
            if !(inc >= 0.0) {
                return Err(SteadyError::NegativeIncrement { t, value: inc });
            }
            if let Some(&(prev, _)) = points.last() {
                if t < prev {
                    return Err(SteadyError::Unsorted(t));
                }
            }
            total += inc;
            match points.last_mut() {
                Some(last) if last.0 == t => last.1 = total,
                _ => points.push((t, total)),
            }
        }
        Ok(Self { kind, points })
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.points.partition_point(|p| p.0 <= t);
        if i == 0 {
            0.0
        } else {
            self.points[i - 1].1
        }
    }

    pub fn total(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    /// The curve evaluated on `times`.
    pub fn resample(&self, times: &[f64]) -> CumulativeCurve {
        CumulativeCurve {
            kind: self.kind,
            points: times.iter().map(|&t| (t, self.value_at(t))).collect(),
        }
    }
}

/// Running sum of `(t, area)` arrivals.
pub fn cumulative_area(arrivals: &[(f64, f64)]) -> Result<CumulativeCurve> {
    CumulativeCurve::from_increments(CurveKind::Area, arrivals.iter().copied())
}

/// Running sum of detector occupancy times `(L_i + d)/v_i`.
pub fn cumulative_occupancy(passages: &[DetectorPassage], detector_length: f64) -> Result<CumulativeCurve> {
    let mut events = Vec::with_capacity(passages.len());
    for p in passages {
        events.push((p.time, p.duration(detector_length)?));
    }
    CumulativeCurve::from_increments(CurveKind::Occupancy, events)
}

/// Passages of `trajectories` across the point `x`, sorted by time. The
/// speed is that of the sample segment in which the crossing happens.
pub fn passages_at(trajectories: &[Trajectory], x: f64) -> Vec<DetectorPassage> {
    let mut out = Vec::new();
    for tr in trajectories {
        let s = tr.samples();
        if let Some(w) = s.windows(2).find(|w| w[0].1 <= x && x <= w[1].1 && w[1].1 > w[0].1) {
            let speed = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            let time = w[0].0 + (x - w[0].1) / speed;
            out.push(DetectorPassage {
                time,
                category: Arc::clone(&tr.category),
                speed,
            });
        }
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    out
}

/// A cumulative curve with a linear trend removed:
/// `values[i] = A(t_i) − rate·(t_i − t_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObliqueCurve {
    pub kind: CurveKind,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub rate: f64,
    pub t_s: f64,
}

impl ObliqueCurve {
    /// Value of the untransformed curve at grid point `i`.
    pub fn raw(&self, i: usize) -> f64 {
        self.values[i] + self.rate * (self.times[i] - self.t_s)
    }
}

/// Oblique transform of `curve` about `t_s`. Without an explicit `rate`
/// the chord slope `(A(t_e) − A(t_s))/(t_e − t_s)` is used, which makes the
/// transformed curve equal at both ends.
pub fn oblique_transform(curve: &CumulativeCurve, t_s: f64, t_e: f64, rate: Option<f64>) -> Result<ObliqueCurve> {
    if !(t_e > t_s) {
        return Err(SteadyError::DegenerateInterval { t_s, t_e });
    }
    let rate = rate.unwrap_or_else(|| (curve.value_at(t_e) - curve.value_at(t_s)) / (t_e - t_s));
    Ok(ObliqueCurve {
        kind: curve.kind,
        times: curve.points.iter().map(|p| p.0).collect(),
        values: curve.points.iter().map(|p| p.1 - rate * (p.0 - t_s)).collect(),
        rate,
        t_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionParams {
    /// s
    pub min_duration: f64,
    /// Largest allowed absolute OLS residual as a fraction of the raw
    /// curve's increase over the window.
    pub max_residual: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            min_duration: 30.0,
            max_residual: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyWindow {
    pub t_start: f64,
    pub t_end: f64,
    /// Mean area arrival rate, m²/s.
    pub a0: f64,
    /// Mean occupancy rate, s/s.
    pub b0: f64,
    /// Filled by [`annotate_windows`].
    pub state: Option<ArealState>,
}

/// OLS fit of `values` against `times` over `[i, j]`; returns the largest
/// absolute residual and the residual sum of squares.
fn ols(times: &[f64], values: &[f64], i: usize, j: usize) -> (f64, f64) {
    let n = (j - i + 1) as f64;
    let t0 = times[i];
    let (mut st, mut sv) = (0.0, 0.0);
    for k in i..=j {
        st += times[k] - t0;
        sv += values[k];
    }
    let (tm, vm) = (st / n, sv / n);
    let (mut stt, mut stv) = (0.0, 0.0);
    for k in i..=j {
        let dt = times[k] - t0 - tm;
        stt += dt * dt;
        stv += dt * (values[k] - vm);
    }
    let slope = if stt > 0.0 { stv / stt } else { 0.0 };
    let (mut max, mut sse) = (0.0f64, 0.0);
    for k in i..=j {
        let r = values[k] - vm - slope * (times[k] - t0 - tm);
        max = max.max(r.abs());
        sse += r * r;
    }
    (max, sse)
}

struct Detector<'a> {
    curves: [&'a ObliqueCurve; 2],
    params: DetectionParams,
}

impl Detector<'_> {
    fn times(&self) -> &[f64] {
        &self.curves[0].times
    }

    fn increase(c: &ObliqueCurve, i: usize, j: usize) -> f64 {
        (c.raw(j) - c.raw(i)).abs()
    }

    fn linear(&self, i: usize, j: usize) -> bool {
        self.curves.iter().all(|c| {
            let (max, _) = ols(&c.times, &c.values, i, j);
            max <= self.params.max_residual * Self::increase(c, i, j)
        })
    }

    fn long_enough(&self, i: usize, j: usize) -> bool {
        self.times()[j] - self.times()[i] >= self.params.min_duration
    }

    /// Scale-free two-piece misfit when `[a, c]` is split at `m`.
    fn split_cost(&self, a: usize, m: usize, c: usize) -> f64 {
        self.curves
            .iter()
            .map(|cv| {
                let scale = Self::increase(cv, a, c).max(f64::MIN_POSITIVE);
                (ols(&cv.times, &cv.values, a, m).1 + ols(&cv.times, &cv.values, m, c).1) / (scale * scale)
            })
            .sum()
    }

    /// Move the shared end point of two adjacent windows to the best
    /// two-piece split, if both pieces still qualify.
    fn refine(&self, a: usize, b: usize, c: usize) -> usize {
        let mut best = (self.split_cost(a, b, c), b);
        for m in a + 1..c {
            if !(self.long_enough(a, m) && self.long_enough(m, c)) {
                continue;
            }
            let cost = self.split_cost(a, m, c);
            if cost < best.0 {
                best = (cost, m);
            }
        }
        let m = best.1;
        if m != b && self.linear(a, m) && self.linear(m, c) {
            m
        } else {
            b
        }
    }

    fn detect(&self) -> Vec<(usize, usize)> {
        let times = self.times();
        let n = times.len();
        let mut spans: Vec<(usize, usize)> = Vec::new();
        let mut s = 0;
        while s + 1 < n {
            let Some(mut e) = (s + 1..n).find(|&e| self.long_enough(s, e)) else {
                break;
            };
            if !self.linear(s, e) {
                s += 1;
                continue;
            }
            while e + 1 < n && self.linear(s, e + 1) {
                e += 1;
            }
            spans.push((s, e));
            s = e;
        }
        for w in 1..spans.len() {
            let (a, b) = spans[w - 1];
            let (b2, c) = spans[w];
            if b == b2 {
                let m = self.refine(a, b, c);
                spans[w - 1].1 = m;
                spans[w].0 = m;
            }
        }
        spans
    }
}

/// Maximal non-overlapping windows, at least `min_duration` long, over
/// which both oblique curves are linear. Consecutive windows may share an
/// end point.
pub fn detect_steady_windows(
    oblique_area: &ObliqueCurve,
    oblique_occupancy: &ObliqueCurve,
    params: &DetectionParams,
) -> Result<Vec<SteadyWindow>> {
    if oblique_area.times != oblique_occupancy.times {
        return Err(SteadyError::GridMismatch);
    }
    let det = Detector {
        curves: [oblique_area, oblique_occupancy],
        params: *params,
    };
    let times = &oblique_area.times;
    Ok(det
        .detect()
        .into_iter()
        .map(|(i, j)| {
            let span = times[j] - times[i];
            SteadyWindow {
                t_start: times[i],
                t_end: times[j],
                a0: (oblique_area.raw(j) - oblique_area.raw(i)) / span,
                b0: (oblique_occupancy.raw(j) - oblique_occupancy.raw(i)) / span,
                state: None,
            }
        })
        .collect())
}

/// Residual check of one window, independent of the detector.
pub fn window_is_linear(curve: &ObliqueCurve, t_start: f64, t_end: f64, max_residual: f64) -> bool {
    let i = curve.times.partition_point(|&t| t < t_start);
    let j = curve.times.partition_point(|&t| t <= t_end).saturating_sub(1);
    if j <= i {
        return false;
    }
    let (max, _) = ols(&curve.times, &curve.values, i, j);
    max <= max_residual * (curve.raw(j) - curve.raw(i)).abs()
}

/// Attach the detector areal state of each window, using the passages
/// that arrive inside it.
pub fn annotate_windows(windows: &mut [SteadyWindow], passages: &[DetectorPassage], road_width: f64) -> Result<()> {
    for w in windows {
        let inside: Vec<DetectorPassage> = passages
            .iter()
            .filter(|p| p.time >= w.t_start && p.time < w.t_end)
            .cloned()
            .collect();
        w.state = Some(areal::detector_state(&inside, road_width, w.t_end - w.t_start)?);
    }
    Ok(())
}

/// Detection pipeline from detector passages: cumulative curves sampled at
/// the passage times, chord-based oblique transform over the whole record,
/// detection and annotation.
pub fn steady_windows_from_passages(
    passages: &[DetectorPassage],
    detector_length: f64,
    road_width: f64,
    params: &DetectionParams,
) -> Result<Vec<SteadyWindow>> {
    if passages.len() < 2 {
        return Ok(Vec::new());
    }
    let arrivals: Vec<(f64, f64)> = passages.iter().map(|p| (p.time, p.category.projected_area())).collect();
    let area = cumulative_area(&arrivals)?;
    let occ = cumulative_occupancy(passages, detector_length)?;
    let grid = area.times();
    let (t_s, t_e) = (grid[0], grid[grid.len() - 1]);
    if !(t_e > t_s) {
        return Ok(Vec::new());
    }
    let oa = oblique_transform(&area.resample(&grid), t_s, t_e, None)?;
    let ot = oblique_transform(&occ.resample(&grid), t_s, t_e, None)?;
    let mut windows = detect_steady_windows(&oa, &ot, params)?;
    annotate_windows(&mut windows, passages, road_width)?;
    Ok(windows)
}
