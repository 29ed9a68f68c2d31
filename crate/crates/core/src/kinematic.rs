//! Kinematic-wave analytics: shocks, characteristics, Riemann fans and a
//! front-tracking solver for piecewise-constant initial data.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use thiserror::Error;

use crate::fd::{FdError, FdFamily, FdParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicError {
    #[error(transparent)]
    Fd(#[from] FdError),
    #[error("shock speed undefined between equal densities ({0})")]
    EqualDensities(f64),
    #[error("flux is discontinuous at the critical density; exact wave theory needs a continuous flux")]
    DiscontinuousFlux,
    #[error(
        "flux is not concave at the critical density (free-branch slope {free:.6} < congested slope {congested:.6})"
    )]
    NonConcave { free: f64, congested: f64 },
    #[error("invalid initial condition: {0}")]
    InvalidInitial(String),
    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(f64),
    #[error("interaction cap of {cap} reached at t = {reached_time} s")]
    InteractionCap {
        cap: usize,
        reached_time: f64,
        partial: Box<MocSolution>,
    },
}

pub type Result<T> = std::result::Result<T, KinematicError>;

/// A density with its flow and speed under one diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficState {
    pub density: f64,
    pub flow: f64,
    pub speed: f64,
}

impl TrafficState {
    pub fn new(params: &FdParams, density: f64) -> Result<Self> {
        let flow = params.flow(density)?;
        let speed = if density > 0.0 {
            flow / density
        } else {
            params.max_speed().unwrap_or(0.0)
        };
        Ok(Self { density, flow, speed })
    }
}

/// `(q_L − q_R)/(k_L − k_R)`.
pub fn shock_speed(params: &FdParams, k_left: f64, k_right: f64) -> Result<f64> {
    let (ql, qr) = (params.flow(k_left)?, params.flow(k_right)?);
    if k_left == k_right {
        return Err(KinematicError::EqualDensities(k_left));
    }
    Ok((ql - qr) / (k_left - k_right))
}

pub fn characteristic_speed(params: &FdParams, k: f64) -> Result<f64> {
    Ok(params.characteristic_speed(k)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Wave {
    Shock {
        left: f64,
        right: f64,
        speed: f64,
    },
    /// Fan whose left edge moves at `head_speed` and right edge at
    /// `tail_speed`.
    Rarefaction {
        left: f64,
        right: f64,
        head_speed: f64,
        tail_speed: f64,
    },
}

impl Wave {
    pub fn left(&self) -> f64 {
        match *self {
            Wave::Shock { left, .. } | Wave::Rarefaction { left, .. } => left,
        }
    }

    pub fn right(&self) -> f64 {
        match *self {
            Wave::Shock { right, .. } | Wave::Rarefaction { right, .. } => right,
        }
    }

    /// Slowest and fastest speed of the wave.
    pub fn speed_range(&self) -> (f64, f64) {
        match *self {
            Wave::Shock { speed, .. } => (speed, speed),
            Wave::Rarefaction {
                head_speed, tail_speed, ..
            } => (head_speed, tail_speed),
        }
    }
}

/// Self-similar solution of one Riemann problem.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFan {
    pub left: f64,
    pub right: f64,
    pub waves: Vec<Wave>,
}

impl WaveFan {
    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }

    /// Density at `ξ = x/t`.
    pub fn sample(&self, params: &FdParams, xi: f64) -> f64 {
        let mut state = self.left;
        for wave in &self.waves {
            match *wave {
                Wave::Shock { speed, right, .. } => {
                    if xi < speed {
                        return state;
                    }
                    state = right;
                }
                Wave::Rarefaction {
                    left,
                    right,
                    head_speed,
                    tail_speed,
                } => {
                    if xi < head_speed {
                        return state;
                    }
                    if xi <= tail_speed {
                        return invert_characteristic(params, xi, right, left);
                    }
                    state = right;
                }
            }
        }
        state
    }
}

/// Density in `[lo, hi]` whose characteristic speed is `xi` (speeds
/// decrease with density on a concave flux).
fn invert_characteristic(params: &FdParams, xi: f64, mut lo: f64, mut hi: f64) -> f64 {
    let c = |k: f64| params.characteristic_speed(k).unwrap_or(f64::NAN);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if c(mid) > xi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Entropy solution of the Riemann problem `(k_left, k_right)` for a
/// concave flux. Transcritical fans are split at the critical density.
pub fn solve_riemann(params: &FdParams, k_left: f64, k_right: f64) -> Result<WaveFan> {
    params.flow(k_left)?;
    params.flow(k_right)?;
    let mut waves = Vec::new();
    if k_left < k_right {
        waves.push(Wave::Shock {
            left: k_left,
            right: k_right,
            speed: shock_speed(params, k_left, k_right)?,
        });
    } else if k_left > k_right {
        let fan = |left: f64, right: f64, head: f64| -> Result<Wave> {
            Ok(Wave::Rarefaction {
                left,
                right,
                head_speed: head,
                tail_speed: params.characteristic_speed(right)?,
            })
        };
        match params.k_crit().filter(|_| params.family() != FdFamily::Underwood) {
            Some(kc) if k_left > kc && k_right < kc => {
                let head = params.characteristic_speed(k_left)?;
                waves.push(Wave::Rarefaction {
                    left: k_left,
                    right: kc,
                    head_speed: head,
                    tail_speed: params.characteristic_speed_right(kc)?,
                });
                waves.push(fan(kc, k_right, params.characteristic_speed(kc)?)?);
            }
            _ => {
                let head = params.characteristic_speed_right(k_left)?;
                waves.push(fan(k_left, k_right, head)?);
            }
        }
    }
    Ok(WaveFan {
        left: k_left,
        right: k_right,
        waves,
    })
}

/// Check that exact wave theory applies: continuous, concave flux with an
/// implemented derivative.
pub fn require_concave(params: &FdParams) -> Result<()> {
    match *params {
        FdParams::Greenshields { .. } => Ok(()),
        FdParams::Daganzo { .. } | FdParams::Smulders { .. } => {
            if !params.is_continuous() {
                return Err(KinematicError::DiscontinuousFlux);
            }
            let kc = params.k_crit().unwrap_or(0.0);
            let free = params.characteristic_speed(kc)?;
            let congested = params.characteristic_speed_right(kc)?;
            if free < congested - 1e-12 * free.abs().max(congested.abs()) {
                return Err(KinematicError::NonConcave { free, congested });
            }
            Ok(())
        }
        _ => Err(FdError::Unsupported(params.family()).into()),
    }
}

/// Piecewise-constant density on `[0, length]`; `densities[i]` holds left
/// of `breakpoints[i]` and right of `breakpoints[i − 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseInitialCondition {
    length: f64,
    breakpoints: Vec<f64>,
    densities: Vec<f64>,
}

impl PiecewiseInitialCondition {
    pub fn new(length: f64, breakpoints: Vec<f64>, densities: Vec<f64>) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(KinematicError::InvalidInitial(format!(
                "length must be positive, got {length}"
            )));
        }
        if densities.len() != breakpoints.len() + 1 {
            return Err(KinematicError::InvalidInitial(format!(
                "{} breakpoints need {} densities, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                densities.len()
            )));
        }
        let mut prev = 0.0;
        for &b in &breakpoints {
            if !(b > prev && b < length) {
                return Err(KinematicError::InvalidInitial(format!(
                    "breakpoints must increase strictly inside (0, {length}), found {b}"
                )));
            }
            prev = b;
        }
        if let Some(k) = densities.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
            return Err(KinematicError::InvalidInitial(format!(
                "negative or non-finite density {k}"
            )));
        }
        Ok(Self {
            length,
            breakpoints,
            densities,
        })
    }

    /// Build from `(x0, x1, k)` blocks over a background density; blocks
    /// must not overlap.
    pub fn from_blocks(length: f64, background: f64, blocks: &[(f64, f64, f64)]) -> Result<Self> {
        let mut blocks = blocks.to_vec();
        blocks.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut breakpoints = Vec::new();
        let mut densities = vec![background];
        let mut cursor = 0.0;
        for (x0, x1, k) in blocks {
            if !(x0 >= cursor && x1 > x0 && x1 <= length) {
                return Err(KinematicError::InvalidInitial(format!(
                    "block [{x0}, {x1}] overlaps or leaves the domain"
                )));
            }
            if x0 > 0.0 {
                breakpoints.push(x0);
                densities.push(k);
            } else {
                densities[0] = k;
            }
            if x1 < length {
                breakpoints.push(x1);
                densities.push(background);
            }
            cursor = x1;
        }
        // merge equal neighbours created by touching blocks
        let mut bp = Vec::new();
        let mut ks = vec![densities[0]];
        for (b, k) in breakpoints.into_iter().zip(densities.into_iter().skip(1)) {
            if Some(&k) == ks.last() {
                continue;
            }
            if bp.last() == Some(&b) {
                ks.pop();
                bp.pop();
                if Some(&k) == ks.last() {
                    continue;
                }
            }
            bp.push(b);
            ks.push(k);
        }
        Self::new(length, bp, ks)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn density_at(&self, x: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= x);
        self.densities[i]
    }

    /// `∫ k dx` over `[0, length]`.
    pub fn total_area(&self) -> f64 {
        let mut edges = vec![0.0];
        edges.extend_from_slice(&self.breakpoints);
        edges.push(self.length);
        edges
            .windows(2)
            .zip(&self.densities)
            .map(|(e, k)| (e[1] - e[0]) * k)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MocOptions {
    /// Linear pieces used to approximate each curved flux branch; a
    /// rarefaction across a full branch splits into this many wavelets.
    pub n_fan: usize,
    pub max_interactions: usize,
    /// Collisions closer than this in time (s) and space (m) are resolved
    /// as one multi-state Riemann problem.
    pub tie_tolerance: f64,
}

impl Default for MocOptions {
    fn default() -> Self {
        Self {
            n_fan: 32,
            max_interactions: 200_000,
            tie_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveKind {
    Shock,
    Wavelet,
}

impl fmt::Display for WaveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WaveKind::Shock => "shock",
            WaveKind::Wavelet => "wavelet",
        })
    }
}

/// Birth of one front.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveEvent {
    pub t: f64,
    pub x: f64,
    pub kind: WaveKind,
    pub left: f64,
    pub right: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Front {
    id: usize,
    x0: f64,
    t0: f64,
    speed: f64,
    left: usize,
    right: usize,
}

impl Front {
    fn position(&self, t: f64) -> f64 {
        self.x0 + self.speed * (t - self.t0)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    t: f64,
    fronts: Vec<Front>,
    left: usize,
}

/// Front-tracking solution on a density grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MocSolution {
    grid: Vec<f64>,
    snapshots: Vec<Snapshot>,
    events: Vec<WaveEvent>,
    interactions: usize,
    horizon: f64,
}

impl MocSolution {
    pub fn events(&self) -> &[WaveEvent] {
        &self.events
    }

    pub fn interactions(&self) -> usize {
        self.interactions
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Density nodes the piecewise-linear flux interpolates.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    fn snapshot(&self, t: f64) -> &Snapshot {
        let i = self.snapshots.partition_point(|s| s.t <= t);
        &self.snapshots[i.saturating_sub(1)]
    }

    /// Density at `(x, t)`; on a front the right state is returned.
    pub fn sample(&self, x: f64, t: f64) -> f64 {
        let snap = self.snapshot(t);
        let i = snap.fronts.partition_point(|f| f.position(t) <= x);
        let node = if i == 0 { snap.left } else { snap.fronts[i - 1].right };
        self.grid[node]
    }

    /// `∫ k dx` over `[x0, x1]` at time `t`, exact for the tracked
    /// piecewise-constant solution.
    pub fn total_area(&self, x0: f64, x1: f64, t: f64) -> f64 {
        let snap = self.snapshot(t);
        let mut area = 0.0;
        let mut cursor = x0;
        let mut state = snap.left;
        for f in &snap.fronts {
            let p = f.position(t);
            if p > cursor {
                let end = p.min(x1);
                area += (end - cursor) * self.grid[state];
                cursor = end;
            }
            state = f.right;
            if cursor >= x1 {
                return area;
            }
        }
        area + (x1 - cursor).max(0.0) * self.grid[state]
    }

    /// Mean density of each cell `[x_j, x_j + dx]`, `j = 0..n`.
    pub fn cell_averages(&self, x0: f64, dx: f64, n: usize, t: f64) -> Vec<f64> {
        (0..n)
            .map(|j| {
                let a = x0 + j as f64 * dx;
                self.total_area(a, a + dx, t) / dx
            })
            .collect()
    }

    /// `grid[t][x]` sampled at the given coordinates.
    pub fn raster(&self, xs: &[f64], ts: &[f64]) -> Vec<Vec<f64>> {
        ts.iter()
            .map(|&t| xs.iter().map(|&x| self.sample(x, t)).collect())
            .collect()
    }
}

/// Nodes of the piecewise-linear flux used by front tracking.
fn flux_grid(params: &FdParams, n_fan: usize, extra: &[f64]) -> Vec<f64> {
    let k_jam = params.k_jam();
    let mut grid: Vec<f64> = match *params {
        FdParams::Greenshields { .. } => (0..=n_fan).map(|j| k_jam * j as f64 / n_fan as f64).collect(),
        FdParams::Daganzo { k_crit, .. } => vec![0.0, k_crit, k_jam],
        FdParams::Smulders { k_crit, .. } => {
            let mut g: Vec<f64> = (0..=n_fan).map(|j| k_crit * j as f64 / n_fan as f64).collect();
            g.push(k_jam);
            g
        }
        _ => vec![0.0, k_jam],
    };
    grid.extend_from_slice(extra);
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * k_jam);
    grid
}

struct Tracker<'a> {
    grid: &'a [f64],
    flux: Vec<f64>,
    next_id: usize,
}

impl Tracker<'_> {
    /// Fronts of the Riemann problem between grid nodes on the
    /// interpolated flux, left to right.
    fn riemann(&mut self, left: usize, right: usize, x: f64, t: f64) -> Vec<Front> {
        let mut fronts = Vec::new();
        let mut push = |tracker: &mut Self, l: usize, r: usize| {
            let speed = (tracker.flux[l] - tracker.flux[r]) / (tracker.grid[l] - tracker.grid[r]);
            fronts.push(Front {
                id: tracker.next_id,
                x0: x,
                t0: t,
                speed,
                left: l,
                right: r,
            });
            tracker.next_id += 1;
        };
        match left.cmp(&right) {
            Ordering::Equal => {}
            Ordering::Less => push(self, left, right),
            Ordering::Greater => {
                let mut start = left;
                let mut node = left;
                while node > right {
                    let slope = |a: usize, b: usize| (self.flux[a] - self.flux[b]) / (self.grid[a] - self.grid[b]);
                    let s = slope(start, node);
                    let next = slope(node, node - 1);
                    // merge collinear pieces into one contact
                    if node != start && (next - s).abs() > 1e-12 * next.abs().max(s.abs()).max(1e-12) {
                        push(self, start, node);
                        start = node;
                    }
                    node -= 1;
                }
                push(self, start, right);
            }
        }
        fronts
    }
}

#[derive(Debug, PartialEq)]
struct Collision {
    t: f64,
    left: usize,
    right: usize,
}

impl Eq for Collision {}

impl Ord for Collision {
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then_with(|| other.left.cmp(&self.left))
    }
}

impl PartialOrd for Collision {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn collision(a: &Front, b: &Front, now: f64) -> Option<Collision> {
    if a.speed <= b.speed {
        return None;
    }
    let gap = (b.position(now) - a.position(now)).max(0.0);
    Some(Collision {
        t: now + gap / (a.speed - b.speed),
        left: a.id,
        right: b.id,
    })
}

/// Front tracking from piecewise-constant data up to `horizon` seconds.
/// The flux is replaced by its piecewise-linear interpolant on a density
/// grid, so every wave is a discontinuity and every interaction is again a
/// Riemann problem between grid nodes.
pub fn moc_solve(
    params: &FdParams,
    init: &PiecewiseInitialCondition,
    horizon: f64,
    options: &MocOptions,
) -> Result<MocSolution> {
    require_concave(params)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(KinematicError::InvalidHorizon(horizon));
    }
    for &k in init.densities() {
        params.flow(k)?;
    }
    let grid = flux_grid(params, options.n_fan.max(1), init.densities());
    let node_of = |k: f64| {
        grid.iter()
            .enumerate()
            .min_by(|a, b| (a.1 - k).abs().total_cmp(&(b.1 - k).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    let flux: Vec<f64> = grid.iter().map(|&k| params.flow(k).unwrap_or(0.0)).collect();
    let mut tracker = Tracker {
        grid: &grid,
        flux,
        next_id: 0,
    };

    let nodes: Vec<usize> = init.densities().iter().map(|&k| node_of(k)).collect();
    let mut fronts: Vec<Front> = Vec::new();
    for (i, &x) in init.breakpoints().iter().enumerate() {
        fronts.extend(tracker.riemann(nodes[i], nodes[i + 1], x, 0.0));
    }
    let mut events: Vec<WaveEvent> = Vec::new();
    let log = |events: &mut Vec<WaveEvent>, new: &[Front], grid: &[f64]| {
        for f in new {
            events.push(WaveEvent {
                t: f.t0,
                x: f.x0,
                kind: if f.left < f.right {
                    WaveKind::Shock
                } else {
                    WaveKind::Wavelet
                },
                left: grid[f.left],
                right: grid[f.right],
                speed: f.speed,
            });
        }
    };
    log(&mut events, &fronts, &grid);

    let mut queue = BinaryHeap::new();
    for pair in fronts.windows(2) {
        queue.extend(collision(&pair[0], &pair[1], 0.0));
    }
    let left_state = nodes[0];
    let mut snapshots = vec![Snapshot {
        t: 0.0,
        fronts: fronts.clone(),
        left: left_state,
    }];
    let mut interactions = 0;
    let tol = options.tie_tolerance;

    while let Some(event) = queue.pop() {
        if event.t > horizon {
            break;
        }
        let Some(i) = fronts.iter().position(|f| f.id == event.left) else {
            continue;
        };
        if fronts.get(i + 1).map(|f| f.id) != Some(event.right) {
            continue;
        }
        if interactions >= options.max_interactions {
            return Err(KinematicError::InteractionCap {
                cap: options.max_interactions,
                reached_time: event.t,
                partial: Box::new(MocSolution {
                    grid: grid.clone(),
                    snapshots,
                    events,
                    interactions,
                    horizon: event.t,
                }),
            });
        }
        interactions += 1;
        let t = event.t;
        let x = 0.5 * (fronts[i].position(t) + fronts[i + 1].position(t));
        let xtol = tol * x.abs().max(1.0);
        let mut lo = i;
        while lo > 0 && (fronts[lo - 1].position(t) - x).abs() <= xtol {
            lo -= 1;
        }
        let mut hi = i + 1;
        while hi + 1 < fronts.len() && (fronts[hi + 1].position(t) - x).abs() <= xtol {
            hi += 1;
        }
        let (l, r) = (fronts[lo].left, fronts[hi].right);
        let new = tracker.riemann(l, r, x, t);
        log(&mut events, &new, &grid);
        let n_new = new.len();
        fronts.splice(lo..=hi, new);
        let from = lo.saturating_sub(1);
        let to = (lo + n_new + 1).min(fronts.len());
        for j in from..to.saturating_sub(1) {
            queue.extend(collision(&fronts[j], &fronts[j + 1], t));
        }
        if snapshots.last().is_some_and(|s| s.t == t) {
            snapshots.pop();
        }
        snapshots.push(Snapshot {
            t,
            fronts: fronts.clone(),
            left: left_state,
        });
    }

    Ok(MocSolution {
        grid,
        snapshots,
        events,
        interactions,
        horizon,
    })
}
