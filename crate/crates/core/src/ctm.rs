//! Godunov cell transmission for the areal conservation law, single- and
//! multiclass.
//!
//! Interface `j` is the upstream face of cell `j`; a road of `n` cells has
//! interfaces `0..=n`. Densities are dimensionless and fluxes SI.

use thiserror::Error;

use crate::fd::{CategoryFdSet, FdError, FdParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtmError {
    #[error(transparent)]
    Fd(#[from] FdError),
    #[error("CFL violated: dt = {dt} s exceeds min cell length / max free speed = {limit} s")]
    Cfl { dt: f64, limit: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("area balance broken at step {step} for category {category}: residual {residual:e}")]
    Conservation {
        step: usize,
        category: usize,
        residual: f64,
    },
}

pub type Result<T> = std::result::Result<T, CtmError>;

/// Sending function of a single-class cell.
pub fn demand(params: &FdParams, k: f64) -> Result<f64> {
    Ok(params.demand(k)?)
}

/// Receiving function of a single-class cell.
pub fn supply(params: &FdParams, k: f64) -> Result<f64> {
    Ok(params.supply(k)?)
}

/// Godunov flux `min(λ(k_up), μ(k_down))`.
pub fn interface_flux(params: &FdParams, k_up: f64, k_down: f64) -> Result<f64> {
    Ok(params.demand(k_up)?.min(params.supply(k_down)?))
}

/// Density shares `p^i = k^i / Σk`; all zero for an empty cell.
pub fn split_fractions(densities: &[f64]) -> Vec<f64> {
    let total: f64 = densities.iter().sum();
    densities
        .iter()
        .map(|&k| if total > 0.0 { k / total } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeMode {
    /// Each category sends `min{λ^i, μ − Σ_{j≠i} λ^j, p^i μ, q^i_max}`.
    #[default]
    Verbatim,
    /// As `Verbatim`, then supply left unused is handed out to categories
    /// with unmet demand in proportion to their shares.
    Redistribute,
}

/// Per-category fluxes through one interface given category demands,
/// sending-side shares, the receiving supply and category capacities.
pub fn merge_fluxes(demands: &[f64], fractions: &[f64], mu: f64, q_max: &[f64], mode: MergeMode) -> Vec<f64> {
    let total: f64 = demands.iter().sum();
    if total <= mu {
        return demands.to_vec();
    }
    let mut q: Vec<f64> = demands
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let others = total - l;
            l.min((mu - others).max(0.0))
                .min(fractions[i] * mu)
                .min(q_max[i])
                .max(0.0)
        })
        .collect();
    if mode == MergeMode::Redistribute {
        for _ in 0..demands.len() {
            let residual = mu - q.iter().sum::<f64>();
            let open: Vec<usize> = (0..q.len()).filter(|&i| q[i] < demands[i].min(q_max[i])).collect();
            let weight: f64 = open.iter().map(|&i| fractions[i]).sum();
            if residual <= 0.0 || open.is_empty() || weight <= 0.0 {
                break;
            }
            for &i in &open {
                let cap = demands[i].min(q_max[i]);
                q[i] = (q[i] + residual * fractions[i] / weight).min(cap);
            }
        }
    }
    q
}

/// Receiving-side stream diagram.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SupplyMode {
    /// Density-weighted mixture of the class parameters at the receiving
    /// cell (sending cell weights if it is empty, plain average if both
    /// are).
    #[default]
    Mixture,
    Fixed(FdParams),
}

/// Category demands `λ^i = p^i · D^i(k_total)` of one cell.
pub fn category_demands(set: &CategoryFdSet, densities: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = densities.iter().sum();
    let p = split_fractions(densities);
    (0..set.len())
        .map(|i| Ok(p[i] * set.params(i).demand(total.min(set.k_jam()))?))
        .collect()
}

/// Supply `μ_mix` of a receiving cell.
pub fn mixture_supply(set: &CategoryFdSet, receiving: &[f64], sending: &[f64], mode: &SupplyMode) -> Result<f64> {
    let total: f64 = receiving.iter().sum::<f64>().min(set.k_jam());
    let params = match mode {
        SupplyMode::Fixed(p) => *p,
        SupplyMode::Mixture if total > 0.0 => set.mixture(receiving),
        SupplyMode::Mixture => set.mixture(sending),
    };
    Ok(params.supply(total)?)
}

/// Per-category fluxes from a sending cell into a receiving supply.
pub fn multiclass_interface_flux(
    set: &CategoryFdSet,
    sending: &[f64],
    mu_mix: f64,
    mode: MergeMode,
) -> Result<Vec<f64>> {
    let demands = category_demands(set, sending)?;
    let q_max: Vec<f64> = (0..set.len()).map(|i| set.params(i).q_max()).collect();
    Ok(merge_fluxes(&demands, &split_fractions(sending), mu_mix, &q_max, mode))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    /// No flow through the end.
    Closed,
    /// Nothing enters at the upstream end; everything demanded leaves at
    /// the downstream end.
    FreeOutflow,
    /// Upstream end only: per-category inflow demand (m²/(s·m)) merged
    /// against the first cell's supply.
    Demand(Vec<f64>),
    /// Downstream end only: supply (m²/(s·m)) of the road beyond.
    Supply(f64),
}

/// Area injected (positive rate) or removed (negative) uniformly over
/// `[x0, x1] × [t0, t1]`. `rate` is the total lateral flow in m²/(s·m)
/// spread over the segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    pub category: usize,
    pub x0: f64,
    pub x1: f64,
    pub t0: f64,
    pub t1: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// m
    pub length: f64,
    /// Per-category areal densities (dimensionless).
    pub densities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub cells: Vec<Cell>,
    pub dt: f64,
    pub fds: CategoryFdSet,
    pub left: Boundary,
    pub right: Boundary,
    pub sources: Vec<Source>,
    pub supply_mode: SupplyMode,
    pub merge: MergeMode,
}

impl Scenario {
    /// Uniform cells of length `dx` over `[0, length]`, all empty.
    pub fn uniform(length: f64, dx: f64, dt: f64, fds: CategoryFdSet) -> Result<Self> {
        if !(length > 0.0 && dx > 0.0 && dx <= length) {
            return Err(CtmError::InvalidScenario(format!(
                "need 0 < dx <= length (dx = {dx}, length = {length})"
            )));
        }
        let n = (length / dx).round() as usize;
        if ((n as f64) * dx - length).abs() > 1e-9 * length {
            return Err(CtmError::InvalidScenario(format!(
                "length {length} is not a multiple of dx {dx}"
            )));
        }
        let cells = vec![
            Cell {
                length: dx,
                densities: vec![0.0; fds.len()],
            };
            n
        ];
        Ok(Self {
            cells,
            dt,
            fds,
            left: Boundary::Closed,
            right: Boundary::Closed,
            sources: Vec::new(),
            supply_mode: SupplyMode::default(),
            merge: MergeMode::default(),
        })
    }

    pub fn length(&self) -> f64 {
        self.cells.iter().map(|c| c.length).sum()
    }

    /// Cell left edges and centres.
    pub fn cell_edges(&self) -> Vec<f64> {
        let mut edges = Vec::with_capacity(self.cells.len() + 1);
        let mut x = 0.0;
        edges.push(x);
        for c in &self.cells {
            x += c.length;
            edges.push(x);
        }
        edges
    }

    pub fn cell_centres(&self) -> Vec<f64> {
        self.cell_edges().windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    /// Set `density` for `category` on cells whose centre lies in
    /// `[x0, x1]`.
    pub fn fill(&mut self, category: usize, x0: f64, x1: f64, density: f64) {
        let centres = self.cell_centres();
        for (cell, &xc) in self.cells.iter_mut().zip(&centres) {
            if xc >= x0 && xc <= x1 {
                cell.densities[category] = density;
            }
        }
    }

    /// Largest stable time step.
    pub fn cfl_limit(&self) -> f64 {
        let l_min = self.cells.iter().map(|c| c.length).fold(f64::INFINITY, f64::min);
        let v_max = self.fds.classes().iter().map(|c| c.v_max).fold(0.0, f64::max);
        let v_max = match &self.supply_mode {
            SupplyMode::Fixed(p) => v_max.max(p.max_speed().unwrap_or(0.0)),
            SupplyMode::Mixture => v_max,
        };
        l_min / v_max
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.fds.len();
        let bad = |msg: String| Err(CtmError::InvalidScenario(msg));
        if self.cells.is_empty() {
            return bad("no cells".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        for (j, c) in self.cells.iter().enumerate() {
            if !(c.length > 0.0 && c.length.is_finite()) {
                return bad(format!("cell {j} has non-positive length"));
            }
            if c.densities.len() != m {
                return bad(format!(
                    "cell {j} has {} densities for {m} categories",
                    c.densities.len()
                ));
            }
            if c.densities.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
                return bad(format!("cell {j} has a negative or non-finite density"));
            }
            let total: f64 = c.densities.iter().sum();
            if total > self.fds.k_jam() * (1.0 + 1e-12) {
                return bad(format!("cell {j} exceeds jam density"));
            }
        }
        match &self.left {
            Boundary::Supply(_) => return bad("a prescribed supply applies only at the downstream end".into()),
            Boundary::Demand(d) if d.len() != m || d.iter().any(|v| !(*v >= 0.0 && v.is_finite())) => {
                return bad(format!("upstream demand needs {m} non-negative values"));
            }
            _ => {}
        }
        match &self.right {
            Boundary::Demand(_) => return bad("a prescribed demand applies only at the upstream end".into()),
            Boundary::Supply(s) if !(*s >= 0.0) => {
                return bad(format!("downstream supply must be non-negative, got {s}"))
            }
            _ => {}
        }
        for s in &self.sources {
            if s.category >= m {
                return bad(format!("source refers to category {} of {m}", s.category));
            }
            if !(s.x1 > s.x0 && s.t1 > s.t0 && s.rate.is_finite()) {
                return bad("source needs x1 > x0, t1 > t0 and a finite rate".into());
            }
        }
        let limit = self.cfl_limit();
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(CtmError::Cfl { dt: self.dt, limit });
        }
        Ok(())
    }
}

/// Area bookkeeping of one category over one step, per unit road width
/// (m² of vehicle per m of width, i.e. m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LedgerEntry {
    pub stored_before: f64,
    pub inflow: f64,
    pub outflow: f64,
    pub source: f64,
    pub stored_after: f64,
}

impl LedgerEntry {
    pub fn residual(&self) -> f64 {
        self.stored_after - self.stored_before - (self.inflow - self.outflow + self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Start of the step.
    pub t: f64,
    /// `fluxes[interface][category]`.
    pub fluxes: Vec<Vec<f64>>,
    pub ledger: Vec<LedgerEntry>,
}

/// A running m-CTM instance.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    /// `k[category][cell]`
    k: Vec<Vec<f64>>,
    t: f64,
    steps: usize,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let m = scenario.fds.len();
        let k = (0..m)
            .map(|i| scenario.cells.iter().map(|c| c.densities[i]).collect())
            .collect();
        Ok(Self {
            scenario,
            k,
            t: 0.0,
            steps: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// `densities()[category][cell]`.
    pub fn densities(&self) -> &[Vec<f64>] {
        &self.k
    }

    pub fn total_densities(&self) -> Vec<f64> {
        (0..self.scenario.cells.len())
            .map(|j| self.k.iter().map(|c| c[j]).sum())
            .collect()
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.scenario
            .cells
            .iter()
            .enumerate()
            .map(|(j, c)| Cell {
                length: c.length,
                densities: self.k.iter().map(|cat| cat[j]).collect(),
            })
            .collect()
    }

    /// `Σ_j k^i_j l_j` per category.
    pub fn stored_area(&self) -> Vec<f64> {
        self.k
            .iter()
            .map(|cat| cat.iter().zip(&self.scenario.cells).map(|(k, c)| k * c.length).sum())
            .collect()
    }

    fn cell_state(&self, j: usize) -> Vec<f64> {
        self.k.iter().map(|c| c[j]).collect()
    }

    /// Fluxes at every interface for the current state.
    pub fn fluxes(&self) -> Result<Vec<Vec<f64>>> {
        let sc = &self.scenario;
        let set = &sc.fds;
        let n = sc.cells.len();
        let m = set.len();
        let q_max: Vec<f64> = (0..m).map(|i| set.params(i).q_max()).collect();
        let mut out = Vec::with_capacity(n + 1);

        let first = self.cell_state(0);
        out.push(match &sc.left {
            Boundary::Closed | Boundary::FreeOutflow | Boundary::Supply(_) => vec![0.0; m],
            Boundary::Demand(d) => {
                let mu = mixture_supply(set, &first, d, &sc.supply_mode)?;
                merge_fluxes(d, &split_fractions(d), mu, &q_max, sc.merge)
            }
        });
        let mut up = first;
        for j in 1..n {
            let down = self.cell_state(j);
            let mu = mixture_supply(set, &down, &up, &sc.supply_mode)?;
            out.push(multiclass_interface_flux(set, &up, mu, sc.merge)?);
            up = down;
        }
        out.push(match &sc.right {
            Boundary::Closed | Boundary::Demand(_) => vec![0.0; m],
            Boundary::FreeOutflow => category_demands(set, &up)?,
            Boundary::Supply(mu) => multiclass_interface_flux(set, &up, *mu, sc.merge)?,
        });
        Ok(out)
    }

    /// Advance one time step.
    pub fn step(&mut self) -> Result<StepRecord> {
        let dt = self.scenario.dt;
        let fluxes = self.fluxes()?;
        let before = self.stored_area();
        let n = self.scenario.cells.len();
        let m = self.k.len();
        for (i, k) in self.k.iter_mut().enumerate() {
            for (j, cell) in self.scenario.cells.iter().enumerate() {
                k[j] += dt / cell.length * (fluxes[j][i] - fluxes[j + 1][i]);
            }
        }
        let source = self.apply_sources();
        let after = self.stored_area();
        let ledger: Vec<LedgerEntry> = (0..m)
            .map(|i| LedgerEntry {
                stored_before: before[i],
                inflow: dt * fluxes[0][i],
                outflow: dt * fluxes[n][i],
                source: source[i],
                stored_after: after[i],
            })
            .collect();
        for (i, e) in ledger.iter().enumerate() {
            let scale = e.stored_before.max(e.stored_after) + e.inflow + e.outflow + e.source.abs();
            if e.residual().abs() > 1e-9 * scale.max(f64::MIN_POSITIVE) {
                return Err(CtmError::Conservation {
                    step: self.steps,
                    category: i,
                    residual: e.residual(),
                });
            }
        }
        let record = StepRecord {
            t: self.t,
            fluxes,
            ledger,
        };
        self.steps += 1;
        self.t = self.steps as f64 * dt;
        Ok(record)
    }

    /// Apply source terms for `[t, t + dt]`; returns the area added per
    /// category. Sinks never remove more than a cell holds and sources
    /// never fill a cell past jam density.
    fn apply_sources(&mut self) -> Vec<f64> {
        let m = self.k.len();
        let mut added = vec![0.0; m];
        if self.scenario.sources.is_empty() {
            return added;
        }
        let (t0, t1) = (self.t, self.t + self.scenario.dt);
        let edges = self.scenario.cell_edges();
        let k_jam = self.scenario.fds.k_jam();
        for s in &self.scenario.sources {
            let active = (t1.min(s.t1) - t0.max(s.t0)).max(0.0);
            if active == 0.0 {
                continue;
            }
            for j in 0..self.scenario.cells.len() {
                let overlap = (edges[j + 1].min(s.x1) - edges[j].max(s.x0)).max(0.0);
                if overlap == 0.0 {
                    continue;
                }
                let l = edges[j + 1] - edges[j];
                let mut dk = s.rate * active * overlap / (s.x1 - s.x0) / l;
                let total: f64 = self.k.iter().map(|c| c[j]).sum();
                dk = dk.min(k_jam - total).max(-self.k[s.category][j]);
                self.k[s.category][j] += dk;
                added[s.category] += dk * l;
            }
        }
        added
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Record densities every this many steps (the final state is always
    /// recorded).
    pub record_every: usize,
    pub log_fluxes: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            record_every: 1,
            log_fluxes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxRecord {
    pub t: f64,
    pub interface: usize,
    pub category: usize,
    pub flux: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub categories: Vec<String>,
    pub cell_centres: Vec<f64>,
    pub times: Vec<f64>,
    /// `densities[snapshot][category][cell]`
    pub densities: Vec<Vec<Vec<f64>>>,
    pub fluxes: Vec<FluxRecord>,
    /// `ledger[step][category]`
    pub ledger: Vec<Vec<LedgerEntry>>,
}

impl SimulationResult {
    /// Snapshot closest to `t`.
    pub fn at(&self, t: f64) -> &[Vec<f64>] {
        let i = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        &self.densities[i]
    }
}

/// Step `scenario` until `horizon` seconds.
pub fn run(scenario: Scenario, horizon: f64, options: &RunOptions) -> Result<SimulationResult> {
    let mut sim = Simulation::new(scenario)?;
    let steps = (horizon / sim.scenario.dt).round() as usize;
    let every = options.record_every.max(1);
    let mut result = SimulationResult {
        categories: sim.scenario.fds.classes().iter().map(|c| c.name.clone()).collect(),
        cell_centres: sim.scenario.cell_centres(),
        times: vec![0.0],
        densities: vec![sim.k.clone()],
        fluxes: Vec::new(),
        ledger: Vec::with_capacity(steps),
    };
    for s in 1..=steps {
        let record = sim.step()?;
        if options.log_fluxes {
            for (j, face) in record.fluxes.iter().enumerate() {
                for (i, &flux) in face.iter().enumerate() {
                    result.fluxes.push(FluxRecord {
                        t: record.t,
                        interface: j,
                        category: i,
                        flux,
                    });
                }
            }
        }
        result.ledger.push(record.ledger);
        if s % every == 0 || s == steps {
            result.times.push(sim.time());
            result.densities.push(sim.k.clone());
        }
    }
    Ok(result)
}

/// The two mixed-platoon experiments: cars and heavy vehicles on a 300 m
/// road, both platoons at 150 m²/(km·m).
pub mod scenarios {
    use super::*;
    use crate::fd::ClassFd;
    use crate::units;

    pub const LENGTH: f64 = 300.0;
    pub const DX: f64 = 5.0;
    pub const DT: f64 = 0.25;
    pub const HORIZON: f64 = 160.0;
    pub const PLATOON_DENSITY: f64 = 150.0;

    pub fn platoon_classes() -> CategoryFdSet {
        CategoryFdSet::new(
            vec![
                ClassFd::display("car", 50.0, 25.0, 200.0, 5.25),
                ClassFd::display("HV", 45.0, 23.0, 250.0, 7.7),
            ],
            units::density(1000.0),
        )
        .expect("platoon parameters are valid")
    }

    fn base(dx: f64, dt: f64) -> Result<Scenario> {
        let mut sc = Scenario::uniform(LENGTH, dx, dt, platoon_classes())?;
        sc.left = Boundary::FreeOutflow;
        sc.right = Boundary::FreeOutflow;
        Ok(sc)
    }

    /// Cars and HVs mixed on 50–100 m.
    pub fn mixed_platoon(dx: f64, dt: f64) -> Result<Scenario> {
        let mut sc = base(dx, dt)?;
        let k = units::density(PLATOON_DENSITY);
        sc.fill(0, 50.0, 100.0, k);
        sc.fill(1, 50.0, 100.0, k);
        Ok(sc)
    }

    /// Cars on 50–100 m behind HVs on 135–180 m.
    pub fn separate_platoons(dx: f64, dt: f64) -> Result<Scenario> {
        let mut sc = base(dx, dt)?;
        let k = units::density(PLATOON_DENSITY);
        sc.fill(0, 50.0, 100.0, k);
        sc.fill(1, 135.0, 180.0, k);
        Ok(sc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::{tables, ClassFd};
    use crate::units::{density, flow, kmh, to_flow_display};

    fn chennai() -> FdParams {
        FdParams::smulders_display(45.0, 21.0, 255.0, 7.5, 1000.0)
    }

    fn two_classes() -> CategoryFdSet {
        CategoryFdSet::new(
            vec![
                tables::class("Chennai", "car").unwrap(),
                tables::class("Chennai", "HV").unwrap(),
            ],
            density(1000.0),
        )
        .unwrap()
    }

    #[test]
    fn single_class_flux_examples() {
        let p = chennai();
        let d = |k: (f64, f64)| to_flow_display(interface_flux(&p, density(k.0), density(k.1)).unwrap());
        assert!((d((100.0, 100.0)) - 3558.82).abs() < 0.01);
        assert!((d((600.0, 100.0)) - 5355.0).abs() < 1e-9);
        assert!((d((100.0, 950.0)) - 375.0).abs() < 1e-9);
        assert_eq!(demand(&p, 0.0).unwrap(), 0.0);
        assert_eq!(supply(&p, p.k_jam()).unwrap(), 0.0);
    }

    #[test]
    fn merge_example() {
        let q = merge_fluxes(
            &[2000.0, 1000.0],
            &[2.0 / 3.0, 1.0 / 3.0],
            2400.0,
            &[1e9, 1e9],
            MergeMode::Verbatim,
        );
        assert!((q[0] - 1400.0).abs() < 1e-9 && (q[1] - 400.0).abs() < 1e-9);
        let q = merge_fluxes(
            &[2000.0, 1000.0],
            &[2.0 / 3.0, 1.0 / 3.0],
            3000.0,
            &[1e9, 1e9],
            MergeMode::Verbatim,
        );
        assert_eq!(q, vec![2000.0, 1000.0]);
        let q = merge_fluxes(
            &[2000.0, 1000.0],
            &[2.0 / 3.0, 1.0 / 3.0],
            2400.0,
            &[1e9, 1e9],
            MergeMode::Redistribute,
        );
        assert!((q.iter().sum::<f64>() - 2400.0).abs() < 1e-9);
        assert!(q[0] <= 2000.0 && q[1] <= 1000.0);
    }

    #[test]
    fn equal_densities_split_evenly() {
        assert_eq!(split_fractions(&[0.1, 0.1]), vec![0.5, 0.5]);
        assert_eq!(split_fractions(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn uniform_closed_state_is_steady() {
        let mut sc = Scenario::uniform(100.0, 5.0, 0.25, two_classes()).unwrap();
        for c in &mut sc.cells {
            c.densities = vec![0.1, 0.05];
        }
        let mut sim = Simulation::new(sc).unwrap();
        sim.step().unwrap();
        // interior cells keep their state; only the closed ends react
        for j in 1..19 {
            assert!((sim.densities()[0][j] - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_free_ring_state_unchanged_for_single_class() {
        // single class, every face carries the same flux
        let set = CategoryFdSet::new(vec![ClassFd::display("s", 45.0, 21.0, 255.0, 7.5)], density(1000.0)).unwrap();
        let mut sc = Scenario::uniform(100.0, 5.0, 0.25, set.clone()).unwrap();
        let k = density(100.0);
        for c in &mut sc.cells {
            c.densities = vec![k];
        }
        let q = set.params(0).demand(k).unwrap();
        sc.left = Boundary::Demand(vec![q]);
        sc.right = Boundary::FreeOutflow;
        let mut sim = Simulation::new(sc).unwrap();
        for _ in 0..10 {
            sim.step().unwrap();
        }
        assert!(sim.densities()[0].iter().all(|&x| (x - k).abs() < 1e-15));
    }

    #[test]
    fn inflow_fills_first_cell() {
        let mut sc = Scenario::uniform(100.0, 5.0, 0.25, two_classes()).unwrap();
        let d = flow(1000.0);
        sc.left = Boundary::Demand(vec![d, 0.0]);
        let mut sim = Simulation::new(sc).unwrap();
        let rec = sim.step().unwrap();
        assert!((sim.densities()[0][0] - d * 0.25 / 5.0).abs() < 1e-15);
        assert_eq!(rec.ledger[0].inflow, d * 0.25);
    }

    #[test]
    fn cfl_violation_refuses_to_start() {
        let sc = Scenario::uniform(100.0, 5.0, 1.0, two_classes()).unwrap();
        assert!(matches!(Simulation::new(sc), Err(CtmError::Cfl { .. })));
    }

    #[test]
    fn boundary_sides_are_checked() {
        let mut sc = Scenario::uniform(100.0, 5.0, 0.25, two_classes()).unwrap();
        sc.left = Boundary::Supply(1.0);
        assert!(matches!(Simulation::new(sc.clone()), Err(CtmError::InvalidScenario(_))));
        sc.left = Boundary::Closed;
        sc.right = Boundary::Demand(vec![0.0, 0.0]);
        assert!(matches!(Simulation::new(sc), Err(CtmError::InvalidScenario(_))));
    }

    #[test]
    fn single_category_reduces_to_single_class_ctm() {
        let class = ClassFd::display("s", 45.0, 21.0, 255.0, 7.5);
        let set = CategoryFdSet::new(vec![class], density(1000.0)).unwrap();
        let p = set.params(0);
        let mut sc = Scenario::uniform(200.0, 5.0, 0.25, set).unwrap();
        sc.fill(0, 50.0, 100.0, density(600.0));
        sc.fill(0, 100.0, 150.0, density(100.0));
        let mut sim = Simulation::new(sc).unwrap();
        let mut k: Vec<f64> = sim.densities()[0].clone();
        for _ in 0..200 {
            let n = k.len();
            let mut f = vec![0.0; n + 1];
            for j in 1..n {
                f[j] = interface_flux(&p, k[j - 1], k[j]).unwrap();
            }
            for j in 0..n {
                k[j] += 0.25 / 5.0 * (f[j] - f[j + 1]);
            }
            sim.step().unwrap();
            assert_eq!(sim.densities()[0], k);
        }
    }

    #[test]
    fn sources_and_sinks_balance() {
        let mut sc = Scenario::uniform(100.0, 5.0, 0.25, two_classes()).unwrap();
        sc.fill(1, 0.0, 100.0, density(50.0));
        sc.sources.push(Source {
            category: 0,
            x0: 20.0,
            x1: 40.0,
            t0: 0.0,
            t1: 10.0,
            rate: flow(500.0),
        });
        sc.sources.push(Source {
            category: 1,
            x0: 60.0,
            x1: 80.0,
            t0: 0.0,
            t1: 1e3,
            rate: -flow(5000.0),
        });
        let res = run(sc, 60.0, &RunOptions::default()).unwrap();
        let injected: f64 = res.ledger.iter().map(|s| s[0].source).sum();
        assert!((injected - flow(500.0) * 10.0).abs() < 1e-12);
        for s in &res.ledger {
            for e in s {
                assert!(e.residual().abs() < 1e-12);
            }
        }
        // sink exhausts what reaches it but never goes negative
        assert!(res.densities.last().unwrap()[1].iter().all(|&k| k >= 0.0));
    }

    #[test]
    fn fixed_supply_mode() {
        let mut sc = scenarios::mixed_platoon(5.0, 0.25).unwrap();
        sc.supply_mode = SupplyMode::Fixed(FdParams::smulders_display(45.0, 21.0, 255.0, 7.5, 1000.0));
        let res = run(sc, 20.0, &RunOptions::default()).unwrap();
        assert_eq!(res.times.len(), 81);
    }

    #[test]
    fn platoon_scenarios_build() {
        let sc = scenarios::mixed_platoon(scenarios::DX, scenarios::DT).unwrap();
        assert_eq!(sc.cells.len(), 60);
        assert!((sc.cfl_limit() - 5.0 / kmh(50.0)).abs() < 1e-12);
        let loaded: usize = sc.cells.iter().filter(|c| c.densities[0] > 0.0).count();
        assert_eq!(loaded, 10);
        let sc2 = scenarios::separate_platoons(scenarios::DX, scenarios::DT).unwrap();
        assert_eq!(sc2.cells.iter().filter(|c| c.densities[1] > 0.0).count(), 9);
    }
}
