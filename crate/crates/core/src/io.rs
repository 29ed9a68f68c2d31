//! File formats: CSV readers and writers in display units and the
//! scenario configuration file.
//!
//! Files carry km/h, m²/(km·m) and m²/(h·m); everything is converted to SI
//! on the way in and back on the way out. Numbers are written with six
//! significant digits.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::areal::{ArealError, ArealState, RegionVolume, Trajectory, VehicleCategory};
use crate::ctm::{Boundary, CtmError, MergeMode, Scenario, SimulationResult, Source, SupplyMode};
use crate::fd::{CategoryFdSet, ClassFd, FdError, FdFamily, FdParams, FitReport};
use crate::kinematic::WaveEvent;
use crate::steady_state::SteadyWindow;
use crate::units::{density, flow, kmh, to_density_display, to_flow_display, to_kmh};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {message}")]
    Format { line: u64, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("line {line}: unknown category `{name}`")]
    UnknownCategory { name: String, line: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Areal(#[from] ArealError),
    #[error(transparent)]
    Fd(#[from] FdError),
    #[error(transparent)]
    Ctm(#[from] CtmError),
}

pub type Result<T> = std::result::Result<T, IoError>;

impl From<csv::Error> for IoError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line());
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IoError::Io(io),
            csv::ErrorKind::Deserialize { err, .. } => IoError::Format {
                line,
                message: match err.field() {
                    Some(f) => format!("field {}: {}", f + 1, err.kind()),
                    None => err.kind().to_string(),
                },
            },
            other => IoError::Format {
                line,
                message: format!("{other:?}"),
            },
        }
    }
}

/// `%g`-style formatting with six significant digits.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

/// Deserialize every data row together with its 1-based line number.
fn rows_with_lines<R: Read, T: serde::de::DeserializeOwned>(r: R) -> Result<Vec<(u64, T)>> {
    let mut rdr = reader(r);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        let line = rec.position().map_or(0, |p| p.line());
        let value = rec.deserialize(Some(&headers)).map_err(|e| match IoError::from(e) {
            IoError::Format { message, .. } => IoError::Format { line, message },
            other => other,
        })?;
        out.push((line, value));
    }
    Ok(out)
}

fn row<W: Write>(w: &mut W, fields: &[String]) -> Result<()> {
    writeln!(w, "{}", fields.join(","))?;
    Ok(())
}

#[derive(Deserialize)]
struct CategoryRow {
    category: String,
    length_m: f64,
    width_m: f64,
    vmax_kmh: f64,
    vmin_kmh: f64,
}

/// `category,length_m,width_m,vmax_kmh,vmin_kmh`
pub fn read_categories<R: Read>(r: R) -> Result<Vec<VehicleCategory>> {
    let mut rdr = reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<CategoryRow>() {
        let c = rec?;
        out.push(VehicleCategory::new(
            c.category,
            c.length_m,
            c.width_m,
            kmh(c.vmax_kmh),
            kmh(c.vmin_kmh),
        )?);
    }
    Ok(out)
}

pub fn write_categories<W: Write>(mut w: W, categories: &[VehicleCategory]) -> Result<()> {
    writeln!(w, "category,length_m,width_m,vmax_kmh,vmin_kmh")?;
    for c in categories {
        row(
            &mut w,
            &[
                c.name.clone(),
                fmt6(c.length),
                fmt6(c.width),
                fmt6(to_kmh(c.v_max_observed)),
                fmt6(to_kmh(c.v_min_observed)),
            ],
        )?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct TrajectoryRow {
    vehicle_id: String,
    category: String,
    t_s: f64,
    x_m: f64,
}

/// `vehicle_id,category,t_s,x_m`, one row per sample. Vehicles keep the
/// order of their first row.
pub fn read_trajectories<R: Read>(r: R, categories: &[VehicleCategory]) -> Result<Vec<Trajectory>> {
    let cats: HashMap<&str, Arc<VehicleCategory>> = categories
        .iter()
        .map(|c| (c.name.as_str(), Arc::new(c.clone())))
        .collect();
    let mut order: Vec<String> = Vec::new();
    // category, first line and samples of each vehicle
    type Pending = (Arc<VehicleCategory>, u64, Vec<(f64, f64)>);
    let mut rows: HashMap<String, Pending> = HashMap::new();
    for (rec_line, t) in rows_with_lines::<_, TrajectoryRow>(r)? {
        let Some(cat) = cats.get(t.category.as_str()) else {
            return Err(IoError::UnknownCategory {
                name: t.category,
                line: rec_line,
            });
        };
        let entry = rows.entry(t.vehicle_id.clone()).or_insert_with(|| {
            order.push(t.vehicle_id.clone());
            (Arc::clone(cat), rec_line, Vec::new())
        });
        if entry.0.name != t.category {
            return Err(IoError::Format {
                line: rec_line,
                message: format!("vehicle {} changes category", t.vehicle_id),
            });
        }
        entry.2.push((t.t_s, t.x_m));
    }
    order
        .into_iter()
        .map(|id| {
            let (cat, line, samples) = rows.remove(&id).expect("recorded vehicle");
            Trajectory::new(id, cat, samples).map_err(|e| IoError::Format {
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_trajectories<W: Write>(mut w: W, trajectories: &[Trajectory]) -> Result<()> {
    writeln!(w, "vehicle_id,category,t_s,x_m")?;
    for tr in trajectories {
        for &(t, x) in tr.samples() {
            row(
                &mut w,
                &[tr.vehicle_id.clone(), tr.category.name.clone(), fmt6(t), fmt6(x)],
            )?;
        }
    }
    Ok(())
}

/// Region given as `x0,x1,t0,t1`.
pub fn parse_region(text: &str, road_width: f64) -> Result<RegionVolume> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| IoError::Invalid(format!("region `{text}`: {e}")))?;
    let [x0, x1, t0, t1] = parts[..] else {
        return Err(IoError::Invalid(format!("region `{text}` needs x0,x1,t0,t1")));
    };
    Ok(RegionVolume::new(x0, x1, t0, t1, road_width)?)
}

/// One row of the areal-variables table, display units.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct VariablesRow {
    pub x0: f64,
    pub x1: f64,
    pub t0: f64,
    pub t1: f64,
    pub ka: f64,
    pub qa: f64,
    pub va: f64,
}

impl VariablesRow {
    pub fn new(region: &RegionVolume, state: &ArealState) -> Self {
        Self {
            x0: region.x0,
            x1: region.x1,
            t0: region.t0,
            t1: region.t1,
            ka: to_density_display(state.density),
            qa: to_flow_display(state.flow),
            va: to_kmh(state.speed),
        }
    }
}

pub fn write_variables<W: Write>(mut w: W, rows: &[VariablesRow]) -> Result<()> {
    writeln!(w, "x0,x1,t0,t1,ka,qa,va")?;
    for r in rows {
        row(&mut w, &[r.x0, r.x1, r.t0, r.t1, r.ka, r.qa, r.va].map(fmt6))?;
    }
    Ok(())
}

pub fn read_variables<R: Read>(r: R) -> Result<Vec<VariablesRow>> {
    Ok(reader(r).deserialize().collect::<std::result::Result<_, _>>()?)
}

/// One detected window, display units (`a0` m²/s, `b0` s/s).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct WindowRow {
    pub t_start: f64,
    pub t_end: f64,
    pub a0: f64,
    pub b0: f64,
    pub ka: f64,
    pub qa: f64,
    pub va: f64,
}

impl From<&SteadyWindow> for WindowRow {
    fn from(w: &SteadyWindow) -> Self {
        let s = w.state.unwrap_or(ArealState::EMPTY);
        Self {
            t_start: w.t_start,
            t_end: w.t_end,
            a0: w.a0,
            b0: w.b0,
            ka: to_density_display(s.density),
            qa: to_flow_display(s.flow),
            va: to_kmh(s.speed),
        }
    }
}

pub fn write_windows<W: Write>(mut w: W, rows: &[WindowRow]) -> Result<()> {
    writeln!(w, "t_start,t_end,a0,b0,ka,qa,va")?;
    for r in rows {
        row(&mut w, &[r.t_start, r.t_end, r.a0, r.b0, r.ka, r.qa, r.va].map(fmt6))?;
    }
    Ok(())
}

pub fn read_windows<R: Read>(r: R) -> Result<Vec<WindowRow>> {
    Ok(reader(r).deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Deserialize)]
struct ObservationRow {
    ka: f64,
    v: f64,
}

/// Speed–density observations `ka,v` (m²/(km·m), km/h) as SI pairs.
pub fn read_observations<R: Read>(r: R) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for rec in reader(r).deserialize::<ObservationRow>() {
        let o = rec?;
        out.push((density(o.ka), kmh(o.v)));
    }
    Ok(out)
}

pub fn write_observations<W: Write>(mut w: W, observations: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "ka,v")?;
    for &(k, v) in observations {
        row(&mut w, &[fmt6(to_density_display(k)), fmt6(to_kmh(v))])?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct ParamsRow {
    family: String,
    vmax: Option<f64>,
    vcrit: Option<f64>,
    ka_crit: Option<f64>,
    ka_jam: f64,
    omega: Option<f64>,
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_default()
}

/// `family,vmax,vcrit,ka_crit,ka_jam,omega`; fields a family does not use
/// are left empty.
pub fn write_params<W: Write>(mut w: W, params: &[FdParams]) -> Result<()> {
    writeln!(w, "family,vmax,vcrit,ka_crit,ka_jam,omega")?;
    for p in params {
        row(
            &mut w,
            &[
                p.family().to_string(),
                opt(p.v_max().map(to_kmh)),
                opt(p.v_crit().map(to_kmh)),
                opt(p.k_crit().map(to_density_display)),
                fmt6(to_density_display(p.k_jam())),
                opt(p.omega().map(to_kmh)),
            ],
        )?;
    }
    Ok(())
}

pub fn read_params<R: Read>(r: R) -> Result<Vec<FdParams>> {
    let mut out = Vec::new();
    for (line, p) in rows_with_lines::<_, ParamsRow>(r)? {
        let family: FdFamily = p.family.parse()?;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| IoError::Format {
                line,
                message: format!("{family} needs `{name}`"),
            })
        };
        let k_jam = density(p.ka_jam);
        let params = match family {
            FdFamily::Greenshields => FdParams::Greenshields {
                v_max: kmh(need(p.vmax, "vmax")?),
                k_jam,
            },
            FdFamily::Greenberg => FdParams::Greenberg {
                v_crit: kmh(need(p.vcrit, "vcrit")?),
                k_jam,
            },
            FdFamily::Underwood => FdParams::Underwood {
                v_max: kmh(need(p.vmax, "vmax")?),
                k_crit: density(need(p.ka_crit, "ka_crit")?),
                k_jam,
            },
            FdFamily::DelCastillo => FdParams::DelCastillo {
                v_max: kmh(need(p.vmax, "vmax")?),
                omega: kmh(need(p.omega, "omega")?),
                k_jam,
            },
            FdFamily::Daganzo => FdParams::Daganzo {
                v_max: kmh(need(p.vmax, "vmax")?),
                k_crit: density(need(p.ka_crit, "ka_crit")?),
                omega: kmh(need(p.omega, "omega")?),
                k_jam,
            },
            FdFamily::Smulders => FdParams::Smulders {
                v_max: kmh(need(p.vmax, "vmax")?),
                v_crit: kmh(need(p.vcrit, "vcrit")?),
                k_crit: density(need(p.ka_crit, "ka_crit")?),
                omega: kmh(need(p.omega, "omega")?),
                k_jam,
            },
        };
        params.validate()?;
        out.push(params);
    }
    Ok(out)
}

/// Fit metrics in display units (km/h and m²/(h·m)).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct FitRow {
    pub r2_kv: f64,
    pub rmse_kv: f64,
    pub r2_qk: f64,
    pub rmse_qk: f64,
    pub n: usize,
}

impl From<&FitReport> for FitRow {
    fn from(r: &FitReport) -> Self {
        Self {
            r2_kv: r.r2_speed,
            rmse_kv: to_kmh(r.rmse_speed),
            r2_qk: r.r2_flow,
            rmse_qk: to_flow_display(r.rmse_flow),
            n: r.observations,
        }
    }
}

pub fn write_fit_reports<W: Write>(mut w: W, seed: u64, rows: &[(FdFamily, FitRow)]) -> Result<()> {
    writeln!(w, "# seed={seed}")?;
    writeln!(w, "family,r2_kv,rmse_kv,r2_qk,rmse_qk,n")?;
    for (f, r) in rows {
        row(
            &mut w,
            &[
                f.to_string(),
                fmt6(r.r2_kv),
                fmt6(r.rmse_kv),
                fmt6(r.r2_qk),
                fmt6(r.rmse_qk),
                r.n.to_string(),
            ],
        )?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct FitFileRow {
    family: String,
    #[serde(flatten)]
    fit: FitRow,
}

pub fn read_fit_reports<R: Read>(r: R) -> Result<Vec<(FdFamily, FitRow)>> {
    let mut out = Vec::new();
    for rec in reader(r).deserialize::<FitFileRow>() {
        let rec = rec?;
        out.push((rec.family.parse()?, rec.fit));
    }
    Ok(out)
}

/// Front-tracking event log, densities in m²/(km·m) and speeds in km/h.
pub fn write_events<W: Write>(mut w: W, events: &[WaveEvent]) -> Result<()> {
    writeln!(w, "t,x,kind,left_state,right_state,speed")?;
    for e in events {
        row(
            &mut w,
            &[
                fmt6(e.t),
                fmt6(e.x),
                e.kind.to_string(),
                fmt6(to_density_display(e.left)),
                fmt6(to_density_display(e.right)),
                fmt6(to_kmh(e.speed)),
            ],
        )?;
    }
    Ok(())
}

/// Event log row as read back (display units).
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EventRow {
    pub t: f64,
    pub x: f64,
    pub kind: String,
    pub left_state: f64,
    pub right_state: f64,
    pub speed: f64,
}

pub fn read_events<R: Read>(r: R) -> Result<Vec<EventRow>> {
    Ok(reader(r).deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Space–time grid: first column `t`, then one column per position;
/// `values[t][x]` are dimensionless densities written in m²/(km·m).
pub fn write_grid<W: Write>(mut w: W, xs: &[f64], ts: &[f64], values: &[Vec<f64>]) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(xs.iter().map(|&x| fmt6(x)));
    row(&mut w, &header)?;
    for (t, line) in ts.iter().zip(values) {
        let mut fields = vec![fmt6(*t)];
        fields.extend(line.iter().map(|&k| fmt6(to_density_display(k))));
        row(&mut w, &fields)?;
    }
    Ok(())
}

/// `(xs, ts, values[t][x])`.
pub type Grid = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

/// Inverse of [`write_grid`], with SI densities.
pub fn read_grid<R: Read>(r: R) -> Result<Grid> {
    let mut rdr = reader(r);
    let bad = |line: u64, e: std::num::ParseFloatError| IoError::Format {
        line,
        message: e.to_string(),
    };
    let xs = rdr
        .headers()?
        .iter()
        .skip(1)
        .map(|s| s.parse::<f64>().map_err(|e| bad(1, e)))
        .collect::<Result<Vec<_>>>()?;
    let (mut ts, mut values) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let nums = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| bad(line, e)))
            .collect::<Result<Vec<_>>>()?;
        if nums.len() != xs.len() + 1 {
            return Err(IoError::Format {
                line,
                message: format!("expected {} fields, got {}", xs.len() + 1, nums.len()),
            });
        }
        ts.push(nums[0]);
        values.push(nums[1..].iter().map(|&k| density(k)).collect());
    }
    Ok((xs, ts, values))
}

/// Per-interface flux log `t,interface,category,flux` with category names
/// and flux in m²/(h·m).
pub fn write_fluxes<W: Write>(mut w: W, result: &SimulationResult) -> Result<()> {
    writeln!(w, "t,interface,category,flux")?;
    for f in &result.fluxes {
        row(
            &mut w,
            &[
                fmt6(f.t),
                f.interface.to_string(),
                result.categories[f.category].clone(),
                fmt6(to_flow_display(f.flux)),
            ],
        )?;
    }
    Ok(())
}

/// Density history of one category (rows = recorded times, columns =
/// cell centres).
pub fn write_category_history<W: Write>(w: W, result: &SimulationResult, category: usize) -> Result<()> {
    let values: Vec<Vec<f64>> = result.densities.iter().map(|snap| snap[category].clone()).collect();
    write_grid(w, &result.cell_centres, &result.times, &values)
}

/// Parsed scenario file before discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub length: f64,
    pub dx: f64,
    pub dt: f64,
    pub horizon: f64,
    /// m²/(km·m)
    pub k_jam: f64,
    pub redistribute: bool,
    /// `None` selects the mixture supply.
    pub stream: Option<ClassFd>,
    pub categories: Vec<ClassFd>,
    /// `(category, x0, x1, ka [m²/(km·m)])`
    pub init: Vec<(String, f64, f64, f64)>,
    pub left: BoundarySpec,
    pub right: BoundarySpec,
    /// `(x0, x1, t0, t1, rate [m²/(h·m)], category)`
    pub sources: Vec<(f64, f64, f64, f64, f64, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundarySpec {
    Closed,
    Free,
    /// Per-category upstream demand, m²/(h·m).
    Demand(Vec<(String, f64)>),
    /// Downstream supply, m²/(h·m).
    Supply(f64),
}

fn scenario_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Format {
        line: line as u64,
        message: message.into(),
    }
}

fn num(line: usize, key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| scenario_err(line, format!("`{key}` expects a number, got `{}`", v.trim())))
}

fn parse_boundary(line: usize, v: &str) -> Result<BoundarySpec> {
    let v = v.trim();
    let (kind, arg) = v.split_once(':').map_or((v, ""), |(a, b)| (a.trim(), b.trim()));
    match kind {
        "closed" => Ok(BoundarySpec::Closed),
        "free" | "free-outflow" => Ok(BoundarySpec::Free),
        "supply" => Ok(BoundarySpec::Supply(num(line, "supply", arg)?)),
        "demand" => arg
            .split(',')
            .map(|pair| {
                let (name, q) = pair
                    .split_once('=')
                    .ok_or_else(|| scenario_err(line, format!("demand entry `{pair}` needs name=value")))?;
                Ok((name.trim().to_string(), num(line, "demand", q)?))
            })
            .collect::<Result<Vec<_>>>()
            .map(BoundarySpec::Demand),
        other => Err(scenario_err(line, format!("unknown boundary `{other}`"))),
    }
}

#[derive(Default)]
struct ClassFields {
    vmax: Option<f64>,
    vcrit: Option<f64>,
    ka_crit: Option<f64>,
    omega: Option<f64>,
}

impl ClassFields {
    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let slot = match key {
            "vmax" => &mut self.vmax,
            "vcrit" => &mut self.vcrit,
            "ka_crit" => &mut self.ka_crit,
            "omega" => &mut self.omega,
            _ => return Err(scenario_err(line, format!("unknown key `{key}`"))),
        };
        *slot = Some(num(line, key, v)?);
        Ok(())
    }

    fn build(self, name: &str, k_jam: f64) -> Result<ClassFd> {
        let missing = |k: &str| IoError::Invalid(format!("[{name}] is missing `{k}`"));
        let v_crit = self.vcrit.ok_or_else(|| missing("vcrit"))?;
        let k_crit = self.ka_crit.ok_or_else(|| missing("ka_crit"))?;
        let omega = match self.omega {
            Some(w) => w,
            None => v_crit * k_crit / (k_jam - k_crit),
        };
        Ok(ClassFd::display(
            name,
            self.vmax.ok_or_else(|| missing("vmax"))?,
            v_crit,
            k_crit,
            omega,
        ))
    }
}

/// Parse the sectioned scenario format:
///
/// ```text
/// [domain]      length_m, dx_m, dt_s, horizon_s
/// [shared]      ka_jam, q_redistribution = on|off, supply = mixture|fixed
/// [stream]      vmax, vcrit, ka_crit, omega   (fixed supply only)
/// [category.N]  vmax, vcrit, ka_crit, omega   (omega defaults to continuity)
/// [init.N]      rows x0,x1,ka
/// [boundary]    left = closed|free|demand:N=q,...; right = closed|free|supply:q
/// [source]      rows x0,x1,t0,t1,rate,category
/// ```
///
/// Speeds are km/h, densities m²/(km·m), flows and rates m²/(h·m).
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let mut section = String::new();
    let mut domain: HashMap<String, f64> = HashMap::new();
    let mut k_jam = 1000.0;
    let mut redistribute = false;
    let mut fixed = false;
    let mut stream = ClassFields::default();
    let mut has_stream = false;
    let mut classes: Vec<(String, ClassFields)> = Vec::new();
    let mut init = Vec::new();
    let mut left = BoundarySpec::Free;
    let mut right = BoundarySpec::Free;
    let mut sources = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            if let Some(cat) = section.strip_prefix("category.") {
                if classes.iter().any(|c| c.0 == cat) {
                    return Err(scenario_err(line, format!("category `{cat}` defined twice")));
                }
                classes.push((cat.to_string(), ClassFields::default()));
            } else if section == "stream" {
                has_stream = true;
            } else if !matches!(section.as_str(), "domain" | "shared" | "boundary" | "source")
                && !section.starts_with("init.")
            {
                return Err(scenario_err(line, format!("unknown section [{section}]")));
            }
            continue;
        }
        let kv = content.split_once('=').map(|(k, v)| (k.trim(), v.trim()));
        match section.as_str() {
            "domain" => {
                let (k, v) = kv.ok_or_else(|| scenario_err(line, "expected key = value"))?;
                if !matches!(k, "length_m" | "dx_m" | "dt_s" | "horizon_s") {
                    return Err(scenario_err(line, format!("unknown key `{k}`")));
                }
                domain.insert(k.to_string(), num(line, k, v)?);
            }
            "shared" => {
                let (k, v) = kv.ok_or_else(|| scenario_err(line, "expected key = value"))?;
                match k {
                    "ka_jam" => k_jam = num(line, k, v)?,
                    "q_redistribution" => {
                        redistribute = match v {
                            "on" | "true" | "yes" => true,
                            "off" | "false" | "no" => false,
                            _ => {
                                return Err(scenario_err(
                                    line,
                                    format!("q_redistribution expects on/off, got `{v}`"),
                                ))
                            }
                        }
                    }
                    "supply" => {
                        fixed = match v {
                            "mixture" => false,
                            "fixed" => true,
                            _ => return Err(scenario_err(line, format!("supply expects mixture/fixed, got `{v}`"))),
                        }
                    }
                    _ => return Err(scenario_err(line, format!("unknown key `{k}`"))),
                }
            }
            "stream" => {
                let (k, v) = kv.ok_or_else(|| scenario_err(line, "expected key = value"))?;
                stream.set(line, k, v)?;
            }
            "boundary" => {
                let (k, v) = kv.ok_or_else(|| scenario_err(line, "expected key = value"))?;
                match k {
                    "left" => left = parse_boundary(line, v)?,
                    "right" => right = parse_boundary(line, v)?,
                    _ => return Err(scenario_err(line, format!("unknown key `{k}`"))),
                }
            }
            "source" => {
                let f: Vec<&str> = content.split(',').map(str::trim).collect();
                if f.len() != 6 {
                    return Err(scenario_err(line, "source rows are x0,x1,t0,t1,rate,category"));
                }
                sources.push((
                    num(line, "x0", f[0])?,
                    num(line, "x1", f[1])?,
                    num(line, "t0", f[2])?,
                    num(line, "t1", f[3])?,
                    num(line, "rate", f[4])?,
                    f[5].to_string(),
                ));
            }
            s if s.starts_with("category.") => {
                let (k, v) = kv.ok_or_else(|| scenario_err(line, "expected key = value"))?;
                classes.last_mut().expect("section registered").1.set(line, k, v)?;
            }
            s if s.starts_with("init.") => {
                let name = &s["init.".len()..];
                let f: Vec<&str> = content.split(',').collect();
                if f.len() != 3 {
                    return Err(scenario_err(line, "init rows are x0,x1,ka"));
                }
                init.push((
                    name.to_string(),
                    num(line, "x0", f[0])?,
                    num(line, "x1", f[1])?,
                    num(line, "ka", f[2])?,
                ));
            }
            _ => return Err(scenario_err(line, "content outside a section")),
        }
    }

    let get = |k: &str| {
        domain
            .get(k)
            .copied()
            .ok_or_else(|| IoError::Invalid(format!("[domain] is missing `{k}`")))
    };
    if classes.is_empty() {
        return Err(IoError::Invalid("no [category.*] sections".into()));
    }
    let names: Vec<String> = classes.iter().map(|c| c.0.clone()).collect();
    let known = |n: &str| names.iter().any(|m| m == n);
    for (n, ..) in &init {
        if !known(n) {
            return Err(IoError::Invalid(format!("[init.{n}] refers to an unknown category")));
        }
    }
    for s in &sources {
        if !known(&s.5) {
            return Err(IoError::Invalid(format!("source refers to unknown category `{}`", s.5)));
        }
    }
    if let BoundarySpec::Demand(d) = &left {
        if let Some((n, _)) = d.iter().find(|(n, _)| !known(n)) {
            return Err(IoError::Invalid(format!("boundary demand for unknown category `{n}`")));
        }
    }
    if fixed && !has_stream {
        return Err(IoError::Invalid("supply = fixed needs a [stream] section".into()));
    }
    Ok(ScenarioConfig {
        length: get("length_m")?,
        dx: get("dx_m")?,
        dt: get("dt_s")?,
        horizon: get("horizon_s")?,
        k_jam,
        redistribute,
        stream: if fixed {
            Some(stream.build("stream", k_jam)?)
        } else {
            None
        },
        categories: classes
            .into_iter()
            .map(|(n, f)| f.build(&n, k_jam))
            .collect::<Result<Vec<_>>>()?,
        init,
        left,
        right,
        sources,
    })
}

impl ScenarioConfig {
    /// Discretize into a runnable scenario.
    pub fn build(&self) -> Result<Scenario> {
        let k_jam = density(self.k_jam);
        let set = CategoryFdSet::new(self.categories.clone(), k_jam)?;
        let mut sc = Scenario::uniform(self.length, self.dx, self.dt, set)?;
        let fds = sc.fds.clone();
        let index = |n: &str| fds.index_of(n).expect("names checked while parsing");
        for (n, x0, x1, ka) in &self.init {
            let i = index(n);
            sc.fill(i, *x0, *x1, density(*ka));
        }
        let m = sc.fds.len();
        sc.left = match &self.left {
            BoundarySpec::Closed => Boundary::Closed,
            BoundarySpec::Free => Boundary::FreeOutflow,
            BoundarySpec::Supply(q) => Boundary::Supply(flow(*q)),
            BoundarySpec::Demand(d) => {
                let mut v = vec![0.0; m];
                for (n, q) in d {
                    v[index(n)] = flow(*q);
                }
                Boundary::Demand(v)
            }
        };
        sc.right = match &self.right {
            BoundarySpec::Closed => Boundary::Closed,
            BoundarySpec::Free => Boundary::FreeOutflow,
            BoundarySpec::Supply(q) => Boundary::Supply(flow(*q)),
            BoundarySpec::Demand(_) => {
                return Err(IoError::Invalid(
                    "a prescribed demand applies only at the left end".into(),
                ))
            }
        };
        sc.sources = self
            .sources
            .iter()
            .map(|(x0, x1, t0, t1, rate, n)| Source {
                category: index(n),
                x0: *x0,
                x1: *x1,
                t0: *t0,
                t1: *t1,
                rate: flow(*rate),
            })
            .collect();
        if let Some(s) = &self.stream {
            sc.supply_mode = SupplyMode::Fixed(FdParams::Smulders {
                v_max: s.v_max,
                v_crit: s.v_crit,
                k_crit: s.k_crit,
                omega: s.omega,
                k_jam,
            });
        }
        sc.merge = if self.redistribute {
            MergeMode::Redistribute
        } else {
            MergeMode::Verbatim
        };
        sc.validate()?;
        Ok(sc)
    }
}
