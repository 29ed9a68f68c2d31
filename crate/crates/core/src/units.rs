//! Unit conversions between the canonical internal units and the
//! presentation units used in files and reports.
//!
//! Internally every quantity is SI: positions in m, times in s, speeds in
//! m/s, areal density as a dimensionless ratio (m² of vehicle per m² of
//! road) and areal flow in m²/(s·m). Presentation units follow the traffic
//! engineering convention: km/h, m²/(km·m) and m²/(h·m).

/// m/s per km/h.
pub const MS_PER_KMH: f64 = 1.0 / 3.6;

/// km/h → m/s.
#[inline]
pub fn kmh(v_kmh: f64) -> f64 {
    v_kmh * MS_PER_KMH
}

/// m/s → km/h.
#[inline]
pub fn to_kmh(v: f64) -> f64 {
    v * 3.6
}

/// m²/(km·m) → dimensionless areal density.
#[inline]
pub fn density(k_display: f64) -> f64 {
    k_display / 1000.0
}

/// Dimensionless areal density → m²/(km·m).
#[inline]
pub fn to_density_display(k: f64) -> f64 {
    k * 1000.0
}

/// m²/(h·m) → m²/(s·m).
#[inline]
pub fn flow(q_display: f64) -> f64 {
    q_display / 3600.0
}

/// m²/(s·m) → m²/(h·m).
#[inline]
pub fn to_flow_display(q: f64) -> f64 {
    q * 3600.0
}
