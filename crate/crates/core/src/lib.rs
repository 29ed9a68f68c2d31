//! Areal continuum model for heterogeneous traffic.
//!
//! Vehicle presence is measured by projected area instead of by count, so
//! that motorcycles, cars and buses share one conserved quantity. The crate
//! covers measurement ([`areal`]), steady-state detection
//! ([`steady_state`]), fundamental diagrams and their calibration ([`fd`]),
//! exact wave analysis ([`kinematic`]) and a multiclass cell transmission
//! model ([`ctm`]).

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod areal;
pub mod ctm;
pub mod fd;
pub mod io;
pub mod kinematic;
pub mod steady_state;
pub mod units;
