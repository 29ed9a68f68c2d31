//! Nonlinear least-squares calibration of speed–density diagrams.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FdError, FdFamily, FdParams, Result};
use crate::units;

pub const MIN_OBSERVATIONS: usize = 10;

/// Grid nodes of the critical-density scan used to seed two-regime fits.
const PROFILE_NODES: usize = 400;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    /// Fixed jam density (dimensionless).
    pub k_jam: f64,
    pub starts: usize,
    pub seed: u64,
    /// Fit ω as an independent parameter for the two-regime families
    /// instead of deriving it from the continuity condition.
    pub free_omega: bool,
    /// Upper bound on `v_max` (and on the other speed parameters) as a
    /// multiple of the largest observed speed.
    pub speed_bound_factor: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            k_jam: units::density(1000.0),
            starts: 8,
            seed: 42,
            free_omega: false,
            speed_bound_factor: 1.5,
        }
    }
}

/// Goodness of fit in the speed–density and flow–density planes. RMSEs are
/// SI (m/s and m²/(s·m)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub r2_speed: f64,
    pub rmse_speed: f64,
    pub r2_flow: f64,
    pub rmse_flow: f64,
    pub observations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub params: FdParams,
    pub report: FitReport,
    /// Sum of squared speed residuals.
    pub sse: f64,
    pub seed: u64,
    pub converged_starts: usize,
}

/// R² and RMSE of `params` on `(k, v)` observations. Flow residuals use
/// `q = k·v` on both sides; points outside the model domain are skipped.
pub fn fit_report(params: &FdParams, observations: &[(f64, f64)]) -> FitReport {
    let mut v = Vec::with_capacity(observations.len());
    let mut q = Vec::with_capacity(observations.len());
    for &(k, v_obs) in observations {
        if let Ok(v_model) = params.speed(k) {
            v.push((v_obs, v_model));
            q.push((k * v_obs, k * v_model));
        }
    }
    let (r2_speed, rmse_speed) = r2_rmse(&v);
    let (r2_flow, rmse_flow) = r2_rmse(&q);
    FitReport {
        r2_speed,
        rmse_speed,
        r2_flow,
        rmse_flow,
        observations: v.len(),
    }
}

fn r2_rmse(pairs: &[(f64, f64)]) -> (f64, f64) {
    if pairs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let ss_res: f64 = pairs.iter().map(|(o, m)| (o - m).powi(2)).sum();
    let ss_tot: f64 = pairs.iter().map(|(o, _)| (o - mean).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { f64::NAN };
    (r2, (ss_res / n).sqrt())
}

/// Box-constrained parameter vector for one family.
struct Layout {
    family: FdFamily,
    k_jam: f64,
    free_omega: bool,
    bounds: Vec<(f64, f64)>,
}

impl Layout {
    fn new(family: FdFamily, k_jam: f64, free_omega: bool, v_top: f64) -> Self {
        let speed = (1e-3, v_top);
        let ratio = (1e-3, 1.0 - 1e-6);
        let k_crit = (1e-4 * k_jam, k_jam * (1.0 - 1e-6));
        let omega = (1e-4, v_top);
        let bounds = match family {
            FdFamily::Greenshields => vec![speed],
            FdFamily::Greenberg => vec![speed],
            FdFamily::Underwood => vec![speed, (1e-4 * k_jam, 10.0 * k_jam)],
            FdFamily::DelCastillo => vec![speed, omega],
            FdFamily::Daganzo if free_omega => vec![speed, k_crit, omega],
            FdFamily::Daganzo => vec![speed, k_crit],
            FdFamily::Smulders if free_omega => vec![speed, ratio, k_crit, omega],
            FdFamily::Smulders => vec![speed, ratio, k_crit],
        };
        Self {
            family,
            k_jam,
            free_omega,
            bounds,
        }
    }

    fn params(&self, x: &[f64]) -> FdParams {
        let k_jam = self.k_jam;
        match self.family {
            FdFamily::Greenshields => FdParams::Greenshields { v_max: x[0], k_jam },
            FdFamily::Greenberg => FdParams::Greenberg { v_crit: x[0], k_jam },
            FdFamily::Underwood => FdParams::Underwood {
                v_max: x[0],
                k_crit: x[1],
                k_jam,
            },
            FdFamily::DelCastillo => FdParams::DelCastillo {
                v_max: x[0],
                omega: x[1],
                k_jam,
            },
            FdFamily::Daganzo => FdParams::Daganzo {
                v_max: x[0],
                k_crit: x[1],
                omega: if self.free_omega {
                    x[2]
                } else {
                    x[0] * x[1] / (k_jam - x[1])
                },
                k_jam,
            },
            FdFamily::Smulders => {
                let v_crit = x[0] * x[1];
                FdParams::Smulders {
                    v_max: x[0],
                    v_crit,
                    k_crit: x[2],
                    omega: if self.free_omega {
                        x[3]
                    } else {
                        v_crit * x[2] / (k_jam - x[2])
                    },
                    k_jam,
                }
            }
        }
    }

    /// Data-driven starting point.
    fn heuristic(&self, obs: &[(f64, f64)]) -> Vec<f64> {
        let mut speeds: Vec<f64> = obs.iter().map(|o| o.1).collect();
        speeds.sort_by(f64::total_cmp);
        let v95 = speeds[((speeds.len() - 1) as f64 * 0.95).round() as usize];
        let (k_peak, q_peak) = obs
            .iter()
            .map(|&(k, v)| (k, k * v))
            .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let k_peak = k_peak.clamp(0.05 * self.k_jam, 0.95 * self.k_jam);
        let omega = (q_peak / (self.k_jam - k_peak)).max(1e-3);
        let x = match self.family {
            FdFamily::Greenshields => vec![v95],
            FdFamily::Greenberg => {
                let mut ratios: Vec<f64> = obs
                    .iter()
                    .filter(|o| o.0 > 0.0 && o.0 < self.k_jam)
                    .map(|&(k, v)| v / (self.k_jam / k).ln())
                    .collect();
                ratios.sort_by(f64::total_cmp);
                vec![ratios.get(ratios.len() / 2).copied().unwrap_or(v95)]
            }
            FdFamily::Underwood => vec![v95, k_peak],
            FdFamily::DelCastillo => vec![v95, omega],
            FdFamily::Daganzo if self.free_omega => vec![v95, k_peak, omega],
            FdFamily::Daganzo => vec![v95, k_peak],
            FdFamily::Smulders => {
                let ratio = (q_peak / k_peak / v95).clamp(0.05, 0.95);
                let mut x = vec![v95, ratio, k_peak];
                if self.free_omega {
                    x.push(omega);
                }
                x
            }
        };
        self.clamp(x)
    }

    /// Global start for the two-regime families. For a fixed `k_crit` the
    /// speed is linear in the remaining parameters, so the best `k_crit`
    /// on a grid follows from one linear least-squares solve per node.
    fn profile_start(&self, obs: &[(f64, f64)]) -> Option<Vec<f64>> {
        let smulders = match self.family {
            FdFamily::Smulders => true,
            FdFamily::Daganzo => false,
            _ => return None,
        };
        let kj = self.k_jam;
        let mut ks: Vec<f64> = obs.iter().map(|o| o.0).filter(|&k| k > 0.0 && k < kj).collect();
        ks.sort_by(f64::total_cmp);
        if ks.len() < 4 {
            return None;
        }
        let (lo, hi) = (ks[ks.len() / 20], ks[ks.len() - 1 - ks.len() / 20]);
        let cols = 1 + usize::from(smulders) + usize::from(self.free_omega);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for i in 0..=PROFILE_NODES {
            let kc = lo + (hi - lo) * i as f64 / PROFILE_NODES as f64;
            let mut a = DMatrix::zeros(obs.len(), cols);
            let mut b = DVector::zeros(obs.len());
            for (r, &(k, v)) in obs.iter().enumerate() {
                b[r] = v;
                let hyper = kj / k - 1.0;
                if k <= kc {
                    if smulders {
                        a[(r, 0)] = 1.0 - k / kc;
                        a[(r, 1)] = k / kc;
                    } else {
                        a[(r, 0)] = 1.0;
                    }
                } else {
                    // last column is ω, or the speed at k_crit when ω
                    // follows from continuity
                    a[(r, cols - 1)] = if self.free_omega { hyper } else { kc * hyper / (kj - kc) };
                }
            }
            let Ok(sol) = a.clone().svd(true, true).solve(&b, 1e-12) else {
                continue;
            };
            let sse = (&a * &sol - &b).norm_squared();
            let x = if smulders {
                let (vf, vc) = (sol[0], sol[1]);
                if !(vf > 0.0 && vc > 0.0 && vc < vf) {
                    continue;
                }
                let mut x = vec![vf, vc / vf, kc];
                if self.free_omega {
                    x.push(sol[2]);
                }
                x
            } else {
                let mut x = vec![sol[0], kc];
                if self.free_omega {
                    x.push(sol[1]);
                }
                x
            };
            if x.iter().all(|v| *v > 0.0) && best.as_ref().is_none_or(|b| sse < b.0) {
                best = Some((sse, x));
            }
        }
        best.map(|(_, x)| self.clamp(x))
    }

    fn clamp(&self, x: Vec<f64>) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| {
                let margin = 1e-6 * (hi - lo);
                v.clamp(lo + margin, hi - margin)
            })
            .collect()
    }

    fn to_internal(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(&self.bounds)
                .map(|(&v, &(lo, hi))| ((v - lo) / (hi - v)).ln()),
        )
    }

    fn decode(&self, z: &DVector<f64>) -> Vec<f64> {
        z.iter()
            .zip(&self.bounds)
            .map(|(&z, &(lo, hi))| lo + (hi - lo) / (1.0 + (-z).exp()))
            .collect()
    }
}

struct Problem<'a> {
    layout: &'a Layout,
    obs: &'a [(f64, f64)],
    z: DVector<f64>,
}

impl Problem<'_> {
    fn residuals_at(&self, z: &DVector<f64>) -> Option<DVector<f64>> {
        let params = self.layout.params(&self.layout.decode(z));
        let mut r = DVector::zeros(self.obs.len());
        for (i, &(k, v)) in self.obs.iter().enumerate() {
            let res = v - params.speed(k).ok()?;
            if !res.is_finite() {
                return None;
            }
            r[i] = res;
        }
        Some(r)
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for Problem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, z: &DVector<f64>) {
        self.z.copy_from(z);
    }

    fn params(&self) -> DVector<f64> {
        self.z.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        self.residuals_at(&self.z)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let n = self.z.len();
        let mut jac = DMatrix::zeros(self.obs.len(), n);
        for j in 0..n {
            let h = 1e-6 * self.z[j].abs().max(1.0);
            let mut up = self.z.clone();
            let mut down = self.z.clone();
            up[j] += h;
            down[j] -= h;
            let diff = (self.residuals_at(&up)? - self.residuals_at(&down)?) / (2.0 * h);
            jac.set_column(j, &diff);
        }
        Some(jac)
    }
}

/// Fit `family` to `(k, v)` observations by minimizing the squared speed
/// residuals from several starting points.
pub fn calibrate(family: FdFamily, observations: &[(f64, f64)], options: &CalibrationOptions) -> Result<Calibration> {
    let k_jam = options.k_jam;
    if let Some(&(k, _)) = observations.iter().find(|o| !(o.0 >= 0.0 && o.0 <= k_jam)) {
        return Err(FdError::Domain {
            family,
            density: k,
            reason: "observation outside [0, k_jam]",
        });
    }
    let usable: Vec<(f64, f64)> = observations
        .iter()
        .copied()
        .filter(|o| o.1.is_finite() && (family != FdFamily::Greenberg || o.0 > 0.0))
        .collect();
    if usable.len() < MIN_OBSERVATIONS {
        return Err(FdError::InsufficientObservations {
            needed: MIN_OBSERVATIONS,
            got: usable.len(),
        });
    }
    let v_obs_max = usable.iter().map(|o| o.1).fold(0.0, f64::max);
    if v_obs_max <= 0.0 {
        return Err(FdError::InvalidParams {
            family,
            reason: "observed speeds are all zero".into(),
        });
    }
    let layout = Layout::new(
        family,
        k_jam,
        options.free_omega,
        options.speed_bound_factor * v_obs_max,
    );
    let base = layout.heuristic(&usable);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let solver = LevenbergMarquardt::new().with_patience(200);

    let mut starts: Vec<Vec<f64>> = layout.profile_start(&usable).into_iter().collect();
    starts.push(base.clone());
    for _ in 1..options.starts.max(1) {
        starts.push(layout.clamp(base.iter().map(|&v| v * rng.random_range(-0.5f64..0.5).exp()).collect()));
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut converged_starts = 0;
    for x0 in starts {
        let problem = Problem {
            layout: &layout,
            obs: &usable,
            z: layout.to_internal(&x0),
        };
        let (solved, report) = solver.minimize(problem);
        let sse = 2.0 * report.objective_function;
        if report.termination.was_successful() && sse.is_finite() {
            converged_starts += 1;
        } else if !sse.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| sse < b.0) {
            best = Some((sse, layout.decode(&solved.z)));
        }
    }

    let Some((sse, x)) = best else {
        let params = layout.params(&base);
        return Err(FdError::CalibrationFailed {
            best: Box::new(Calibration {
                report: fit_report(&params, &usable),
                params,
                sse: f64::INFINITY,
                seed: options.seed,
                converged_starts: 0,
            }),
        });
    };
    let params = layout.params(&x);
    let result = Calibration {
        report: fit_report(&params, &usable),
        params,
        sse,
        seed: options.seed,
        converged_starts,
    };
    if converged_starts == 0 {
        return Err(FdError::CalibrationFailed { best: Box::new(result) });
    }
    Ok(result)
}
