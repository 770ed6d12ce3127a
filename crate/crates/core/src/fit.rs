//! Voxel-wise Bloch fitting: bounded damped Gauss-Newton (Levenberg-Marquardt)
//! in the unit-normalized parameter space, restarted from Latin-hypercube
//! points.

use serde::{Deserialize, Serialize};

use crate::dataset::TissueRanges;
use crate::error::{OtomError, Result};
use crate::physics::{simulate_fingerprint, PoolConstants, TissueParams};
use crate::rng::{derive_seed, SeededRng};
use crate::schedule::{Interval, Schedule};

/// Forward-difference step in normalized parameter units.
pub const JACOBIAN_STEP: f64 = 1e-6;
/// Starts are drawn in Latin-hypercube blocks of this size. Block b only
/// depends on (seed, b), so the first k starts are the same for every
/// nStarts ≥ k.
pub const START_BLOCK: usize = 10;
const MIN_SCANS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct FitConfig {
    pub bounds: TissueRanges,
    pub n_starts: usize,
    pub max_iterations: usize,
    pub cost_tolerance: f64,
    pub step_tolerance: f64,
    pub seed: u64,
    pub constants: PoolConstants,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            bounds: TissueRanges::default(),
            n_starts: 10,
            max_iterations: 200,
            cost_tolerance: 1e-12,
            step_tolerance: 1e-10,
            seed: 0,
            constants: PoolConstants::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.n_starts == 0 || self.max_iterations == 0 {
            return Err(OtomError::Config(
                "nStarts and maxIterations must be positive".into(),
            ));
        }
        if !(self.cost_tolerance >= 0.0) || !(self.step_tolerance >= 0.0) {
            return Err(OtomError::Config("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FitResult {
    pub params: TissueParams,
    /// sqrt(mean r²)
    pub residual_rms: f64,
    /// ½·Σr²
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub start_index: usize,
}

/// r_i = simulated_i − measured_i.
pub fn residual(
    params: &TissueParams,
    fingerprint: &[f64],
    schedule: &Schedule,
    consts: &PoolConstants,
) -> Result<Vec<f64>> {
    if fingerprint.len() != schedule.len() {
        return Err(OtomError::domain(format!(
            "fingerprint length {} differs from schedule length {}",
            fingerprint.len(),
            schedule.len()
        )));
    }
    let sim = simulate_fingerprint(params, consts, &schedule.points)?;
    Ok(sim
        .values()
        .iter()
        .zip(fingerprint)
        .map(|(s, m)| s - m)
        .collect())
}

fn half_sum_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Residuals as a function of normalized parameters u ∈ [0, 1]⁴.
struct Problem<'a> {
    bounds: [Interval; 4],
    fingerprint: &'a [f64],
    schedule: &'a Schedule,
    consts: &'a PoolConstants,
}

impl Problem<'_> {
    fn params(&self, u: &[f64; 4]) -> TissueParams {
        TissueParams::from_array(std::array::from_fn(|k| {
            let b = &self.bounds[k];
            b.min + u[k] * (b.max - b.min)
        }))
    }

    fn residual(&self, u: &[f64; 4]) -> Result<Vec<f64>> {
        residual(
            &self.params(u),
            self.fingerprint,
            self.schedule,
            self.consts,
        )
    }

    /// Forward differences, stepping backwards at the upper bound. Column
    /// k holds ∂r/∂u_k.
    fn jacobian(&self, u: &[f64; 4], r: &[f64]) -> Result<Vec<[f64; 4]>> {
        let mut jac = vec![[0.0; 4]; r.len()];
        for k in 0..4 {
            let h = if u[k] + JACOBIAN_STEP <= 1.0 {
                JACOBIAN_STEP
            } else {
                -JACOBIAN_STEP
            };
            let mut v = *u;
            v[k] += h;
            let rk = self.residual(&v)?;
            for (row, (a, b)) in jac.iter_mut().zip(rk.iter().zip(r)) {
                row[k] = (a - b) / h;
            }
        }
        Ok(jac)
    }
}

fn normal_equations(jac: &[[f64; 4]], r: &[f64]) -> ([[f64; 4]; 4], [f64; 4]) {
    let mut jtj = [[0.0; 4]; 4];
    let mut jtr = [0.0; 4];
    for (row, &ri) in jac.iter().zip(r) {
        for a in 0..4 {
            jtr[a] += row[a] * ri;
            for b in 0..4 {
                jtj[a][b] += row[a] * row[b];
            }
        }
    }
    (jtj, jtr)
}

/// Gaussian elimination with partial pivoting; None when singular.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if !(a[pivot][col].abs() > 0.0) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn project(u: [f64; 4]) -> [f64; 4] {
    u.map(|v| v.clamp(0.0, 1.0))
}

struct LocalFit {
    u: [f64; 4],
    cost: f64,
    iterations: usize,
    converged: bool,
}

fn levenberg_marquardt(problem: &Problem, start: [f64; 4], config: &FitConfig) -> Result<LocalFit> {
    let mut u = start;
    let mut r = problem.residual(&u)?;
    let initial = half_sum_sq(&r);
    let mut cost = initial;
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut stalled_on_step = false;
    while iterations < config.max_iterations && cost >= config.cost_tolerance {
        iterations += 1;
        let jac = problem.jacobian(&u, &r)?;
        let (jtj, jtr) = normal_equations(&jac, &r);
        let scale = (0..4)
            .map(|k| jtj[k][k])
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut accepted = false;
        while mu < 1e20 {
            let mut a = jtj;
            for k in 0..4 {
                a[k][k] += mu * jtj[k][k].max(1e-12 * scale);
            }
            let Some(delta) = solve4(a, jtr.map(|v| -v)) else {
                mu *= 10.0;
                continue;
            };
            let trial = project(std::array::from_fn(|k| u[k] + delta[k]));
            let step = (0..4)
                .map(|k| (trial[k] - u[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            // Unphysical trial points (possible only off-bounds) count as a
            // rejected step.
            let rt = match problem.residual(&trial) {
                Ok(rt) => rt,
                Err(_) => {
                    mu *= 10.0;
                    continue;
                }
            };
            let trial_cost = half_sum_sq(&rt);
            if trial_cost < cost {
                u = trial;
                r = rt;
                cost = trial_cost;
                mu = (mu / 3.0).max(1e-15);
                accepted = true;
                stalled_on_step = step < config.step_tolerance;
                break;
            }
            if step < config.step_tolerance {
                break;
            }
            mu *= 4.0;
        }
        if !accepted || stalled_on_step {
            stalled_on_step = true;
            break;
        }
    }
    let converged = cost < initial && (cost < config.cost_tolerance || stalled_on_step);
    Ok(LocalFit {
        u,
        cost,
        iterations,
        converged,
    })
}

/// Start k of the multi-start sequence, in normalized units.
pub fn start_point(seed: u64, k: usize) -> [f64; 4] {
    let block = k / START_BLOCK;
    let slot = k % START_BLOCK;
    let mut rng = SeededRng::new(derive_seed(seed, 20, block as u64));
    let mut cells: [[usize; START_BLOCK]; 4] = [std::array::from_fn(|i| i); 4];
    let mut offsets = [[0.0; START_BLOCK]; 4];
    for d in 0..4 {
        rng.shuffle(&mut cells[d]);
        for o in &mut offsets[d] {
            *o = rng.unit();
        }
    }
    std::array::from_fn(|d| (cells[d][slot] as f64 + offsets[d][slot]) / START_BLOCK as f64)
}

/// Least-squares estimate of the tissue parameters behind `fingerprint`.
/// Every start runs to completion; the lowest-cost result is returned, ties
/// resolved by the earlier start.
pub fn fit_bloch(
    fingerprint: &[f64],
    schedule: &Schedule,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    if schedule.len() < MIN_SCANS {
        return Err(OtomError::domain(format!(
            "fitting four parameters needs at least {MIN_SCANS} scans, got {}",
            schedule.len()
        )));
    }
    if fingerprint.iter().any(|v| !v.is_finite()) {
        return Err(OtomError::domain("fingerprint contains non-finite values"));
    }
    let problem = Problem {
        bounds: config.bounds.intervals(),
        fingerprint,
        schedule,
        consts: &config.constants,
    };
    problem.residual(&[0.5; 4])?;
    let mut best: Option<(usize, LocalFit)> = None;
    for k in 0..config.n_starts {
        let local = levenberg_marquardt(&problem, start_point(config.seed, k), config)?;
        if best.as_ref().is_none_or(|(_, b)| local.cost < b.cost) {
            best = Some((k, local));
        }
    }
    let (start_index, local) = best.expect("at least one start");
    Ok(FitResult {
        params: problem.params(&local.u),
        residual_rms: (2.0 * local.cost / fingerprint.len() as f64).sqrt(),
        cost: local.cost,
        iterations: local.iterations,
        converged: local.converged,
        start_index,
    })
}
