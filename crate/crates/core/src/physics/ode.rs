//! Numerical reference for the transient signal: RK4 integration of the
//! coupled longitudinal two-pool equations during the saturation block.

use super::{saturation_rates, PoolConstants, ScanPoint, TissueParams};
use crate::error::{OtomError, Result};

/// Coarsest step accepted by [`ode_signal`].
pub const MAX_STEP: f64 = 1e-4;

/// Water magnetization at the end of saturation, integrated with classic
/// fourth-order Runge-Kutta.
///
/// Both pools start from their Td recovery from zero: Mw(0) = M0w(1 − e^{−Td/T1w}),
/// Mm(0) = M0m(1 − e^{−Td/T1m}).
pub fn ode_signal(
    tissue: &TissueParams,
    consts: &PoolConstants,
    scan: &ScanPoint,
    dt: f64,
) -> Result<f64> {
    if !(dt > 0.0) || dt > MAX_STEP {
        return Err(OtomError::Numeric(format!(
            "ODE step {dt} s is coarser than {MAX_STEP} s"
        )));
    }
    tissue.validate()?;
    scan.validate()?;
    let (rrf_w, rrf_m) = saturation_rates(tissue, consts, scan)?;
    let r1w = 1.0 / tissue.t1w;
    let r1m = 1.0 / consts.t1m;
    let kmw = tissue.kmw;
    let kwm = tissue.kwm(consts);
    let m0w = consts.m0w;
    let m0m = tissue.m0m;

    let deriv = |[mw, mm]: [f64; 2]| -> [f64; 2] {
        [
            r1w * (m0w - mw) - kwm * mw + kmw * mm - rrf_w * mw,
            r1m * (m0m - mm) + kwm * mw - kmw * mm - rrf_m * mm,
        ]
    };

    let mut state = [
        m0w * (1.0 - (-scan.td / tissue.t1w).exp()),
        m0m * (1.0 - (-scan.td / consts.t1m).exp()),
    ];
    if scan.ts == 0.0 {
        return Ok(state[0]);
    }
    let steps = (scan.ts / dt).ceil() as usize;
    let h = scan.ts / steps as f64;
    let axpy = |s: [f64; 2], k: [f64; 2], a: f64| [s[0] + a * k[0], s[1] + a * k[1]];
    for _ in 0..steps {
        let k1 = deriv(state);
        let k2 = deriv(axpy(state, k1, 0.5 * h));
        let k3 = deriv(axpy(state, k2, 0.5 * h));
        let k4 = deriv(axpy(state, k3, h));
        for i in 0..2 {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(state[0])
}
