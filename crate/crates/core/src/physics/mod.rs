//! Two-pool (free water / semisolid) longitudinal exchange model under
//! continuous-wave saturation, and the transient signal it produces.

pub mod lineshape;
pub mod ode;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{OtomError, Result};
pub use lineshape::Lineshape;

/// Larmor frequency per tesla for ¹H, in MHz (equivalently Hz/ppm per T).
pub const PROTON_MHZ_PER_TESLA: f64 = 42.5756;

/// The four estimated tissue quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueParams {
    /// Exchange rate semisolid → water (s⁻¹).
    pub kmw: f64,
    /// Semisolid pool size as a fraction of water M0.
    pub m0m: f64,
    /// Semisolid T2 (s).
    pub t2m: f64,
    /// Water T1 (s).
    pub t1w: f64,
}

impl TissueParams {
    pub fn new(kmw: f64, m0m: f64, t2m: f64, t1w: f64) -> Self {
        Self { kmw, m0m, t2m, t1w }
    }

    /// Water → semisolid rate from detailed balance.
    pub fn kwm(&self, consts: &PoolConstants) -> f64 {
        self.kmw * self.m0m / consts.m0w
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.kmw, self.m0m, self.t2m, self.t1w]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.kmw.is_finite()
            && self.kmw >= 0.0
            && self.m0m.is_finite()
            && self.m0m >= 0.0
            && self.t2m.is_finite()
            && self.t2m > 0.0
            && self.t1w.is_finite()
            && self.t1w > 0.0;
        if ok {
            Ok(())
        } else {
            Err(OtomError::domain(format!(
                "invalid tissue parameters {self:?}"
            )))
        }
    }
}

/// Pool constants that are not estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct PoolConstants {
    pub m0w: f64,
    /// Water T2 (s).
    pub t2w: f64,
    /// Semisolid T1 (s).
    pub t1m: f64,
    /// Main field (T).
    pub b0: f64,
    /// Gyromagnetic ratio (rad·s⁻¹·μT⁻¹).
    pub gamma: f64,
    pub semisolid_lineshape: Lineshape,
}

impl Default for PoolConstants {
    fn default() -> Self {
        Self {
            m0w: 1.0,
            t2w: 0.04,
            t1m: 1.0,
            b0: 3.0,
            gamma: 267.522,
            semisolid_lineshape: Lineshape::SuperLorentzian,
        }
    }
}

impl PoolConstants {
    pub fn hz_per_ppm(&self) -> f64 {
        PROTON_MHZ_PER_TESLA * self.b0
    }
}

/// One dynamic scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    /// Saturation power (μT).
    pub b1: f64,
    /// Saturation offset (ppm).
    pub omega: f64,
    /// Saturation time (s).
    pub ts: f64,
    /// Relaxation delay (s).
    pub td: f64,
}

impl ScanPoint {
    pub fn new(b1: f64, omega: f64, ts: f64, td: f64) -> Self {
        Self { b1, omega, ts, td }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.b1, self.omega, self.ts, self.td]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.b1.is_finite()
            && self.b1 >= 0.0
            && self.omega.is_finite()
            && self.ts.is_finite()
            && self.ts >= 0.0
            && self.td.is_finite()
            && self.td >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(OtomError::domain(format!("invalid scan point {self:?}")))
        }
    }
}

/// Longitudinal fixed point and slow relaxation rate under saturation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationResponse {
    pub rrf_w: f64,
    pub rrf_m: f64,
    pub mss_w: f64,
    pub mss_m: f64,
    pub lambda: f64,
}

/// Measured signals, one per dynamic scan, as fractions of M0w.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fingerprint(pub Vec<f64>);

impl Fingerprint {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// ω1 = γ·B1 in rad/s.
pub fn rf_amplitude(b1: f64, consts: &PoolConstants) -> Result<f64> {
    if !(b1 >= 0.0) {
        return Err(OtomError::domain(format!(
            "B1 must be non-negative, got {b1}"
        )));
    }
    Ok(consts.gamma * b1)
}

/// Offset in rad/s for an offset given in ppm.
pub fn offset_rad_per_sec(omega_ppm: f64, consts: &PoolConstants) -> f64 {
    2.0 * PI * omega_ppm * consts.hz_per_ppm()
}

/// Direct saturation rates (water, semisolid) in s⁻¹.
pub fn saturation_rates(
    tissue: &TissueParams,
    consts: &PoolConstants,
    scan: &ScanPoint,
) -> Result<(f64, f64)> {
    let w1 = rf_amplitude(scan.b1, consts)?;
    if w1 == 0.0 {
        return Ok((0.0, 0.0));
    }
    let dw = offset_rad_per_sec(scan.omega, consts);
    let w1sq = w1 * w1;
    let rrf_w = w1sq * consts.t2w / (1.0 + (dw * consts.t2w).powi(2));
    let rrf_m = PI * w1sq * consts.semisolid_lineshape.evaluate_fast(dw, tissue.t2m)?;
    Ok((rrf_w, rrf_m))
}

/// Fixed point and slow eigenrate of
/// d/dt [Mw, Mm] = A·[Mw, Mm] + c with
/// A = [[−(R1w+kwm+Rrf_w), kmw], [kwm, −(R1m+kmw+Rrf_m)]], c = [R1w·M0w, R1m·M0m].
pub fn steady_state_and_lambda(
    tissue: &TissueParams,
    consts: &PoolConstants,
    scan: &ScanPoint,
) -> Result<SaturationResponse> {
    let (rrf_w, rrf_m) = saturation_rates(tissue, consts, scan)?;
    let r1w = 1.0 / tissue.t1w;
    let r1m = 1.0 / consts.t1m;
    let kmw = tissue.kmw;
    let kwm = tissue.kwm(consts);

    if kwm == 0.0 {
        // Water decouples from the semisolid pool; only its own mode is visible.
        let rate = r1w + rrf_w;
        return Ok(SaturationResponse {
            rrf_w,
            rrf_m,
            mss_w: r1w * consts.m0w / rate,
            mss_m: 0.0,
            lambda: rate,
        });
    }

    let a11 = -(r1w + kwm + rrf_w);
    let a12 = kmw;
    let a21 = kwm;
    let a22 = -(r1m + kmw + rrf_m);
    let c1 = r1w * consts.m0w;
    let c2 = r1m * tissue.m0m;

    let det = a11 * a22 - a12 * a21;
    if !(det > 0.0) || !det.is_finite() {
        return Err(OtomError::Numeric(format!(
            "exchange matrix is singular or unstable (det = {det})"
        )));
    }
    let mss_w = (a12 * c2 - a22 * c1) / det;
    let mss_m = (a21 * c1 - a11 * c2) / det;

    // Both eigenvalues are real and negative: the off-diagonal product is
    // non-negative and the trace negative. The slow rate is recovered from
    // det / fast to avoid cancellation.
    let trace = a11 + a22;
    let disc = ((a11 - a22).powi(2) + 4.0 * a12 * a21).sqrt();
    let fast = 0.5 * (disc - trace);
    let lambda = det / fast;

    Ok(SaturationResponse {
        rrf_w,
        rrf_m,
        mss_w,
        mss_m,
        lambda,
    })
}

/// Transient water signal after a relaxation delay and a saturation block:
/// S = [M0w(1 − e^{−Td/T1w}) − Mss_w]·e^{−λ·Ts} + Mss_w.
pub fn signal(tissue: &TissueParams, consts: &PoolConstants, scan: &ScanPoint) -> Result<f64> {
    let sat = steady_state_and_lambda(tissue, consts, scan)?;
    let recovered = consts.m0w * (1.0 - (-scan.td / tissue.t1w).exp());
    Ok((recovered - sat.mss_w) * (-sat.lambda * scan.ts).exp() + sat.mss_w)
}

/// Signal for every scan of a schedule. Scans are independent: each starts
/// from fully spoiled water magnetization.
pub fn simulate_fingerprint(
    tissue: &TissueParams,
    consts: &PoolConstants,
    scans: &[ScanPoint],
) -> Result<Fingerprint> {
    if scans.is_empty() {
        return Err(OtomError::domain("cannot simulate an empty schedule"));
    }
    tissue.validate()?;
    scans
        .iter()
        .map(|scan| signal(tissue, consts, scan))
        .collect::<Result<Vec<_>>>()
        .map(Fingerprint)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generic() -> (TissueParams, ScanPoint) {
        (
            TissueParams::new(30.0, 0.10, 20e-6, 1.2),
            ScanPoint::new(1.5, 10.0, 1.0, 4.0),
        )
    }

    #[test]
    fn rf_amplitude_values() {
        let c = PoolConstants::default();
        assert!((rf_amplitude(1.0, &c).unwrap() - 267.522).abs() < 1e-12);
        assert_eq!(rf_amplitude(0.0, &c).unwrap(), 0.0);
        assert!((rf_amplitude(2.0, &c).unwrap() - 535.044).abs() < 1e-12);
        assert!(rf_amplitude(-0.1, &c).is_err());
    }

    #[test]
    fn offsets_at_three_tesla() {
        let c = PoolConstants::default();
        assert!((c.hz_per_ppm() - 127.7268).abs() < 1e-9);
        assert_eq!(offset_rad_per_sec(0.0, &c), 0.0);
        // 2π·8·127.7268 and 2π·50·127.7268
        assert!((offset_rad_per_sec(8.0, &c) - 6420.249_224_7).abs() < 1e-6);
        assert!((offset_rad_per_sec(50.0, &c) - 40_126.557_654_7).abs() < 1e-6);
    }

    #[test]
    fn water_saturation_rates() {
        let c = PoolConstants::default();
        let t = TissueParams::new(30.0, 0.1, 20e-6, 1.2);
        // Δω = 0 would make the semisolid lineshape singular; use a Lorentzian
        // semisolid pool to reach the water peak value.
        let lor = PoolConstants {
            semisolid_lineshape: Lineshape::Lorentzian,
            ..c
        };
        let (rw, _) = saturation_rates(&t, &lor, &ScanPoint::new(1.0, 0.0, 1.0, 4.0)).unwrap();
        assert!((rw - 267.522f64.powi(2) * 0.04).abs() < 1e-9);
        assert!((rw - 2862.720_819_36).abs() < 1e-6);

        let zero = saturation_rates(&t, &c, &ScanPoint::new(0.0, 0.0, 1.0, 4.0)).unwrap();
        assert_eq!(zero, (0.0, 0.0));

        let (rw8, _) = saturation_rates(&t, &c, &ScanPoint::new(1.0, 8.0, 1.0, 4.0)).unwrap();
        // 2862.72 / (1 + (6420.249·0.04)²)
        assert!((rw8 - 0.043_405_888_9).abs() < 1e-10, "{rw8}");
    }

    #[test]
    fn single_pool_balance() {
        let c = PoolConstants {
            semisolid_lineshape: Lineshape::Lorentzian,
            ..PoolConstants::default()
        };
        // Choose B1 so that Rrf_w equals R1w on resonance.
        let t = TissueParams::new(30.0, 0.0, 20e-6, 1.0);
        let b1 = (1.0 / (c.gamma.powi(2) * c.t2w)).sqrt();
        let sat = steady_state_and_lambda(&t, &c, &ScanPoint::new(b1, 0.0, 1.0, 4.0)).unwrap();
        assert!((sat.rrf_w - 1.0).abs() < 1e-12);
        assert!((sat.mss_w - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_saturation_fixed_point() {
        let c = PoolConstants::default();
        let (t, _) = generic();
        let sat = steady_state_and_lambda(&t, &c, &ScanPoint::new(0.0, 10.0, 1.0, 4.0)).unwrap();
        assert!((sat.mss_w - 1.0).abs() < 1e-12);
        assert!((sat.mss_m - t.m0m).abs() < 1e-12);
        // Slow eigenvalue of the unsaturated exchange matrix.
        let r1w = 1.0 / t.t1w;
        let kwm = t.kmw * t.m0m;
        let (a, d) = (r1w + kwm, 1.0 + t.kmw);
        let slow = 0.5 * (a + d - ((a - d).powi(2) + 4.0 * t.kmw * kwm).sqrt());
        assert!((sat.lambda - slow).abs() < 1e-10);
    }

    #[test]
    fn response_invariants() {
        let c = PoolConstants::default();
        let (t, s) = generic();
        let sat = steady_state_and_lambda(&t, &c, &s).unwrap();
        assert!(sat.mss_w > 0.0 && sat.mss_w <= 1.0);
        assert!(sat.mss_m > 0.0 && sat.mss_m <= t.m0m);
        assert!(sat.lambda > 0.0);
    }

    #[test]
    fn zero_saturation_time_is_td_recovery() {
        let c = PoolConstants::default();
        let t = TissueParams::new(30.0, 0.10, 20e-6, 1.0);
        let s = signal(&t, &c, &ScanPoint::new(1.5, 10.0, 0.0, 3.5)).unwrap();
        assert!((s - (1.0 - (-3.5f64).exp())).abs() < 1e-15);
        assert!((s - 0.96980).abs() < 1e-5);
    }

    #[test]
    fn long_saturation_reaches_steady_state() {
        let c = PoolConstants::default();
        let (t, mut scan) = generic();
        scan.ts = 1e3;
        let sat = steady_state_and_lambda(&t, &c, &scan).unwrap();
        let s = signal(&t, &c, &scan).unwrap();
        assert!((s - sat.mss_w).abs() < 1e-12);
    }

    #[test]
    fn lambda_limits_to_water_t1() {
        let c = PoolConstants::default();
        let t = TissueParams::new(30.0, 1e-12, 20e-6, 1.3);
        let sat = steady_state_and_lambda(&t, &c, &ScanPoint::new(0.0, 10.0, 1.0, 4.0)).unwrap();
        assert!((sat.lambda * 1.3 - 1.0).abs() < 1e-9);
        let t0 = TissueParams { m0m: 0.0, ..t };
        let sat0 = steady_state_and_lambda(&t0, &c, &ScanPoint::new(0.0, 10.0, 1.0, 4.0)).unwrap();
        assert!((sat0.lambda * 1.3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fingerprint_shapes() {
        let c = PoolConstants::default();
        let (t, s) = generic();
        let fp = simulate_fingerprint(&t, &c, &[s; 40]).unwrap();
        assert_eq!(fp.len(), 40);
        assert!(fp.values().iter().all(|&v| v == fp.values()[0]));
        assert_eq!(fp.values()[0], signal(&t, &c, &s).unwrap());
        assert!(simulate_fingerprint(&t, &c, &[]).is_err());
    }
}
