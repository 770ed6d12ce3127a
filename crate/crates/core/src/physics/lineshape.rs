//! Absorption lineshapes for continuous-wave saturation.
//!
//! All lineshapes return g(Δω) in seconds. Saturation rates follow
//! Rrf = π·ω1²·g.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{OtomError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Lineshape {
    SuperLorentzian,
    Lorentzian,
    Gaussian,
}

impl Lineshape {
    /// Evaluate g(Δω) for a pool with transverse relaxation `t2`.
    ///
    /// The super-Lorentzian is integrated directly; use
    /// [`Lineshape::evaluate_fast`] for the memoized version.
    pub fn evaluate(self, delta_omega: f64, t2: f64) -> Result<f64> {
        check_t2(t2)?;
        match self {
            Lineshape::Lorentzian => Ok(lorentzian(delta_omega, t2)),
            Lineshape::Gaussian => Ok(gaussian(delta_omega, t2)),
            Lineshape::SuperLorentzian => {
                let x = singular_check(delta_omega, t2)?;
                Ok(t2 * super_lorentzian_integral(x))
            }
        }
    }

    /// Same as [`Lineshape::evaluate`], with the super-Lorentzian read from
    /// the shared interpolation table.
    pub fn evaluate_fast(self, delta_omega: f64, t2: f64) -> Result<f64> {
        match self {
            Lineshape::SuperLorentzian => {
                check_t2(t2)?;
                let x = singular_check(delta_omega, t2)?;
                Ok(t2 * SuperLorentzianTable::shared().integral(x))
            }
            other => other.evaluate(delta_omega, t2),
        }
    }
}

fn check_t2(t2: f64) -> Result<()> {
    if t2 > 0.0 && t2.is_finite() {
        Ok(())
    } else {
        Err(OtomError::domain(format!(
            "lineshape needs t2 > 0, got {t2}"
        )))
    }
}

fn singular_check(delta_omega: f64, t2: f64) -> Result<f64> {
    let x = delta_omega.abs() * t2;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(OtomError::domain(
            "super-Lorentzian lineshape diverges at zero offset",
        ))
    }
}

pub fn lorentzian(delta_omega: f64, t2: f64) -> f64 {
    let x = delta_omega * t2;
    (t2 / PI) / (1.0 + x * x)
}

pub fn gaussian(delta_omega: f64, t2: f64) -> f64 {
    let x = delta_omega * t2;
    t2 / (2.0 * PI).sqrt() * (-0.5 * x * x).exp()
}

/// Magic angle, where 3cos²θ − 1 vanishes.
pub fn magic_angle() -> f64 {
    (1.0 / 3.0f64.sqrt()).acos()
}

/// Integrand of the dimensionless super-Lorentzian G(x) in θ, without the
/// √(2/π) prefactor.
#[inline]
pub fn super_lorentzian_integrand(theta: f64, x: f64) -> f64 {
    let c = theta.cos();
    let u = 3.0 * c * c - 1.0;
    if u == 0.0 {
        return 0.0;
    }
    let r = x / u;
    theta.sin() / u.abs() * (-2.0 * r * r).exp()
}

/// Nodes per side of the magic angle.
pub const QUADRATURE_NODES_PER_SIDE: usize = 128;

/// G(x) = √(2/π) ∫₀^{π/2} sinθ/|3cos²θ−1| · exp(−2(x/(3cos²θ−1))²) dθ,
/// so that g_SL(Δω, T2) = T2·G(|Δω|·T2).
///
/// The integrand has a spike of width ~x next to the magic angle, which a
/// uniform grid in θ under-resolves for small x. The interval is split at
/// the magic angle and each side is integrated in v = ln|θ − θm| with
/// Gauss-Legendre nodes (256 nodes total). Below δ = 0.05·x/(2√2) the
/// integrand is below e⁻⁸⁰⁰ and the range is truncated there.
pub fn super_lorentzian_integral(x: f64) -> f64 {
    let theta_m = magic_angle();
    let slope = 2.0 * 2.0f64.sqrt();
    let rule = gauss_legendre(QUADRATURE_NODES_PER_SIDE);
    let mut total = 0.0;
    for (sign, length) in [(-1.0, theta_m), (1.0, FRAC_PI_2 - theta_m)] {
        let d_min = (0.05 * x / slope).min(0.5 * length);
        let (a, b) = (d_min.ln(), length.ln());
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let mut side = 0.0;
        for (&node, &weight) in rule.nodes.iter().zip(&rule.weights) {
            let d = (mid + half * node).exp();
            side += weight * super_lorentzian_integrand(theta_m + sign * d, x) * d;
        }
        total += half * side;
    }
    (2.0 / PI).sqrt() * total
}

pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn gauss_legendre(n: usize) -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    assert_eq!(n, QUADRATURE_NODES_PER_SIDE);
    RULE.get_or_init(|| GaussLegendre::new(n))
}

impl GaussLegendre {
    /// Nodes and weights on [−1, 1] by Newton iteration on P_n.
    pub fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                let step = p1 / dp;
                z -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }
}

/// Log-log interpolation table of G(x) for batch simulation.
///
/// Knots are log-spaced in x over [`Self::X_MIN`, `Self::X_MAX`]; ln G is
/// interpolated linearly in ln x. Arguments outside the table fall back to
/// direct quadrature.
pub struct SuperLorentzianTable {
    ln_x0: f64,
    step: f64,
    ln_g: Vec<f64>,
}

impl SuperLorentzianTable {
    pub const KNOTS: usize = 4096;
    pub const X_MIN: f64 = 1e-4;
    pub const X_MAX: f64 = 10.0;

    pub fn build() -> Self {
        let ln_x0 = Self::X_MIN.ln();
        let step = (Self::X_MAX.ln() - ln_x0) / (Self::KNOTS - 1) as f64;
        let ln_g = (0..Self::KNOTS)
            .map(|k| super_lorentzian_integral((ln_x0 + step * k as f64).exp()).ln())
            .collect();
        Self { ln_x0, step, ln_g }
    }

    /// Process-wide table, built on first use.
    pub fn shared() -> &'static Self {
        static TABLE: OnceLock<SuperLorentzianTable> = OnceLock::new();
        TABLE.get_or_init(Self::build)
    }

    pub fn integral(&self, x: f64) -> f64 {
        if !(Self::X_MIN..Self::X_MAX).contains(&x) {
            return super_lorentzian_integral(x);
        }
        let pos = (x.ln() - self.ln_x0) / self.step;
        let k = (pos as usize).min(Self::KNOTS - 2);
        let frac = pos - k as f64;
        (self.ln_g[k] + frac * (self.ln_g[k + 1] - self.ln_g[k])).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force midpoint rule in θ, independent of the graded rule.
    fn midpoint_reference(x: f64, n: usize) -> f64 {
        let h = FRAC_PI_2 / n as f64;
        let sum: f64 = (0..n)
            .map(|k| super_lorentzian_integrand((k as f64 + 0.5) * h, x))
            .sum();
        (2.0 / PI).sqrt() * sum * h
    }

    #[test]
    fn lorentzian_peak() {
        let g = Lineshape::Lorentzian.evaluate(0.0, 0.04).unwrap();
        assert!((g - 0.04 / PI).abs() < 1e-15);
        assert!((g - 0.012732).abs() < 1e-6);
    }

    #[test]
    fn super_lorentzian_rejects_zero_offset() {
        assert!(Lineshape::SuperLorentzian.evaluate(0.0, 10e-6).is_err());
        assert!(Lineshape::SuperLorentzian
            .evaluate_fast(0.0, 10e-6)
            .is_err());
    }

    #[test]
    fn rejects_nonpositive_t2() {
        for shape in [
            Lineshape::Lorentzian,
            Lineshape::Gaussian,
            Lineshape::SuperLorentzian,
        ] {
            assert!(shape.evaluate(100.0, 0.0).is_err());
            assert!(shape.evaluate(100.0, -1.0).is_err());
        }
    }

    #[test]
    fn symmetric_and_nonnegative() {
        for shape in [
            Lineshape::Lorentzian,
            Lineshape::Gaussian,
            Lineshape::SuperLorentzian,
        ] {
            for dw in [10.0, 6420.3, 40_127.0] {
                let a = shape.evaluate(dw, 10e-6).unwrap();
                let b = shape.evaluate(-dw, 10e-6).unwrap();
                assert!(a >= 0.0);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn super_lorentzian_matches_million_point_midpoint() {
        let dw = 6420.3;
        let t2 = 10e-6;
        let got = Lineshape::SuperLorentzian.evaluate(dw, t2).unwrap();
        let want = t2 * midpoint_reference(dw * t2, 1_000_000);
        assert!((got - want).abs() / want < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = GaussLegendre::new(QUADRATURE_NODES_PER_SIDE);
        let w: f64 = rule.weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-13);
        let x4: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x.powi(4))
            .sum();
        assert!((x4 - 0.4).abs() < 1e-13);
    }

    #[test]
    fn table_tracks_direct_quadrature() {
        let table = SuperLorentzianTable::shared();
        let mut worst: f64 = 0.0;
        // Δω·T2 spans about [6.4e-3, 4.02] for the default sampling ranges.
        for k in 0..2000 {
            let x = 10f64.powf(-2.3 + 2.95 * (k as f64 + 0.37) / 2000.0);
            let direct = super_lorentzian_integral(x);
            let fast = table.integral(x);
            worst = worst.max((fast - direct).abs() / direct);
        }
        assert!(worst < 5e-5, "worst table error {worst}");
    }
}
