//! 8-bit grayscale PGM (binary P5) rendering with linear windowing.

use serde::{Deserialize, Serialize};

use crate::error::{OtomError, Result};

/// Display range mapped onto intensities 0..=255.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub min: f64,
    pub max: f64,
}

impl Window {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(OtomError::domain(format!(
                "invalid display window [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    /// Symmetric window covering ±max|v| (±1 for an all-zero map).
    pub fn symmetric(values: &[f64]) -> Self {
        let m = values
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let m = if m > 0.0 { m } else { 1.0 };
        Self { min: -m, max: m }
    }

    /// Non-finite values map to 0.
    pub fn intensity(&self, v: f64) -> u8 {
        if !v.is_finite() {
            return 0;
        }
        let u = ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0);
        (u * 255.0).round() as u8
    }
}

/// P5 image; the window bounds are recorded in a header comment.
pub fn render_pgm(values: &[f64], width: usize, height: usize, window: &Window) -> Result<Vec<u8>> {
    if values.len() != width * height || width == 0 {
        return Err(OtomError::domain(format!(
            "{} values do not form a {width}×{height} image",
            values.len()
        )));
    }
    let mut out = format!(
        "P5\n# window {} {}\n{width} {height}\n255\n",
        window.min, window.max
    )
    .into_bytes();
    out.extend(values.iter().map(|&v| window.intensity(v)));
    Ok(out)
}
