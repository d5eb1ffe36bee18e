//! Display photometry and viewing geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{PixelImage, Plane};

/// How an image is shown: display geometry, photometry and viewing distance.
///
/// The viewing distance is given as a multiple of the display height, so a
/// value of `3.0` means "three picture heights away".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewingConditions {
    /// Physical display height in meters. Informational: angular resolution
    /// only depends on the distance multiple and the line count.
    pub display_height: f64,
    pub vertical_resolution: u32,
    /// cd/m²
    pub peak_luminance: f64,
    /// cd/m²
    pub black_level: f64,
    pub gamma: f64,
    pub distance_multiple: f64,
}

impl Default for ViewingConditions {
    fn default() -> Self {
        Self {
            display_height: 0.30,
            vertical_resolution: 1080,
            peak_luminance: 100.0,
            black_level: 0.5,
            gamma: 2.2,
            distance_multiple: 3.0,
        }
    }
}

impl ViewingConditions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidViewingConditions(msg));
        if !(self.black_level >= 0.0 && self.peak_luminance > self.black_level) {
            return bad(format!(
                "need peak > black >= 0, got peak {} black {}",
                self.peak_luminance, self.black_level
            ));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.distance_multiple > 0.0 && self.distance_multiple.is_finite()) {
            return bad(format!(
                "distance multiple must be positive, got {}",
                self.distance_multiple
            ));
        }
        if self.vertical_resolution < 1 {
            return bad("vertical resolution must be at least 1".into());
        }
        if !(self.display_height > 0.0) {
            return bad(format!("display height must be positive, got {}", self.display_height));
        }
        Ok(())
    }

    /// Same display, different viewing distance.
    pub fn at_distance(mut self, distance_multiple: f64) -> Self {
        self.distance_multiple = distance_multiple;
        self
    }

    pub fn pixels_per_degree(&self) -> f64 {
        pixels_per_degree(self)
    }
}

/// Angular sampling density in pixels per degree of visual angle.
///
/// Small-angle approximation: one degree spans `distance * tan(1°)` which is
/// taken as `distance * π/180`; the distance is `distance_multiple` display
/// heights, and one display height holds `vertical_resolution` pixels. The
/// approximation keeps ppd exactly linear in the distance multiple; its
/// error against the arctangent form is below 0.1% from 1.5 heights onward.
pub fn pixels_per_degree(vc: &ViewingConditions) -> f64 {
    std::f64::consts::PI / 180.0 * vc.distance_multiple * f64::from(vc.vertical_resolution)
}

/// Physical luminance field in cd/m².
#[derive(Clone, Debug, PartialEq)]
pub struct LuminanceImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl LuminanceImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} luminance samples, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidImage("luminance must be finite and non-negative".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn plane(&self) -> Plane {
        Plane::new(self.width, self.height, self.data.clone())
    }
}

/// Gamma display model: `L = black + (peak - black) * (v/255)^gamma`.
pub fn display_model(image: &PixelImage, vc: &ViewingConditions) -> Result<LuminanceImage> {
    if !image.is_gray() {
        return Err(Error::InvalidImage("display model expects a grayscale image".into()));
    }
    vc.validate()?;
    let lut = luminance_lut(vc);
    let data = image.data().iter().map(|&v| lut[v as usize]).collect();
    Ok(LuminanceImage {
        width: image.width(),
        height: image.height(),
        data,
    })
}

/// Luminance for every code value.
pub fn luminance_lut(vc: &ViewingConditions) -> [f64; 256] {
    let mut lut = [0.0; 256];
    let span = vc.peak_luminance - vc.black_level;
    for (v, slot) in lut.iter_mut().enumerate() {
        *slot = (vc.black_level + span * (v as f64 / 255.0).powf(vc.gamma)).clamp(vc.black_level, vc.peak_luminance);
    }
    lut
}
