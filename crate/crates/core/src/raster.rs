//! Binary PPM renderings of label fields, error maps and envelopes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Predictor;
use crate::geometry::SiteSet;
use crate::rng::mix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterMode {
    Labels,
    Error,
    Envelope,
}

/// 8-bit RGB image, rows top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// P6 encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const RED: [u8; 3] = [255, 0, 0];

/// Fixed color of a site index.
pub fn palette(site: usize) -> [u8; 3] {
    let h = mix64(site as u64 + 1).to_le_bytes();
    // Keep colors away from pure white so they never read as "agree".
    [h[0] % 224 + 16, h[1] % 224 + 16, h[2] % 224 + 16]
}

/// Domain point at the center of pixel `(col, row)`. Row 0 is the top edge.
/// For 3D sets the third coordinate is `slice`.
pub fn pixel_center(
    ss: &SiteSet,
    resolution: usize,
    col: usize,
    row: usize,
    slice: f64,
) -> Vec<f64> {
    let d = ss.domain();
    let u = (col as f64 + 0.5) / resolution as f64;
    let v = (row as f64 + 0.5) / resolution as f64;
    let mut x = vec![
        d.lo[0] + u * (d.hi[0] - d.lo[0]),
        d.hi[1] - v * (d.hi[1] - d.lo[1]),
    ];
    if ss.dim() == 3 {
        x.push(slice);
    }
    x
}

/// Renders a `resolution × resolution` image over the domain.
///
/// `Error` mode compares `pred` with `reference` (white where the top sites
/// agree, red elsewhere). 3D sets are sliced at `slice` on the last axis,
/// defaulting to the domain center.
pub fn rasterize(
    pred: &dyn Predictor,
    reference: Option<&dyn Predictor>,
    ss: &SiteSet,
    resolution: usize,
    mode: RasterMode,
    slice: Option<f64>,
) -> Result<Image> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let slice = slice.unwrap_or_else(|| ss.domain().center()[ss.dim() - 1]);
    let points: Vec<Vec<f64>> = (0..resolution)
        .flat_map(|row| (0..resolution).map(move |col| (col, row)))
        .map(|(col, row)| pixel_center(ss, resolution, col, row, slice))
        .collect();
    use rayon::prelude::*;
    let pixels: Vec<[u8; 3]> = match mode {
        RasterMode::Labels => points.par_iter().map(|x| palette(pred.top(x))).collect(),
        RasterMode::Error => {
            let reference = reference.ok_or_else(|| {
                Error::InvalidArgument("error rasters need a reference predictor".into())
            })?;
            points
                .par_iter()
                .map(|x| {
                    if pred.top(x) == reference.top(x) {
                        WHITE
                    } else {
                        RED
                    }
                })
                .collect()
        }
        RasterMode::Envelope => {
            let values: Vec<f64> = points.par_iter().map(|x| pred.envelope_value(x)).collect();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            values
                .iter()
                .map(|v| {
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                    let g = (t * 255.0).round() as u8;
                    [g, g, g]
                })
                .collect()
        }
    };
    Ok(Image {
        width: resolution,
        height: resolution,
        rgb: pixels.into_iter().flatten().collect(),
    })
}
