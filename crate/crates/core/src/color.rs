//! Bayer sampling, bilinear demosaicing, sRGB → CIELAB and histogram stretch.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Graph, Tensor, Var};

pub const RED: usize = 0;
pub const GREEN: usize = 1;
pub const BLUE: usize = 2;

/// 2×2 colour filter arrangement, named by its top-left row then bottom row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BayerPattern {
    #[default]
    Rggb,
    Grbg,
    Gbrg,
    Bggr,
}

impl BayerPattern {
    pub const ALL: [BayerPattern; 4] = [Self::Rggb, Self::Grbg, Self::Gbrg, Self::Bggr];

    fn cell(self) -> [usize; 4] {
        match self {
            Self::Rggb => [RED, GREEN, GREEN, BLUE],
            Self::Grbg => [GREEN, RED, BLUE, GREEN],
            Self::Gbrg => [GREEN, BLUE, RED, GREEN],
            Self::Bggr => [BLUE, GREEN, GREEN, RED],
        }
    }

    /// Channel sampled at `(y, x)`.
    #[inline]
    pub fn color_at(self, y: usize, x: usize) -> usize {
        self.cell()[((y & 1) << 1) | (x & 1)]
    }

    /// Pattern seen after mirroring an even-width mosaic left-right.
    pub fn flip_horizontal(self) -> Self {
        match self {
            Self::Rggb => Self::Grbg,
            Self::Grbg => Self::Rggb,
            Self::Gbrg => Self::Bggr,
            Self::Bggr => Self::Gbrg,
        }
    }

    /// Pattern seen after mirroring an even-height mosaic top-bottom.
    pub fn flip_vertical(self) -> Self {
        match self {
            Self::Rggb => Self::Gbrg,
            Self::Gbrg => Self::Rggb,
            Self::Grbg => Self::Bggr,
            Self::Bggr => Self::Grbg,
        }
    }
}

impl fmt::Display for BayerPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Rggb => "RGGB",
            Self::Grbg => "GRBG",
            Self::Gbrg => "GBRG",
            Self::Bggr => "BGGR",
        };
        f.write_str(s)
    }
}

impl FromStr for BayerPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RGGB" => Ok(Self::Rggb),
            "GRBG" => Ok(Self::Grbg),
            "GBRG" => Ok(Self::Gbrg),
            "BGGR" => Ok(Self::Bggr),
            other => Err(Error::InvalidInput(format!("unknown Bayer pattern `{other}`"))),
        }
    }
}

/// Single-channel mosaic with values in `[0, 1]`, stored as `H × W × 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub data: Tensor,
    pub pattern: BayerPattern,
}

impl RawImage {
    pub fn new(data: Tensor, pattern: BayerPattern) -> Result<Self> {
        let (h, w, c) = data.hwc()?;
        if c != 1 {
            return Err(Error::shape("raw image", format!("expected 1 channel, got {c}")));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidInput(format!("raw image extents {h}×{w} must be even")));
        }
        Ok(Self {
            data: data.clamp01(),
            pattern,
        })
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data.at(y, x, 0)
    }
}

pub fn mosaic(rgb: &Tensor, pattern: BayerPattern) -> Result<RawImage> {
    let (h, w, c) = rgb.hwc()?;
    if c != 3 {
        return Err(Error::shape("mosaic", format!("expected 3 channels, got {c}")));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidInput(format!("mosaic needs even extents, got {h}×{w}")));
    }
    let data = Tensor::image(h, w, 1, |y, x, _| rgb.at(y, x, pattern.color_at(y, x)));
    RawImage::new(data, pattern)
}

fn refl(i: isize, n: usize) -> usize {
    let n = n as isize;
    let i = if i < 0 { -i } else { i };
    (if i >= n { 2 * (n - 1) - i } else { i }) as usize
}

/// Bilinear interpolation of the two missing channels at every site.
///
/// Green at a red/blue site averages the four edge neighbours; red/blue at a
/// green site averages the two neighbours along the row or column holding
/// that colour; red at blue (and vice versa) averages the four diagonals.
/// Borders are mirrored without repeating the edge sample, which keeps the
/// Bayer phase intact.
pub fn bilinear_demosaic(raw: &RawImage) -> Tensor {
    let (h, w) = (raw.height(), raw.width());
    let p = raw.pattern;
    let at = |y: isize, x: isize| raw.get(refl(y, h), refl(x, w));
    Tensor::image(h, w, 3, |y, x, ch| {
        let own = p.color_at(y, x);
        let (yi, xi) = (y as isize, x as isize);
        if ch == own {
            raw.get(y, x)
        } else if ch == GREEN {
            (at(yi - 1, xi) + at(yi + 1, xi) + at(yi, xi - 1) + at(yi, xi + 1)) / 4.0
        } else if own == GREEN {
            if p.color_at(y, x + 1) == ch {
                (at(yi, xi - 1) + at(yi, xi + 1)) / 2.0
            } else {
                (at(yi - 1, xi) + at(yi + 1, xi)) / 2.0
            }
        } else {
            (at(yi - 1, xi - 1) + at(yi - 1, xi + 1) + at(yi + 1, xi - 1) + at(yi + 1, xi + 1)) / 4.0
        }
    })
}

const GAMMA_KNEE: f64 = 0.04045;

/// sRGB decoding (gamma expansion) of a value in `[0, 1]`.
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= GAMMA_KNEE {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_to_linear_deriv(c: f64) -> f64 {
    if c <= GAMMA_KNEE {
        1.0 / 12.92
    } else {
        2.4 / 1.055 * ((c + 0.055) / 1.055).powf(1.4)
    }
}

/// sRGB encoding (gamma compression) of a linear value in `[0, 1]`.
pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Linear sRGB → XYZ, D65.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

// The reference white is the image of RGB (1, 1, 1) so that every neutral
// grey lands on a = b = 0.
fn white() -> [f64; 3] {
    RGB_TO_XYZ.map(|row| row.iter().sum())
}

const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_deriv(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        1.0 / (3.0 * t.cbrt().powi(2))
    } else {
        1.0 / (3.0 * DELTA * DELTA)
    }
}

/// sRGB pixel in `[0, 1]` (clamped first) to CIELAB.
pub fn rgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c.clamp(0.0, 1.0)));
    let wp = white();
    let t: [f64; 3] = std::array::from_fn(|i| {
        let xyz: f64 = (0..3).map(|j| RGB_TO_XYZ[i][j] * lin[j]).sum();
        xyz / wp[i]
    });
    let f = t.map(lab_f);
    [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

/// Jacobian `∂(L, a, b) / ∂(r, g, b)`, zero along clamped channels.
fn rgb_to_lab_jacobian(rgb: [f64; 3]) -> [[f64; 3]; 3] {
    let inside = rgb.map(|c| (0.0..=1.0).contains(&c));
    let c = rgb.map(|c| c.clamp(0.0, 1.0));
    let lin = c.map(srgb_to_linear);
    let dlin: [f64; 3] = std::array::from_fn(|j| if inside[j] { srgb_to_linear_deriv(c[j]) } else { 0.0 });
    let wp = white();
    // ∂f_i/∂c_j
    let df: [[f64; 3]; 3] = std::array::from_fn(|i| {
        let t: f64 = (0..3).map(|j| RGB_TO_XYZ[i][j] * lin[j]).sum::<f64>() / wp[i];
        let fd = lab_f_deriv(t);
        std::array::from_fn(|j| fd * RGB_TO_XYZ[i][j] / wp[i] * dlin[j])
    });
    [
        std::array::from_fn(|j| 116.0 * df[1][j]),
        std::array::from_fn(|j| 500.0 * (df[0][j] - df[1][j])),
        std::array::from_fn(|j| 200.0 * (df[1][j] - df[2][j])),
    ]
}

/// Applies [`rgb_to_lab_pixel`] to every pixel of an `H × W × 3` image.
pub fn rgb_to_lab_image(rgb: &Tensor) -> Result<Tensor> {
    let (h, w, c) = rgb.hwc()?;
    if c != 3 {
        return Err(Error::shape("rgb_to_lab", format!("expected 3 channels, got {c}")));
    }
    let mut out = Tensor::zeros(&[h, w, 3]);
    for (src, dst) in rgb.data().chunks_exact(3).zip(out.data_mut().chunks_exact_mut(3)) {
        dst.copy_from_slice(&rgb_to_lab_pixel([src[0], src[1], src[2]]));
    }
    Ok(out)
}

struct RgbToLab;

impl CustomOp for RgbToLab {
    fn name(&self) -> &str {
        "rgb_to_lab"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        rgb_to_lab_image(inputs[0])
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let x = inputs[0];
        let mut d = Tensor::zeros(x.shape());
        for ((src, g), dst) in x
            .data()
            .chunks_exact(3)
            .zip(grad.data().chunks_exact(3))
            .zip(d.data_mut().chunks_exact_mut(3))
        {
            let jac = rgb_to_lab_jacobian([src[0], src[1], src[2]]);
            for j in 0..3 {
                dst[j] = (0..3).map(|i| g[i] * jac[i][j]).sum();
            }
        }
        vec![d]
    }

    fn piece_hash(&self, inputs: &[&Tensor]) -> Option<u64> {
        let wp = white();
        let mut h = 0u64;
        for px in inputs[0].data().chunks_exact(3) {
            let lin: [f64; 3] = std::array::from_fn(|j| srgb_to_linear(px[j].clamp(0.0, 1.0)));
            for j in 0..3 {
                let c = px[j];
                let gamma_piece = if c < 0.0 {
                    0
                } else if c <= GAMMA_KNEE {
                    1
                } else if c <= 1.0 {
                    2
                } else {
                    3
                };
                let t: f64 = (0..3).map(|k| RGB_TO_XYZ[j][k] * lin[k]).sum::<f64>() / wp[j];
                let f_piece = (t > DELTA * DELTA * DELTA) as u64;
                h = h.rotate_left(3) ^ (gamma_piece << 1 | f_piece);
                h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            }
        }
        Some(h)
    }
}

/// Differentiable sRGB → CIELAB on the graph.
pub fn rgb_to_lab(g: &mut Graph, rgb: Var) -> Result<Var> {
    g.custom(Arc::new(RgbToLab), &[rgb])
}

/// L channel of a Lab image, scaled to `[0, 1]`.
pub fn luminance(g: &mut Graph, lab: Var) -> Result<Var> {
    let l = g.slice_channels(lab, 0, 1)?;
    Ok(g.scale(l, 0.01))
}

#[derive(Clone, Debug)]
pub struct Stretched {
    pub image: Tensor,
    /// Set when the low and high percentiles coincide; the image is then
    /// returned unchanged.
    pub degenerate: bool,
}

/// Fraction of pixels saturated at each end of the luminance range.
pub const STRETCH_SATURATION: f64 = 0.05;

fn rec709_luma(px: &[f64]) -> f64 {
    0.2126 * px[0] + 0.7152 * px[1] + 0.0722 * px[2]
}

/// Stretches the luminance histogram so that the darkest 5% and brightest
/// 5% of pixels saturate, scaling RGB by the per-pixel luminance gain.
/// Evaluation-time only.
pub fn histogram_stretch(rgb: &Tensor) -> Result<Stretched> {
    let (_, _, c) = rgb.hwc()?;
    if c != 3 {
        return Err(Error::shape("histogram_stretch", format!("expected 3 channels, got {c}")));
    }
    let luma: Vec<f64> = rgb.data().chunks_exact(3).map(rec709_luma).collect();
    let mut sorted = luma.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((STRETCH_SATURATION * n as f64).round() as usize).clamp(1, n);
    let (lo, hi) = (sorted[k - 1], sorted[n - k]);
    if hi - lo <= f64::EPSILON {
        log::warn!("histogram stretch skipped: degenerate luminance range [{lo}, {hi}]");
        return Ok(Stretched {
            image: rgb.clone(),
            degenerate: true,
        });
    }
    let mut out = rgb.clone();
    for (px, &y) in out.data_mut().chunks_exact_mut(3).zip(&luma) {
        let target = ((y - lo) / (hi - lo)).clamp(0.0, 1.0);
        if y > 1e-12 {
            let gain = target / y;
            px.iter_mut().for_each(|v| *v = (*v * gain).clamp(0.0, 1.0));
        } else {
            px.iter_mut().for_each(|v| *v = target);
        }
    }
    Ok(Stretched {
        image: out,
        degenerate: false,
    })
}
