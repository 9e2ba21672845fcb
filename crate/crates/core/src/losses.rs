//! Training objectives: mean squared error for joint demosaic/denoise and the
//! Lab-L1 + luminance MS-SSIM combination for the full pipeline.

use serde::{Deserialize, Serialize};

use crate::color::{luminance, rgb_to_lab};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the MS-SSIM term; the Lab L1 term gets `1 − alpha`.
    pub alpha: f64,
    pub msssim_scales: usize,
    pub msssim_window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            msssim_scales: 2,
            msssim_window: 5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.msssim_window.is_multiple_of(2) || self.msssim_window == 0 {
            return Err(Error::Config(format!("MS-SSIM window {} must be odd", self.msssim_window)));
        }
        if self.msssim_scales == 0 {
            return Err(Error::Config("MS-SSIM needs at least one scale".into()));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::Config("SSIM constants must be positive".into()));
        }
        Ok(())
    }

    /// Smallest image side MS-SSIM accepts.
    pub fn min_extent(&self) -> usize {
        self.msssim_window << (self.msssim_scales - 1)
    }
}

fn same_shape(g: &Graph, a: Var, b: Var, op: &'static str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

/// Per-pixel SSIM from box-window local statistics with mirrored borders.
pub fn ssim_map(g: &mut Graph, a: Var, b: Var, window: usize, c1: f64, c2: f64) -> Result<Var> {
    same_shape(g, a, b, "ssim_map")?;
    let mu_a = g.box_filter(a, window)?;
    let mu_b = g.box_filter(b, window)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = g.box_filter(aa, window)?;
    let e_bb = g.box_filter(bb, window)?;
    let e_ab = g.box_filter(ab, window)?;
    let mu_aa = g.mul(mu_a, mu_a)?;
    let mu_bb = g.mul(mu_b, mu_b)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let cov = g.sub(e_ab, mu_ab)?;

    let l_num = g.scale(mu_ab, 2.0);
    let l_num = g.add_scalar(l_num, c1);
    let c_num = g.scale(cov, 2.0);
    let c_num = g.add_scalar(c_num, c2);
    let l_den = g.add(mu_aa, mu_bb)?;
    let l_den = g.add_scalar(l_den, c1);
    let c_den = g.add(var_a, var_b)?;
    let c_den = g.add_scalar(c_den, c2);
    let num = g.mul(l_num, c_num)?;
    let den = g.mul(l_den, c_den)?;
    g.div(num, den)
}

/// Product over scales of the mean SSIM; each coarser scale is a 2×2 mean
/// downsampling of the previous one.
pub fn ms_ssim(g: &mut Graph, a: Var, b: Var, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    same_shape(g, a, b, "ms_ssim")?;
    let (h, w, _) = g.value(a).hwc()?;
    let min = cfg.min_extent();
    if h < min || w < min {
        return Err(Error::InvalidInput(format!(
            "MS-SSIM with {} scales and window {} needs at least {min}×{min} pixels, got {h}×{w}",
            cfg.msssim_scales, cfg.msssim_window
        )));
    }
    let (mut a, mut b) = (a, b);
    let mut product: Option<Var> = None;
    for scale in 0..cfg.msssim_scales {
        if scale > 0 {
            a = g.avg_pool2x2(a)?;
            b = g.avg_pool2x2(b)?;
        }
        let map = ssim_map(g, a, b, cfg.msssim_window, cfg.c1, cfg.c2)?;
        let m = g.mean(map);
        product = Some(match product {
            None => m,
            Some(p) => g.mul(p, m)?,
        });
    }
    Ok(product.expect("at least one scale"))
}

/// `(1 − α)·mean|Lab(pred) − Lab(target)| + α·(1 − MS-SSIM(L(pred), L(target)))`.
pub fn combined_loss(g: &mut Graph, pred: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    same_shape(g, pred, target, "combined_loss")?;
    let lab_p = rgb_to_lab(g, pred)?;
    let lab_t = rgb_to_lab(g, target)?;
    let diff = g.sub(lab_p, lab_t)?;
    let abs = g.abs(diff);
    let l1 = g.mean(abs);
    let l1 = g.scale(l1, 1.0 - cfg.alpha);
    if cfg.alpha == 0.0 {
        return Ok(l1);
    }
    let lum_p = luminance(g, lab_p)?;
    let lum_t = luminance(g, lab_t)?;
    let ms = ms_ssim(g, lum_p, lum_t, cfg)?;
    // α·(1 − ms)
    let neg = g.scale(ms, -cfg.alpha);
    let term = g.add_scalar(neg, cfg.alpha);
    g.add(l1, term)
}

/// Mean squared error over all elements.
pub fn l2_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    same_shape(g, pred, target, "l2_loss")?;
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

/// MS-SSIM between two single-channel images, outside any training graph.
pub fn ms_ssim_value(a: &Tensor, b: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let m = ms_ssim(&mut g, av, bv, cfg)?;
    Ok(g.value(m).data()[0])
}

/// MS-SSIM on the Lab luminance of two RGB images.
pub fn ms_ssim_rgb(a: &Tensor, b: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let (la, lb) = (rgb_to_lab(&mut g, av)?, rgb_to_lab(&mut g, bv)?);
    let (ya, yb) = (luminance(&mut g, la)?, luminance(&mut g, lb)?);
    let m = ms_ssim(&mut g, ya, yb, cfg)?;
    Ok(g.value(m).data()[0])
}

pub fn combined_loss_value(pred: &Tensor, target: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (p, t) = (g.constant(pred.clone()), g.constant(target.clone()));
    let l = combined_loss(&mut g, p, t, cfg)?;
    Ok(g.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value(f: impl FnOnce(&mut Graph) -> Result<Var>) -> Tensor {
        let mut g = Graph::new();
        let v = f(&mut g).unwrap();
        g.value(v).clone()
    }

    #[test]
    fn ssim_of_constants_closed_form() {
        let cfg = LossConfig::default();
        let map = value(|g| {
            let a = g.constant(Tensor::filled(&[8, 8, 1], 0.2));
            let b = g.constant(Tensor::filled(&[8, 8, 1], 0.8));
            ssim_map(g, a, b, 5, cfg.c1, cfg.c2)
        });
        let expect: f64 = (2.0 * 0.16 + 1e-4) / (0.04 + 0.64 + 1e-4);
        assert!((expect - 0.47066).abs() < 1e-5);
        assert!(map.data().iter().all(|v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn ssim_complement_of_half_is_one() {
        let map = value(|g| {
            let a = g.constant(Tensor::filled(&[6, 6, 1], 0.5));
            let b = g.constant(Tensor::filled(&[6, 6, 1], 1.0 - 0.5));
            ssim_map(g, a, b, 5, 1e-4, 9e-4)
        });
        assert!(map.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ssim_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[6, 6, 1]));
        let b = g.constant(Tensor::zeros(&[6, 7, 1]));
        assert!(ssim_map(&mut g, a, b, 5, 1e-4, 9e-4).is_err());
    }

    #[test]
    fn ms_ssim_rejects_small_images() {
        let cfg = LossConfig::default();
        let t = Tensor::filled(&[9, 12, 1], 0.5);
        let err = ms_ssim_value(&t, &t, &cfg).unwrap_err().to_string();
        assert!(err.contains("10×10"), "{err}");
    }

    #[test]
    fn l2_cases() {
        let t = Tensor::from_fn(&[4, 4, 3], |i| (i as f64 * 0.37).sin().abs());
        let same = value(|g| {
            let (a, b) = (g.constant(t.clone()), g.constant(t.clone()));
            l2_loss(g, a, b)
        });
        assert_eq!(same.data()[0], 0.0);
        let off = value(|g| {
            let a = g.constant(t.map(|v| v + 0.1));
            let b = g.constant(t.clone());
            l2_loss(g, a, b)
        });
        assert!((off.data()[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let bad_alpha = LossConfig { alpha: 1.5, ..LossConfig::default() };
        assert!(bad_alpha.validate().is_err());
        let even = LossConfig { msssim_window: 4, ..LossConfig::default() };
        assert!(even.validate().is_err());
        let none = LossConfig { msssim_scales: 0, ..LossConfig::default() };
        assert!(none.validate().is_err());
        assert_eq!(LossConfig::default().min_extent(), 10);
    }
}
