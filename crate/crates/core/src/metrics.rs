//! PSNR and MS-SSIM evaluation with per-image and aggregate reporting.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::color::linear_to_srgb;
use crate::error::{Error, Result};
use crate::losses::{ms_ssim_rgb, LossConfig};
use crate::tensor::Tensor;

/// Returned for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// Unencoded intensities.
    Linear,
    /// Both images gamma-encoded before comparison.
    Srgb,
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mse", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("mse of empty images".into()));
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(1 / MSE)` with peak 1, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor, b: &Tensor, space: Space) -> Result<f64> {
    let err = match space {
        Space::Linear => mse(a, b)?,
        Space::Srgb => mse(&a.map(linear_to_srgb), &b.map(linear_to_srgb))?,
    };
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / err).log10()).min(PSNR_CAP_DB))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub image: String,
    /// `model` or `baseline`.
    pub tag: String,
    pub psnr_linear: f64,
    pub psnr_srgb: f64,
    pub msssim: f64,
    pub runtime_s: f64,
}

impl EvalRow {
    pub fn measure(image: &str, tag: &str, pred: &Tensor, target: &Tensor, runtime_s: f64, loss: &LossConfig) -> Result<Self> {
        Ok(Self {
            image: image.to_string(),
            tag: tag.to_string(),
            psnr_linear: psnr(pred, target, Space::Linear)?,
            psnr_srgb: psnr(pred, target, Space::Srgb)?,
            msssim: ms_ssim_rgb(pred, target, loss)?,
            runtime_s,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub fingerprint: String,
}

impl EvalReport {
    /// Arithmetic mean of the rows carrying `tag`, or `None` if there are none.
    pub fn aggregate(&self, tag: &str) -> Option<EvalRow> {
        let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.tag == tag).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        Some(EvalRow {
            image: "mean".into(),
            tag: tag.to_string(),
            psnr_linear: mean(|r| r.psnr_linear),
            psnr_srgb: mean(|r| r.psnr_srgb),
            msssim: mean(|r| r.msssim),
            runtime_s: mean(|r| r.runtime_s),
        })
    }

    fn tags(&self) -> Vec<&str> {
        let mut tags: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !tags.contains(&r.tag.as_str()) {
                tags.push(&r.tag);
            }
        }
        tags
    }

    /// CSV with header `image,tag,psnr_linear,psnr_srgb,msssim,fingerprint`,
    /// one row per image followed by one `mean` row per tag. Runtime is left
    /// out so that repeated evaluations write identical files.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["image", "tag", "psnr_linear", "psnr_srgb", "msssim", "fingerprint"])?;
        let aggregates: Vec<EvalRow> = self.tags().into_iter().filter_map(|t| self.aggregate(t)).collect();
        for r in self.rows.iter().chain(&aggregates) {
            w.write_record([
                r.image.clone(),
                r.tag.clone(),
                r.psnr_linear.to_string(),
                r.psnr_srgb.to_string(),
                r.msssim.to_string(),
                self.fingerprint.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::InvalidInput(format!("writing CSV: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for tag in self.tags() {
            let n = self.rows.iter().filter(|r| r.tag == tag).count();
            let a = self.aggregate(tag).expect("tag present");
            writeln!(
                f,
                "{tag:>9}: {n} images  PSNR linear {:.2} dB  sRGB {:.2} dB  MS-SSIM {:.4}  {:.3} s/image",
                a.psnr_linear, a.psnr_srgb, a.msssim, a.runtime_s
            )?;
        }
        if !self.fingerprint.is_empty() {
            writeln!(f, "config {}", self.fingerprint)?;
        }
        Ok(())
    }
}

/// Short hex digest identifying a configuration's serialized form.
pub fn fingerprint(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_cases() {
        let a = Tensor::from_fn(&[4, 4, 3], |i| (i as f64 * 0.13).sin().abs() * 0.8);
        assert_eq!(psnr(&a, &a, Space::Linear).unwrap(), PSNR_CAP_DB);
        assert_eq!(psnr(&a, &a, Space::Srgb).unwrap(), PSNR_CAP_DB);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, Space::Linear).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Tensor::zeros(&[4, 4, 1]), Space::Linear).is_err());
    }

    #[test]
    fn aggregate_is_mean_per_tag() {
        let row = |name: &str, tag: &str, p: f64| EvalRow {
            image: name.into(),
            tag: tag.into(),
            psnr_linear: p,
            psnr_srgb: p - 1.0,
            msssim: 0.9,
            runtime_s: 0.0,
        };
        let report = EvalReport {
            rows: vec![row("a", "model", 30.0), row("b", "model", 32.0), row("a", "baseline", 25.0)],
            fingerprint: fingerprint("x"),
        };
        assert_eq!(report.aggregate("model").unwrap().psnr_linear, 31.0);
        assert_eq!(report.aggregate("baseline").unwrap().psnr_srgb, 24.0);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 + 2);
        assert!(text.lines().nth(4).unwrap().starts_with("mean,model,31,30,0.9"));
    }

    #[test]
    fn fingerprint_is_stable() {
        assert_eq!(fingerprint("abc"), "ba7816bf8f01cfea");
        assert_ne!(fingerprint("abc"), fingerprint("abd"));
    }
}
