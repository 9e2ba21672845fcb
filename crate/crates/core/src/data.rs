//! Paired training data: synthetic scenes and degradations, patch sampling
//! with Bayer-aware flips, and directory loaders.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::color::{mosaic, BayerPattern, RawImage};
use crate::error::{Error, Result};
use crate::imageio;
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// Default exposure factor for simulated low-light captures.
pub const LOW_LIGHT_EXPOSURE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct PairMeta {
    pub exposure: f64,
    /// Noise standard deviation on the 8-bit scale, when known.
    pub noise_sigma_8bit: Option<f64>,
    pub source: String,
}

/// Aligned degraded mosaic and clean RGB target.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub input: RawImage,
    pub target: Tensor,
    pub meta: PairMeta,
}

impl ImagePair {
    pub fn new(input: RawImage, target: Tensor, meta: PairMeta) -> Result<Self> {
        let (h, w, c) = target.hwc()?;
        if c != 3 {
            return Err(Error::shape("image pair", format!("target must be RGB, got {c} channels")));
        }
        if (h, w) != (input.height(), input.width()) {
            return Err(Error::shape(
                "image pair",
                format!("input {}×{} vs target {h}×{w}", input.height(), input.width()),
            ));
        }
        if !(meta.exposure > 0.0 && meta.exposure <= 1.0) {
            return Err(Error::InvalidInput(format!("exposure {} outside (0, 1]", meta.exposure)));
        }
        Ok(Self { input, target, meta })
    }

    pub fn height(&self) -> usize {
        self.input.height()
    }

    pub fn width(&self) -> usize {
        self.input.width()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub pairs: Vec<ImagePair>,
    pub names: Vec<String>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Splits by position into train/val/test using the given fractions for
    /// val and test. Pairs keep their sorted order, so each scene lands in
    /// exactly one split.
    pub fn split_by_fraction(self, val: f64, test: f64) -> (Dataset, Dataset, Dataset) {
        let n = self.pairs.len();
        let n_test = (n as f64 * test).round() as usize;
        let n_val = ((n as f64 * val).round() as usize).min(n - n_test);
        let n_train = n - n_val - n_test;
        let mut pairs = self.pairs;
        let mut names = self.names;
        let test_p = pairs.split_off(n_train + n_val);
        let test_n = names.split_off(n_train + n_val);
        let val_p = pairs.split_off(n_train);
        let val_n = names.split_off(n_train);
        (
            Dataset { pairs, names, split: Split::Train },
            Dataset { pairs: val_p, names: val_n, split: Split::Val },
            Dataset { pairs: test_p, names: test_n, split: Split::Test },
        )
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Deterministic synthetic scene: smooth colour gradient, random ellipses
/// and rectangles, low-amplitude band-limited texture and two bands of
/// high-frequency stripes.
pub fn synth_scene(seed: u64, h: usize, w: usize) -> Result<Tensor> {
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) || h < 32 || w < 32 {
        return Err(Error::InvalidInput(format!("synthetic scenes need even extents ≥ 32, got {h}×{w}")));
    }
    let mut rng = rng_for(&[seed, 0x5CE4E]);
    let corners: [[f64; 3]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.1..0.9)));
    let mut img = Tensor::image(h, w, 3, |y, x, c| {
        let (ty, tx) = (y as f64 / (h - 1) as f64, x as f64 / (w - 1) as f64);
        lerp(lerp(corners[0][c], corners[1][c], tx), lerp(corners[2][c], corners[3][c], tx), ty)
    });

    let (hf, wf) = (h as f64, w as f64);
    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
        let (cy, cx) = (rng.random_range(0.0..hf), rng.random_range(0.0..wf));
        let (ry, rx) = (rng.random_range(0.08..0.3) * hf, rng.random_range(0.08..0.3) * wf);
        let ellipse = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if ellipse { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    for (c, &v) in color.iter().enumerate() {
                        img.set(y, x, c, v);
                    }
                }
            }
        }
    }

    // band-limited texture
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let freq = rng.random_range(0.02..0.15);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.04..0.04));
            (theta, freq, phase, amp)
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            for &(theta, freq, phase, amp) in &waves {
                let s = (std::f64::consts::TAU * freq * (x as f64 * theta.cos() + y as f64 * theta.sin()) + phase).sin();
                for (c, a) in amp.iter().enumerate() {
                    let v = img.at(y, x, c) + a * s;
                    img.set(y, x, c, v);
                }
            }
        }
    }

    // stripe bands: one fine (period 2.5–4 px), one coarser (4–8 px)
    for (pmin, pmax) in [(2.5, 4.0), (4.0, 8.0)] {
        let period: f64 = rng.random_range(pmin..pmax);
        // keep stripes within 22.5° of an axis so neighbouring pixels differ strongly
        let tilt = rng.random_range(-std::f64::consts::FRAC_PI_8..std::f64::consts::FRAC_PI_8);
        let theta = if rng.random_bool(0.5) { tilt } else { tilt + std::f64::consts::FRAC_PI_2 };
        let bh = rng.random_range(h / 4..=h / 2);
        let bw = rng.random_range(w / 4..=w / 2);
        let y0 = rng.random_range(0..=h - bh);
        let x0 = rng.random_range(0..=w - bw);
        let dark: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.04));
        let bright: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.96..1.0));
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                let s = (std::f64::consts::TAU / period * (x as f64 * theta.cos() + y as f64 * theta.sin()) + phase).sin();
                let t = 0.5 + 0.5 * s;
                for c in 0..3 {
                    img.set(y, x, c, lerp(dark[c], bright[c], t));
                }
            }
        }
    }
    Ok(img.clamp01())
}

/// Simulates a capture: scale by `exposure`, sample through the colour
/// filter array, add Gaussian noise of `sigma_8bit / 255` and clamp.
pub fn degrade(clean: &Tensor, exposure: f64, sigma_8bit: f64, pattern: BayerPattern, seed: u64) -> Result<ImagePair> {
    if !(exposure > 0.0 && exposure <= 1.0) {
        return Err(Error::InvalidInput(format!("exposure {exposure} outside (0, 1]")));
    }
    if !(0.0..=10.0).contains(&sigma_8bit) {
        return Err(Error::InvalidInput(format!("noise sigma {sigma_8bit} outside [0, 10]")));
    }
    let exposed = clean.map(|v| v * exposure);
    let mut raw = mosaic(&exposed, pattern)?;
    if sigma_8bit > 0.0 {
        let mut rng = rng_for(&[seed, 0x0015E]);
        let normal = Normal::new(0.0, sigma_8bit / 255.0).expect("finite sigma");
        for v in raw.data.data_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    ImagePair::new(
        raw,
        clean.clone(),
        PairMeta {
            exposure,
            noise_sigma_8bit: Some(sigma_8bit),
            source: "synth".into(),
        },
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    #[default]
    None,
    Horizontal,
    HorizontalVertical,
}

fn flip_tensor(t: &Tensor, horizontal: bool, vertical: bool) -> Tensor {
    let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    Tensor::image(h, w, c, |y, x, ch| {
        let sy = if vertical { h - 1 - y } else { y };
        let sx = if horizontal { w - 1 - x } else { x };
        t.at(sy, sx, ch)
    })
}

fn crop(t: &Tensor, y0: usize, x0: usize, h: usize, w: usize) -> Tensor {
    let c = t.shape()[2];
    Tensor::image(h, w, c, |y, x, ch| t.at(y0 + y, x0 + x, ch))
}

/// Square crop of side `size` at an even offset, optionally flipped. The
/// Bayer tag follows the flips.
pub fn sample_patch(pair: &ImagePair, size: usize, seed: u64, augment: Augment) -> Result<ImagePair> {
    sample_crop(pair, size, size, seed, augment)
}

/// [`sample_patch`] with independent height and width.
pub fn sample_crop(pair: &ImagePair, ph: usize, pw: usize, seed: u64, augment: Augment) -> Result<ImagePair> {
    let (h, w) = (pair.height(), pair.width());
    if ph == 0 || pw == 0 || !ph.is_multiple_of(2) || !pw.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("patch {ph}×{pw} must be even and positive")));
    }
    if ph > h || pw > w {
        return Err(Error::InvalidInput(format!("patch {ph}×{pw} exceeds image {h}×{w}")));
    }
    let mut rng = rng_for(&[seed, 0xC409]);
    let y0 = 2 * rng.random_range(0..=(h - ph) / 2);
    let x0 = 2 * rng.random_range(0..=(w - pw) / 2);
    let (hflip, vflip) = match augment {
        Augment::None => (false, false),
        Augment::Horizontal => (rng.random_bool(0.5), false),
        Augment::HorizontalVertical => (rng.random_bool(0.5), rng.random_bool(0.5)),
    };
    let mut pattern = pair.input.pattern;
    if hflip {
        pattern = pattern.flip_horizontal();
    }
    if vflip {
        pattern = pattern.flip_vertical();
    }
    let raw = flip_tensor(&crop(&pair.input.data, y0, x0, ph, pw), hflip, vflip);
    let target = flip_tensor(&crop(&pair.target, y0, x0, ph, pw), hflip, vflip);
    ImagePair::new(RawImage::new(raw, pattern)?, target, pair.meta.clone())
}

/// Parameters of a synthetic paired dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub exposure: f64,
    pub pattern: BayerPattern,
    /// Largest per-channel illuminant attenuation applied to the input side
    /// only; each scene draws its own cast. Zero disables it.
    pub cast: f64,
    /// Render targets through the global tone curve [`tone_curve`].
    pub tone: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 200,
            height: 64,
            width: 64,
            sigma_min: 1.0,
            sigma_max: 10.0,
            exposure: 1.0,
            pattern: BayerPattern::Rggb,
            cast: 0.0,
            tone: false,
        }
    }
}

/// Global rendering curve for synthetic camera-pipeline targets.
pub fn tone_curve(v: f64) -> f64 {
    v * (1.6 - 0.6 * v)
}

/// Builds `spec.count` synthetic pairs; pair `i` of `split` depends only on
/// `(seed, split, i)`.
pub fn synth_dataset(spec: &SynthSpec, seed: u64, split: Split) -> Result<Dataset> {
    if !(0.0..1.0).contains(&spec.cast) {
        return Err(Error::Config(format!("cast {} outside [0, 1)", spec.cast)));
    }
    if spec.sigma_min > spec.sigma_max {
        return Err(Error::Config(format!("sigma range [{}, {}] is empty", spec.sigma_min, spec.sigma_max)));
    }
    let mut pairs = Vec::with_capacity(spec.count);
    let mut names = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = rng_for(&[seed, split.tag(), i as u64]);
        let scene_seed: u64 = rng.random();
        let sigma = if spec.sigma_max > spec.sigma_min {
            rng.random_range(spec.sigma_min..=spec.sigma_max)
        } else {
            spec.sigma_min
        };
        let clean = synth_scene(scene_seed, spec.height, spec.width)?;
        let gains: [f64; 3] = std::array::from_fn(|_| 1.0 - spec.cast * rng.random::<f64>());
        let lit = Tensor::image(spec.height, spec.width, 3, |y, x, c| clean.at(y, x, c) * gains[c]);
        let mut pair = degrade(&lit, spec.exposure, sigma, spec.pattern, scene_seed)?;
        pair.target = if spec.tone { clean.map(tone_curve) } else { clean };
        pairs.push(pair);
        names.push(format!("{i:04}"));
    }
    Ok(Dataset { pairs, names, split })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// `input/` and `groundtruth/` directories with matching file names.
    Msr,
    /// One directory per scene holding `short_exposure_raw.png` and
    /// `medium_exposure.png`.
    S7isp,
    /// `NNN_input.png`, `NNN_target.png` and optional `NNN_meta.txt`.
    Flat,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msr" => Ok(Self::Msr),
            "s7isp" => Ok(Self::S7isp),
            "flat" => Ok(Self::Flat),
            other => Err(Error::InvalidInput(format!("unknown layout `{other}` (msr, s7isp, flat)"))),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Msr => "msr",
            Layout::S7isp => "s7isp",
            Layout::Flat => "flat",
        })
    }
}

/// Sidecar metadata: one `key=value` per line (`pattern`, `exposure`,
/// `sigma`, `source`).
pub fn parse_meta(text: &str) -> Result<(BayerPattern, PairMeta)> {
    let map: BTreeMap<&str, &str> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let pattern = map.get("pattern").map(|p| p.parse()).transpose()?.unwrap_or_default();
    let exposure = map
        .get("exposure")
        .map(|v| v.parse::<f64>().map_err(|e| Error::InvalidInput(format!("exposure `{v}`: {e}"))))
        .transpose()?
        .unwrap_or(1.0);
    let sigma = map
        .get("sigma")
        .map(|v| v.parse::<f64>().map_err(|e| Error::InvalidInput(format!("sigma `{v}`: {e}"))))
        .transpose()?;
    let source = map.get("source").copied().unwrap_or("unknown").to_string();
    Ok((
        pattern,
        PairMeta {
            exposure,
            noise_sigma_8bit: sigma,
            source,
        },
    ))
}

pub fn format_meta(pattern: BayerPattern, meta: &PairMeta) -> String {
    let mut s = format!("pattern={pattern}\nexposure={}\n", meta.exposure);
    if let Some(sigma) = meta.noise_sigma_8bit {
        s.push_str(&format!("sigma={sigma}\n"));
    }
    s.push_str(&format!("source={}\n", meta.source));
    s
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn load_one(input: &Path, target: &Path, pattern: BayerPattern, meta: PairMeta) -> Result<ImagePair> {
    let raw = imageio::read_mosaic(input)?;
    let target = imageio::read_rgb(target)?;
    ImagePair::new(RawImage::new(raw, pattern)?, target, meta)
}

/// Loads every pair under `path`, ordered lexicographically by name. Pairs
/// missing a counterpart are skipped with a warning.
pub fn load_pair_dir(path: &Path, layout: Layout, default_pattern: BayerPattern) -> Result<Dataset> {
    let mut ds = Dataset::default();
    match layout {
        Layout::Flat => {
            for p in sorted_entries(path)? {
                let Some(name) = p.file_name().and_then(|n| n.to_str()) else { continue };
                let Some(stem) = name.strip_suffix("_input.png") else { continue };
                let target = path.join(format!("{stem}_target.png"));
                if !target.exists() {
                    log::warn!("skipping {}: missing {}", p.display(), target.display());
                    continue;
                }
                let meta_path = path.join(format!("{stem}_meta.txt"));
                let (pattern, meta) = if meta_path.exists() {
                    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
                    parse_meta(&text)?
                } else {
                    (default_pattern, default_meta("flat"))
                };
                ds.pairs.push(load_one(&p, &target, pattern, meta)?);
                ds.names.push(stem.to_string());
            }
        }
        Layout::Msr => {
            let (idir, gdir) = (path.join("input"), path.join("groundtruth"));
            if !idir.is_dir() {
                return Err(Error::InvalidInput(format!("{} has no input/ directory", path.display())));
            }
            for p in sorted_entries(&idir)? {
                let Some(name) = p.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
                if !name.ends_with(".png") {
                    continue;
                }
                let target = gdir.join(&name);
                if !target.exists() {
                    log::warn!("skipping {}: missing {}", p.display(), target.display());
                    continue;
                }
                ds.pairs.push(load_one(&p, &target, default_pattern, default_meta("msr"))?);
                ds.names.push(name.trim_end_matches(".png").to_string());
            }
        }
        Layout::S7isp => {
            for scene in sorted_entries(path)? {
                if !scene.is_dir() {
                    continue;
                }
                let input = scene.join("short_exposure_raw.png");
                let target = scene.join("medium_exposure.png");
                if !input.exists() || !target.exists() {
                    log::warn!("skipping scene {}: missing raw input or target", scene.display());
                    continue;
                }
                let meta = PairMeta {
                    exposure: LOW_LIGHT_EXPOSURE,
                    noise_sigma_8bit: None,
                    source: "s7isp".into(),
                };
                ds.pairs.push(load_one(&input, &target, default_pattern, meta)?);
                ds.names.push(scene.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string());
            }
        }
    }
    if ds.is_empty() {
        log::warn!("no image pairs found under {} ({layout} layout)", path.display());
    }
    Ok(ds)
}

fn default_meta(source: &str) -> PairMeta {
    PairMeta {
        exposure: 1.0,
        noise_sigma_8bit: None,
        source: source.into(),
    }
}

/// Writes `ds` in flat layout: 16-bit raw PNG, 16-bit RGB target PNG and a
/// metadata sidecar per pair.
pub fn write_flat(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (pair, name) in ds.pairs.iter().zip(&ds.names) {
        imageio::write_gray16(&dir.join(format!("{name}_input.png")), &pair.input.data)?;
        imageio::write_rgb16(&dir.join(format!("{name}_target.png")), &pair.target)?;
        let meta = dir.join(format!("{name}_meta.txt"));
        fs::write(&meta, format_meta(pair.input.pattern, &pair.meta)).map_err(|e| Error::io(&meta, e))?;
    }
    Ok(())
}
