//! The two-stage network.
//!
//! The low-level stage is a stack of 3×3 reflect-padded convolution blocks.
//! Each block emits `width` channels: `width − 3` relu features and 3 tanh
//! residual channels that are added to a running image estimate. The next
//! block sees the features concatenated with the updated estimate.
//!
//! The high-level stage runs strided convolutions and max-pools over the
//! final features, mean-pools to a vector and maps it through one affine
//! layer to the 30 coefficients of a global quadratic colour transform,
//! which is then applied to the low-level estimate.

use std::sync::Arc;

use nalgebra::{DMatrix, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Graph, Padding, Tensor, Var};

pub const RESIDUAL_CHANNELS: usize = 3;
pub const MONOMIALS: usize = 10;
pub const TRANSFORM_LEN: usize = 3 * MONOMIALS;
/// Version tag of the monomial serialisation order below.
pub const MONOMIAL_ORDER_VERSION: u32 = 1;

/// Indices of the first-order monomials r, g, b and the constant term.
pub const AFFINE_INDICES: [usize; 4] = [3, 6, 8, 9];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_ll: usize,
    pub n_hl: usize,
    /// Channels emitted by every low-level block, residual channels included.
    pub width: usize,
    /// Filters per strided high-level convolution.
    pub hl_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_ll: 15,
            n_hl: 3,
            width: 64,
            hl_width: 64,
        }
    }
}

impl ModelConfig {
    pub fn feature_channels(&self) -> usize {
        self.width - RESIDUAL_CHANNELS
    }

    fn head_inputs(&self) -> usize {
        if self.n_hl > 0 {
            self.hl_width
        } else {
            self.feature_channels()
        }
    }

    /// Smallest side length the high-level stage accepts.
    pub fn min_highlevel_extent(&self) -> usize {
        4usize.pow(self.n_hl as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ll == 0 {
            return Err(Error::Config("n_ll must be at least 1".into()));
        }
        if self.width <= RESIDUAL_CHANNELS {
            return Err(Error::Config(format!(
                "width {} leaves no feature channels (need > {RESIDUAL_CHANNELS})",
                self.width
            )));
        }
        if self.n_hl > 0 && self.hl_width == 0 {
            return Err(Error::Config("hl_width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            kernel: Tensor::zeros(&[3, 3, cin, cout]),
            bias: Tensor::zeros(&[cout]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub lowlevel: Vec<ConvLayer>,
    pub highlevel: Vec<ConvLayer>,
    /// `30 × n` head weights.
    pub head_weights: Tensor,
    pub head_bias: Tensor,
}

impl ModelParams {
    /// All-zero weights with the identity transform on the head bias.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let lowlevel = (0..config.n_ll)
            .map(|i| ConvLayer::zeros(if i == 0 { 3 } else { config.width }, config.width))
            .collect();
        let highlevel = (0..config.n_hl)
            .map(|i| ConvLayer::zeros(if i == 0 { config.feature_channels() } else { config.hl_width }, config.hl_width))
            .collect();
        Ok(Self {
            config: config.clone(),
            lowlevel,
            highlevel,
            head_weights: Tensor::zeros(&[TRANSFORM_LEN, config.head_inputs()]),
            head_bias: ColorTransform::identity().to_tensor(),
        })
    }

    /// Tensors in declaration order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.lowlevel.iter().enumerate() {
            out.push((format!("lowlevel.{i}.kernel"), &l.kernel));
            out.push((format!("lowlevel.{i}.bias"), &l.bias));
        }
        for (i, l) in self.highlevel.iter().enumerate() {
            out.push((format!("highlevel.{i}.kernel"), &l.kernel));
            out.push((format!("highlevel.{i}.bias"), &l.bias));
        }
        out.push(("head.weights".into(), &self.head_weights));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in self.lowlevel.iter_mut().chain(self.highlevel.iter_mut()) {
            out.push(&mut l.kernel);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head_weights);
        out.push(&mut self.head_bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every parameter as a learnable leaf on `g`.
    pub fn register(&self, g: &mut Graph) -> ParamVars {
        let mut conv = |l: &ConvLayer| (g.param(l.kernel.clone()), g.param(l.bias.clone()));
        let lowlevel = self.lowlevel.iter().map(&mut conv).collect();
        let highlevel = self.highlevel.iter().map(&mut conv).collect();
        ParamVars {
            lowlevel,
            highlevel,
            head_weights: g.param(self.head_weights.clone()),
            head_bias: g.param(self.head_bias.clone()),
        }
    }
}

/// Graph handles of a registered [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub lowlevel: Vec<(Var, Var)>,
    pub highlevel: Vec<(Var, Var)>,
    pub head_weights: Var,
    pub head_bias: Var,
}

impl ParamVars {
    /// Handles in the same order as [`ModelParams::named_tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(k, b) in self.lowlevel.iter().chain(&self.highlevel) {
            out.push(k);
            out.push(b);
        }
        out.push(self.head_weights);
        out.push(self.head_bias);
        out
    }
}

/// Scale applied to the He-initialised kernels of the residual channels,
/// so that an untrained low-level stage stays close to the identity.
pub const RESIDUAL_INIT_GAIN: f64 = 0.1;

/// He-style initialisation: kernels ~ N(0, 2 / fan_in), biases zero, with
/// the residual output channels scaled by [`RESIDUAL_INIT_GAIN`]. The head
/// weights start at zero and its bias holds `transform` (identity if none),
/// so the untrained high-level stage emits exactly that transform.
pub fn init_params(seed: u64, config: &ModelConfig, transform: Option<&ColorTransform>) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = config.feature_channels();
    for (l, layer) in params.lowlevel.iter_mut().chain(params.highlevel.iter_mut()).enumerate() {
        let s = layer.kernel.shape();
        let fan_in = s[0] * s[1] * s[2];
        let cout = s[3];
        let residual = l < config.n_ll;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        for (i, v) in layer.kernel.data_mut().iter_mut().enumerate() {
            *v = normal.sample(&mut rng);
            if residual && i % cout >= nf {
                *v *= RESIDUAL_INIT_GAIN;
            }
        }
    }
    if let Some(t) = transform {
        params.head_bias = t.to_tensor();
    }
    Ok(params)
}

/// Runs the low-level stage. Returns `(estimate, features)`.
///
/// With `ablate_skip` every block's residual channels replace the estimate
/// instead of being added to it.
pub fn lowlevel_forward(g: &mut Graph, rgb: Var, params: &ParamVars, config: &ModelConfig, ablate_skip: bool) -> Result<(Var, Var)> {
    let (h, w, c) = g.value(rgb).hwc()?;
    if c != 3 {
        return Err(Error::shape("lowlevel_forward", format!("expected RGB input, got {c} channels")));
    }
    if h < 3 || w < 3 {
        return Err(Error::InvalidInput(format!("image {h}×{w} is smaller than 3×3")));
    }
    let nf = config.feature_channels();
    let mut estimate = rgb;
    let mut x = rgb;
    let mut features = None;
    for &(k, b) in &params.lowlevel {
        let y = g.conv2d(x, k, b, 1, Padding::Reflect)?;
        let f = g.slice_channels(y, 0, nf)?;
        let f = g.relu(f);
        let r = g.slice_channels(y, nf, RESIDUAL_CHANNELS)?;
        let r = g.tanh(r);
        estimate = if ablate_skip { r } else { g.add(estimate, r)? };
        x = g.concat_channels(&[f, estimate])?;
        features = Some(f);
    }
    let features = features.ok_or_else(|| Error::Config("n_ll must be at least 1".into()))?;
    Ok((estimate, features))
}

/// Runs the high-level stage on `features`, returning the 30 transform
/// coefficients (row-major 3×10).
pub fn highlevel_forward(g: &mut Graph, features: Var, params: &ParamVars, config: &ModelConfig) -> Result<Var> {
    let (h, w, _) = g.value(features).hwc()?;
    let min = config.min_highlevel_extent();
    if h < min || w < min {
        return Err(Error::InvalidInput(format!(
            "image {h}×{w} is below the {min}×{min} minimum for {} high-level stages",
            config.n_hl
        )));
    }
    let mut x = features;
    for &(k, b) in &params.highlevel {
        let y = g.conv2d(x, k, b, 2, Padding::Reflect)?;
        let y = g.relu(y);
        x = g.max_pool2x2(y)?;
    }
    let v = g.global_mean(x)?;
    g.affine(v, params.head_weights, params.head_bias)
}

#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub output: Var,
    pub estimate: Var,
    pub transform: Var,
    /// Tensor fed to the high-level stage.
    pub highlevel_input: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_skip: bool,
    pub no_shared: bool,
}

/// Full two-stage forward pass on a demosaiced RGB input. The output is
/// left unclamped so that it stays differentiable.
pub fn deepisp_forward(g: &mut Graph, rgb: Var, params: &ParamVars, config: &ModelConfig, ablation: Ablation) -> Result<Forward> {
    let (estimate, features) = lowlevel_forward(g, rgb, params, config, ablation.no_skip)?;
    let hl_in = if ablation.no_shared {
        g.pad_channels(estimate, config.feature_channels())?
    } else {
        features
    };
    let transform = highlevel_forward(g, hl_in, params, config)?;
    let output = apply_quadratic_transform(g, estimate, transform)?;
    Ok(Forward {
        output,
        estimate,
        transform,
        highlevel_input: hl_in,
    })
}

/// `(r², rg, rb, r, g², gb, g, b², b, 1)`: the row-major upper triangle of
/// `[r g b 1]ᵀ[r g b 1]`.
#[inline]
pub fn monomials(r: f64, g: f64, b: f64) -> [f64; MONOMIALS] {
    [r * r, r * g, r * b, r, g * g, g * b, g, b * b, b, 1.0]
}

/// Partial derivatives of [`monomials`] with respect to r, g and b.
#[inline]
fn monomial_grads(r: f64, g: f64, b: f64) -> [[f64; MONOMIALS]; 3] {
    [
        [2.0 * r, g, b, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, r, 0.0, 0.0, 2.0 * g, b, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, r, 0.0, 0.0, g, 0.0, 2.0 * b, 1.0, 0.0],
    ]
}

/// A global per-pixel map `rgb ↦ W · monomials(rgb)` with `W ∈ R^{3×10}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorTransform {
    pub w: [[f64; MONOMIALS]; 3],
}

impl ColorTransform {
    pub fn identity() -> Self {
        Self::from_affine(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    }

    /// Embeds a 3×4 affine map (columns r, g, b, 1) with zero second-order
    /// coefficients.
    pub fn from_affine(a: &[[f64; 4]; 3]) -> Self {
        let mut w = [[0.0; MONOMIALS]; 3];
        for (row, arow) in w.iter_mut().zip(a) {
            for (&idx, &v) in AFFINE_INDICES.iter().zip(arow) {
                row[idx] = v;
            }
        }
        Self { w }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != TRANSFORM_LEN {
            return Err(Error::shape("color transform", format!("expected 30 values, got {}", v.len())));
        }
        let mut w = [[0.0; MONOMIALS]; 3];
        for (i, row) in w.iter_mut().enumerate() {
            row.copy_from_slice(&v[i * MONOMIALS..(i + 1) * MONOMIALS]);
        }
        Ok(Self { w })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![TRANSFORM_LEN], self.w.iter().flatten().copied().collect()).expect("30 values")
    }

    pub fn apply_pixel(&self, px: [f64; 3]) -> [f64; 3] {
        let m = monomials(px[0], px[1], px[2]);
        self.w.map(|row| row.iter().zip(&m).map(|(a, b)| a * b).sum())
    }

    /// Inference-time application, clamped to `[0, 1]`.
    pub fn apply(&self, rgb: &Tensor) -> Result<Tensor> {
        let (h, w, c) = rgb.hwc()?;
        if c != 3 {
            return Err(Error::shape("apply transform", format!("expected 3 channels, got {c}")));
        }
        let mut out = Tensor::zeros(&[h, w, 3]);
        for (s, d) in rgb.data().chunks_exact(3).zip(out.data_mut().chunks_exact_mut(3)) {
            let o = self.apply_pixel([s[0], s[1], s[2]]);
            for (dv, ov) in d.iter_mut().zip(o) {
                *dv = ov.clamp(0.0, 1.0);
            }
        }
        Ok(out)
    }
}

struct QuadraticTransform;

impl CustomOp for QuadraticTransform {
    fn name(&self) -> &str {
        "quadratic_transform"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (img, w) = (inputs[0], inputs[1]);
        let (h, wd, c) = img.hwc()?;
        if c != 3 {
            return Err(Error::shape("quadratic_transform", format!("expected 3 channels, got {c}")));
        }
        let t = ColorTransform::from_slice(w.data())?;
        let mut out = Tensor::zeros(&[h, wd, 3]);
        for (s, d) in img.data().chunks_exact(3).zip(out.data_mut().chunks_exact_mut(3)) {
            d.copy_from_slice(&t.apply_pixel([s[0], s[1], s[2]]));
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (img, w) = (inputs[0], inputs[1]);
        let wv = w.data();
        let mut dimg = Tensor::zeros(img.shape());
        let mut dw = vec![0.0; TRANSFORM_LEN];
        for ((s, gp), d) in img
            .data()
            .chunks_exact(3)
            .zip(grad.data().chunks_exact(3))
            .zip(dimg.data_mut().chunks_exact_mut(3))
        {
            let m = monomials(s[0], s[1], s[2]);
            let dm = monomial_grads(s[0], s[1], s[2]);
            for c in 0..3 {
                let row = &wv[c * MONOMIALS..(c + 1) * MONOMIALS];
                for j in 0..MONOMIALS {
                    dw[c * MONOMIALS + j] += gp[c] * m[j];
                }
                for (ch, dmc) in dm.iter().enumerate() {
                    d[ch] += gp[c] * row.iter().zip(dmc).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        vec![dimg, Tensor::new(w.shape().to_vec(), dw).expect("transform shape")]
    }
}

/// Differentiable per-pixel quadratic transform; `transform` holds 30 values.
pub fn apply_quadratic_transform(g: &mut Graph, rgb: Var, transform: Var) -> Result<Var> {
    g.custom(Arc::new(QuadraticTransform), &[rgb, transform])
}

#[derive(Clone, Debug)]
pub struct AffineInit {
    /// Averaged 3×4 affine map, columns r, g, b, 1.
    pub matrix: [[f64; 4]; 3],
    pub transform: ColorTransform,
    /// Set when any per-pair design matrix was rank deficient; the
    /// least-norm solution was used for those pairs.
    pub rank_deficient: bool,
}

/// Least-squares affine colour map per pair, averaged over pairs.
pub fn init_w_affine<'a, I>(pairs: I) -> Result<AffineInit>
where
    I: IntoIterator<Item = (&'a Tensor, &'a Tensor)>,
{
    let mut sum = [[0.0; 4]; 3];
    let mut count = 0usize;
    let mut rank_deficient = false;
    for (input, target) in pairs {
        if input.shape() != target.shape() {
            return Err(Error::shape("init_w_affine", format!("{:?} vs {:?}", input.shape(), target.shape())));
        }
        let (h, w, c) = input.hwc()?;
        if c != 3 {
            return Err(Error::shape("init_w_affine", format!("expected RGB, got {c} channels")));
        }
        let n = h * w;
        if n < 4 {
            return Err(Error::InvalidInput(format!("pair has {n} pixels, need at least 4")));
        }
        let x = DMatrix::from_fn(n, 4, |i, j| if j == 3 { 1.0 } else { input.data()[i * 3 + j] });
        let y = DMatrix::from_fn(n, 3, |i, j| target.data()[i * 3 + j]);
        let svd = SVD::new(x, true, true);
        let smax = svd.singular_values.max();
        let tol = smax * 1e-10;
        if svd.singular_values.iter().any(|&s| s <= tol) {
            rank_deficient = true;
        }
        let beta = svd
            .solve(&y, tol)
            .map_err(|e| Error::InvalidInput(format!("least squares failed: {e}")))?;
        for (i, row) in sum.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += beta[(j, i)];
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput("init_w_affine needs at least one pair".into()));
    }
    if rank_deficient {
        log::warn!("rank-deficient colour regression; used least-norm solution");
    }
    let matrix = sum.map(|row| row.map(|v| v / count as f64));
    Ok(AffineInit {
        transform: ColorTransform::from_affine(&matrix),
        matrix,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_examples() {
        assert_eq!(monomials(0.0, 0.0, 0.0), [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(monomials(1.0, 0.0, 0.0), [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn identity_transform_embedding() {
        let t = ColorTransform::identity();
        for (c, row) in t.w.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let expect = if j == [3, 6, 8][c] { 1.0 } else { 0.0 };
                assert_eq!(v, expect);
            }
        }
        assert_eq!(t.apply_pixel([0.2, 0.5, 0.9]), [0.2, 0.5, 0.9]);
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig { width: 3, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { n_ll: 0, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        assert_eq!(ModelConfig::default().min_highlevel_extent(), 64);
    }

    #[test]
    fn param_layout_invariants() {
        let cfg = ModelConfig { n_ll: 3, n_hl: 2, width: 10, hl_width: 6 };
        let p = ModelParams::zeros(&cfg).unwrap();
        assert_eq!(p.lowlevel[0].kernel.shape(), &[3, 3, 3, 10]);
        assert_eq!(p.lowlevel[1].kernel.shape(), &[3, 3, 10, 10]);
        assert_eq!(p.highlevel[0].kernel.shape(), &[3, 3, 7, 6]);
        assert_eq!(p.head_weights.shape(), &[30, 6]);
        assert_eq!(p.head_bias.len(), 30);
        let mut g = Graph::new();
        let vars = p.register(&mut g);
        assert_eq!(vars.all().len(), p.named_tensors().len());
    }
}
