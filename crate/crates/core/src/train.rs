//! Training loop, validation and inference helpers.

use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::color::bilinear_demosaic;
use crate::config::{DataKind, Task, TrainConfig};
use crate::data::{load_pair_dir, sample_crop, synth_dataset, Augment, Dataset, ImagePair, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, l2_loss, ms_ssim_rgb};
use crate::metrics::{psnr, Space};
use crate::model::{deepisp_forward, init_params, init_w_affine, lowlevel_forward, Ablation, ModelParams, ParamVars};
use crate::optim::{adam_step, AdamState};
use crate::rng::{derive_seed, rng_for};
use crate::tensor::{Graph, Tensor, Var};

const SHUFFLE_TAG: u64 = 0x5F1E;

#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Materializes the datasets described by `cfg.data`.
pub fn load_data(cfg: &TrainConfig) -> Result<TrainData> {
    let d = &cfg.data;
    match d.kind {
        DataKind::Synth => {
            let with = |count| SynthSpec { count, ..d.synth.clone() };
            Ok(TrainData {
                train: synth_dataset(&d.synth, cfg.seed, Split::Train)?,
                val: synth_dataset(&with(d.val_count), cfg.seed, Split::Val)?,
                test: synth_dataset(&with(d.test_count), cfg.seed, Split::Test)?,
            })
        }
        DataKind::Dir => {
            let path = d.path.as_ref().ok_or_else(|| Error::Config("data.path is required".into()))?;
            let all = load_pair_dir(path, d.layout, d.pattern)?;
            match &d.val_path {
                Some(vp) => {
                    let mut val = load_pair_dir(vp, d.layout, d.pattern)?;
                    val.split = Split::Val;
                    Ok(TrainData { train: all, val, test: Dataset::default() })
                }
                None => {
                    let (train, val, test) = all.split_by_fraction(d.val_fraction, 0.0);
                    Ok(TrainData { train, val, test })
                }
            }
        }
    }
}

/// Demosaiced network input for a pair.
pub fn network_input(pair: &ImagePair) -> Tensor {
    bilinear_demosaic(&pair.input)
}

/// Builds the task's forward pass and loss. Returns `(loss, prediction)`;
/// the prediction is unclamped.
pub fn forward_loss(
    g: &mut Graph,
    vars: &ParamVars,
    cfg: &TrainConfig,
    input: &Tensor,
    target: &Tensor,
) -> Result<(Var, Var)> {
    let x = g.constant(input.clone());
    let t = g.constant(target.clone());
    match cfg.task {
        Task::DenoiseDemosaic => {
            let (estimate, _) = lowlevel_forward(g, x, vars, &cfg.model, cfg.ablation.no_skip)?;
            Ok((l2_loss(g, estimate, t)?, estimate))
        }
        Task::FullIsp | Task::MimicIsp => {
            let out = deepisp_forward(g, x, vars, &cfg.model, cfg.ablation)?;
            Ok((combined_loss(g, out.output, t, &cfg.loss)?, out.output))
        }
    }
}

/// Inference on a demosaiced image, clamped to `[0, 1]`.
pub fn predict(params: &ModelParams, task: Task, ablation: Ablation, rgb: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let x = g.constant(rgb.clone());
    let out = if task.uses_highlevel() {
        deepisp_forward(&mut g, x, &vars, &params.config, ablation)?.output
    } else {
        lowlevel_forward(&mut g, x, &vars, &params.config, ablation.no_skip)?.0
    };
    Ok(g.value(out).clamp01())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: u64,
    pub train_loss: f64,
    pub val: Option<ValMetrics>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValMetrics {
    pub loss: f64,
    pub psnr: f64,
    pub msssim: f64,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,val_psnr,val_msssim";

impl LogRow {
    /// Values use Rust's shortest round-trip formatting, so identical runs
    /// produce identical bytes.
    pub fn to_csv(&self) -> String {
        match &self.val {
            Some(v) => format!("{},{},{},{},{}", self.epoch, self.train_loss, v.loss, v.psnr, v.msssim),
            None => format!("{},{},,,", self.epoch, self.train_loss),
        }
    }
}

/// Mean loss, linear PSNR and luminance MS-SSIM over `ds`.
pub fn validate(params: &ModelParams, cfg: &TrainConfig, ds: &Dataset) -> Result<Option<ValMetrics>> {
    if ds.is_empty() {
        return Ok(None);
    }
    let (mut loss, mut p, mut m) = (0.0, 0.0, 0.0);
    for pair in &ds.pairs {
        let input = network_input(pair);
        let mut g = Graph::new();
        let vars = params.register(&mut g);
        let (l, pred) = forward_loss(&mut g, &vars, cfg, &input, &pair.target)?;
        let out = g.value(pred).clamp01();
        loss += g.value(l).data()[0];
        p += psnr(&out, &pair.target, Space::Linear)?;
        m += ms_ssim_rgb(&out, &pair.target, &cfg.loss)?;
    }
    let n = ds.len() as f64;
    Ok(Some(ValMetrics {
        loss: loss / n,
        psnr: p / n,
        msssim: m / n,
    }))
}

/// Initial parameters for `cfg`: fan-in scaled kernels and, for the
/// two-stage tasks, the head bias set to the averaged affine fit.
pub fn initial_params(cfg: &TrainConfig, data: &TrainData) -> Result<ModelParams> {
    let seed = derive_seed(&[cfg.seed, 0x1417]);
    if !cfg.task.uses_highlevel() || data.train.is_empty() {
        return init_params(seed, &cfg.model, None);
    }
    let inputs: Vec<Tensor> = data.train.pairs.iter().map(network_input).collect();
    let fit = init_w_affine(inputs.iter().zip(data.train.pairs.iter().map(|p| &p.target)))?;
    init_params(seed, &cfg.model, Some(&fit.transform))
}

pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub data: &'a TrainData,
    pub params: ModelParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: u64,
    names: Vec<String>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a TrainData) -> Result<Self> {
        cfg.validate()?;
        let params = initial_params(&cfg, data)?;
        Ok(Self::with_params(cfg, data, params, None, 0))
    }

    pub fn with_params(cfg: TrainConfig, data: &'a TrainData, params: ModelParams, adam: Option<AdamState>, epoch: u64) -> Self {
        let names = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let adam = adam.unwrap_or_else(|| AdamState::new(params.named_tensors().into_iter().map(|(_, t)| t)));
        Self {
            cfg,
            data,
            params,
            adam,
            epoch,
            names,
        }
    }

    /// Continues from `ck`, which must come from a run with the same task,
    /// seed, model, loss, optimizer, ablation and data settings.
    pub fn resume(cfg: TrainConfig, data: &'a TrainData, ck: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let saved = TrainConfig::from_toml(&ck.config)?;
        let comparable = |c: &TrainConfig| {
            let mut c = c.clone();
            c.epochs = 0;
            c.checkpoint_every = 0;
            c.output = Default::default();
            c
        };
        if comparable(&saved) != comparable(&cfg) {
            return Err(Error::Checkpoint(
                "checkpoint was written by a different configuration (only epochs, checkpoint_every and output may change)".into(),
            ));
        }
        if ck.params.config != cfg.model {
            return Err(Error::Checkpoint("checkpoint model shape differs from config".into()));
        }
        Ok(Self::with_params(cfg, data, ck.params, ck.adam, ck.epoch))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
            epoch: self.epoch,
            task: self.cfg.task.to_string(),
            config: self.cfg.to_toml(),
        }
    }

    fn crop_size(&self, pair: &ImagePair) -> (usize, usize) {
        match self.cfg.patch {
            0 => (pair.height(), pair.width()),
            p => (p, p),
        }
    }

    /// One optimizer step on a single example; returns the loss before the
    /// update.
    pub fn step(&mut self, pair: &ImagePair, step: u64) -> Result<f64> {
        let input = network_input(pair);
        let mut g = Graph::new();
        let vars = self.params.register(&mut g);
        let (loss, _) = forward_loss(&mut g, &vars, &self.cfg, &input, &pair.target)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: self.epoch + 1, step });
        }
        let grads = g.backward(loss)?;
        let grads: Vec<Tensor> = vars.all().into_iter().map(|v| grads.wrt(&g, v)).collect();
        let mut tensors = self.params.tensors_mut();
        adam_step(&mut tensors, &grads, &self.names, &mut self.adam, &self.cfg.adam)?;
        Ok(value)
    }

    /// Runs one epoch: one step per training image, in an order drawn from
    /// `(seed, epoch)`, each on a crop drawn from `(seed, epoch, image)`.
    pub fn run_epoch(&mut self) -> Result<LogRow> {
        let n = self.data.train.len();
        if n == 0 {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        let e = self.epoch;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(&[self.cfg.seed, e, SHUFFLE_TAG]));
        let mut total = 0.0;
        for (step, &i) in order.iter().enumerate() {
            let pair = &self.data.train.pairs[i];
            let (ph, pw) = self.crop_size(pair);
            let seed = derive_seed(&[self.cfg.seed, e, i as u64]);
            let augment = self.cfg.augment;
            let patch = if (ph, pw) == (pair.height(), pair.width()) && augment == Augment::None {
                pair.clone()
            } else {
                sample_crop(pair, ph, pw, seed, augment)?
            };
            total += self.step(&patch, step as u64)?;
        }
        self.epoch += 1;
        let val = if self.cfg.val_every > 0 && self.epoch.is_multiple_of(self.cfg.val_every) {
            validate(&self.params, &self.cfg, &self.data.val)?
        } else {
            None
        };
        Ok(LogRow {
            epoch: self.epoch,
            train_loss: total / n as f64,
            val,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(task: Task) -> TrainConfig {
        let mut cfg = TrainConfig::for_task(task);
        cfg.model.n_ll = 2;
        cfg.model.width = 6;
        cfg.model.n_hl = if task.uses_highlevel() { 1 } else { 0 };
        cfg.model.hl_width = 4;
        cfg.patch = 16;
        cfg.adam.lr = 1e-3;
        cfg.data.synth.count = 3;
        cfg.data.synth.height = 32;
        cfg.data.synth.width = 32;
        cfg.data.val_count = 1;
        cfg.data.test_count = 0;
        cfg
    }

    #[test]
    fn epochs_are_deterministic() {
        for task in [Task::DenoiseDemosaic, Task::FullIsp] {
            let cfg = tiny(task);
            let data = load_data(&cfg).unwrap();
            let mut a = Trainer::new(cfg.clone(), &data).unwrap();
            let mut b = Trainer::new(cfg, &data).unwrap();
            for _ in 0..2 {
                assert_eq!(a.run_epoch().unwrap(), b.run_epoch().unwrap());
            }
            assert_eq!(a.params, b.params);
            assert_eq!(a.adam.t, 6);
        }
    }

    #[test]
    fn log_row_format() {
        let row = LogRow { epoch: 3, train_loss: 0.5, val: None };
        assert_eq!(row.to_csv(), "3,0.5,,,");
        let row = LogRow {
            epoch: 3,
            train_loss: 0.5,
            val: Some(ValMetrics { loss: 0.25, psnr: 30.0, msssim: 0.9 }),
        };
        assert_eq!(row.to_csv(), "3,0.5,0.25,30,0.9");
    }
}
