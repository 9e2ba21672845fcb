//! Command-line front end: synthesis, training, inference, evaluation,
//! gradient checks, sweeps and ablations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use deepisp::color::BayerPattern;
use deepisp::commands::{
    cmd_ablate, cmd_eval, cmd_infer, cmd_synth, cmd_sweep, cmd_train, AblationMode, EvalOptions, InferOptions, SweepAxis,
};
use deepisp::config::TrainConfig;
use deepisp::data::{load_pair_dir, Augment, Layout, Split, SynthSpec};
use deepisp::train::load_data;
use deepisp::verify::{cmd_gradcheck, GradcheckOptions};

#[derive(Parser)]
#[command(name = "deepisp", version, about = "Learned camera pipeline: train, run and evaluate")]
struct Cli {
    /// Root for default output locations.
    #[arg(long, global = true, env = "DEEPISP_OUT", default_value = "runs")]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic raw/target pairs in flat layout.
    Synth(SynthArgs),
    /// Train a model; writes config.toml, train_log.csv and checkpoint.ckpt.
    Train(TrainArgs),
    /// Run a checkpoint on raw mosaics.
    Infer(InferArgs),
    /// Score a checkpoint and/or the bilinear baseline on a dataset.
    Eval(EvalArgs),
    /// Finite-difference check of every op and the end-to-end loss.
    Gradcheck(GradcheckArgs),
    /// Train across depths or widths.
    Sweep(SweepArgs),
    /// Train with and without an architectural component.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Noise std range in 8-bit units.
    #[arg(long, default_value_t = 1.0)]
    sigma_min: f64,
    #[arg(long, default_value_t = 10.0)]
    sigma_max: f64,
    #[arg(long, default_value_t = 1.0)]
    exposure: f64,
    #[arg(long, default_value = "rggb")]
    pattern: BayerPattern,
    /// Strength of the random per-channel colour cast on inputs.
    #[arg(long, default_value_t = 0.0)]
    cast: f64,
    /// Render targets through the tone curve.
    #[arg(long)]
    tone: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "train", value_parser = parse_split)]
    split: Split,
    /// Output directory (default: <root>/synth/<split>).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Config file plus per-field overrides; flags win over the file.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML config; unspecified keys take the task's defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    /// Square patch side, 0 for whole images.
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long, value_parser = parse_augment)]
    augment: Option<Augment>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    val_every: Option<u64>,
    #[arg(long)]
    n_ll: Option<usize>,
    #[arg(long)]
    n_hl: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    hl_width: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    no_skip: bool,
    #[arg(long)]
    no_shared: bool,
    /// Training data directory (switches `data.kind` to `dir`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long)]
    layout: Option<Layout>,
    #[arg(long)]
    pattern: Option<BayerPattern>,
    /// Any other field as `dotted.key=value`, e.g. `data.synth.count=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, root: &Path) -> Result<TrainConfig> {
        let mut table = match &self.config {
            Some(path) => std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?
                .parse::<toml::Table>()
                .with_context(|| format!("parsing {}", path.display()))?,
            None => toml::Table::new(),
        };
        let mut put = |key: &str, v: toml::Value| TrainConfig::set_value(&mut table, key, v);
        let int = |v: u64| toml::Value::Integer(v as i64);
        let string = |s: String| toml::Value::String(s);
        if let Some(t) = &self.task {
            put("task", string(t.clone()))?;
        }
        for (key, v) in [("seed", self.seed), ("epochs", self.epochs), ("checkpoint_every", self.checkpoint_every), ("val_every", self.val_every)] {
            if let Some(v) = v {
                put(key, int(v))?;
            }
        }
        for (key, v) in [
            ("patch", self.patch),
            ("model.n_ll", self.n_ll),
            ("model.n_hl", self.n_hl),
            ("model.width", self.width),
            ("model.hl_width", self.hl_width),
        ] {
            if let Some(v) = v {
                put(key, int(v as u64))?;
            }
        }
        if let Some(a) = self.augment {
            put("augment", toml::Value::try_from(a)?)?;
        }
        if let Some(lr) = self.lr {
            put("adam.lr", toml::Value::Float(lr))?;
        }
        if let Some(alpha) = self.alpha {
            put("loss.alpha", toml::Value::Float(alpha))?;
        }
        if self.no_skip {
            put("ablation.no_skip", toml::Value::Boolean(true))?;
        }
        if self.no_shared {
            put("ablation.no_shared", toml::Value::Boolean(true))?;
        }
        if let Some(d) = &self.data {
            put("data.kind", string("dir".into()))?;
            put("data.path", string(d.display().to_string()))?;
        }
        if let Some(d) = &self.val_data {
            put("data.val_path", string(d.display().to_string()))?;
        }
        if let Some(l) = self.layout {
            put("data.layout", string(l.to_string()))?;
        }
        if let Some(p) = self.pattern {
            put("data.pattern", string(p.to_string()))?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            TrainConfig::set_override(&mut table, k.trim(), v.trim())?;
        }
        if !table.contains_key("task") {
            bail!("no task given: pass --task or a --config file that sets `task`");
        }
        let mut cfg = TrainConfig::from_table(table)?;
        cfg.output = root.join(&cfg.output);
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory (default: <root>/<config output>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A raw mosaic image or a directory of them.
    #[arg(long)]
    input: PathBuf,
    /// Output directory (default: <root>/infer).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Apply the 5%/95% luminance stretch before writing.
    #[arg(long)]
    stretch: bool,
    #[arg(long, default_value = "rggb")]
    pattern: BayerPattern,
}

#[derive(Args)]
struct EvalArgs {
    /// Model to score; omit to score only the baseline.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of pairs; otherwise the test split of the given config.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, default_value = "flat")]
    pairs_layout: Layout,
    #[arg(long, default_value = "rggb")]
    pairs_pattern: BayerPattern,
    #[command(flatten)]
    config: ConfigArgs,
    /// Also score bilinear demosaicing alone.
    #[arg(long)]
    baseline: bool,
    /// CSV report path (default: <root>/eval.csv).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    h: f64,
    /// Swap in a tanh with a wrong derivative (the check must then fail).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated values (default: 1,2,4,8 for depth, 4,16,64 for width).
    #[arg(long, value_delimiter = ',')]
    values: Vec<usize>,
    /// Output directory (default: <root>/sweep_<axis>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    mode: AblationMode,
    /// Comma-separated seeds; each gets its own pair of runs.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output directory (default: <root>/ablate_<mode>).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split `{other}` (train, val, test)")),
    }
}

fn parse_augment(s: &str) -> std::result::Result<Augment, String> {
    match s {
        "none" => Ok(Augment::None),
        "horizontal" => Ok(Augment::Horizontal),
        "horizontal_vertical" => Ok(Augment::HorizontalVertical),
        other => Err(format!("unknown augmentation `{other}` (none, horizontal, horizontal_vertical)")),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let root = cli.out_root;
    match cli.command {
        Command::Synth(a) => {
            let spec = SynthSpec {
                count: a.count,
                height: a.height,
                width: a.width,
                sigma_min: a.sigma_min,
                sigma_max: a.sigma_max,
                exposure: a.exposure,
                pattern: a.pattern,
                cast: a.cast,
                tone: a.tone,
            };
            let split_name = toml::Value::try_from(a.split)?.as_str().unwrap_or("train").to_string();
            let out = a.out.unwrap_or_else(|| root.join("synth").join(split_name));
            let ds = cmd_synth(&spec, a.seed, a.split, &out)?;
            println!("wrote {} pairs to {}", ds.len(), out.display());
        }
        Command::Train(a) => {
            let cfg = a.config.resolve(&root)?;
            let out = a.out.unwrap_or_else(|| cfg.output.clone());
            let outcome = cmd_train(&cfg, &out, a.resume)?;
            println!("trained to epoch {} in {}", outcome.epoch, out.display());
            if let Some(l) = outcome.final_train_loss() {
                println!("final training loss {l:.6}");
            }
            if let Some(v) = outcome.final_val() {
                println!("validation: loss {:.6}  PSNR {:.2} dB  MS-SSIM {:.4}", v.loss, v.psnr, v.msssim);
            }
        }
        Command::Infer(a) => {
            let out = a.out.unwrap_or_else(|| root.join("infer"));
            let opts = InferOptions {
                stretch: a.stretch,
                pattern: a.pattern,
            };
            let written = cmd_infer(&a.checkpoint, &a.input, &out, opts)?;
            if written.is_empty() {
                log::warn!("no images found in {}", a.input.display());
            }
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Eval(a) => {
            let (data, loss) = match &a.pairs {
                Some(dir) => (load_pair_dir(dir, a.pairs_layout, a.pairs_pattern)?, Default::default()),
                None => {
                    let cfg = a.config.resolve(&root)?;
                    (load_data(&cfg)?.test, cfg.loss)
                }
            };
            if data.is_empty() {
                bail!("no evaluation pairs");
            }
            if a.checkpoint.is_none() && !a.baseline {
                bail!("nothing to evaluate: pass --checkpoint and/or --baseline");
            }
            let report = cmd_eval(a.checkpoint.as_deref(), &data, &EvalOptions { baseline: a.baseline, loss })?;
            let csv = a.csv.unwrap_or_else(|| root.join("eval.csv"));
            if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            report.save_csv(&csv)?;
            print!("{report}");
            println!("wrote {}", csv.display());
        }
        Command::Gradcheck(a) => {
            let start = std::time::Instant::now();
            let report = cmd_gradcheck(&GradcheckOptions {
                points: a.points,
                seed: a.seed,
                h: a.h,
                corrupt_tanh: a.inject_fault,
            })?;
            println!("{report}");
            println!("{:.1} s", start.elapsed().as_secs_f64());
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Sweep(a) => {
            let cfg = a.config.resolve(&root)?;
            let values = if a.values.is_empty() {
                match a.axis {
                    SweepAxis::Depth => vec![1, 2, 4, 8],
                    SweepAxis::Width => vec![4, 16, 64],
                }
            } else {
                a.values
            };
            let out = a.out.unwrap_or_else(|| root.join(format!("sweep_{}", a.axis)));
            let rows = cmd_sweep(&cfg, a.axis, &values, &out)?;
            println!("{:>6}  {:>9}  {:>8}  {:>10}", a.axis, "PSNR dB", "MS-SSIM", "train loss");
            for r in rows {
                println!("{:>6}  {:>9.3}  {:>8.4}  {:>10.6}", r.value, r.val_psnr, r.val_msssim, r.final_train_loss);
            }
        }
        Command::Ablate(a) => {
            let cfg = a.config.resolve(&root)?;
            let out = a.out.unwrap_or_else(|| root.join(format!("ablate_{}", a.mode)));
            let seeds = if a.seeds.is_empty() { vec![cfg.seed] } else { a.seeds };
            let mut ratios = Vec::new();
            let mut val_gaps = Vec::new();
            for &seed in &seeds {
                let mut c = cfg.clone();
                c.seed = seed;
                let dir = if seeds.len() == 1 { out.clone() } else { out.join(format!("seed_{seed}")) };
                let s = cmd_ablate(&c, a.mode, &dir)?;
                print!("{}", s.to_text());
                ratios.push(s.loss_ratio());
                if let (Some(b), Some(x)) = (s.baseline.val, s.ablated.val) {
                    val_gaps.push(x.loss - b.loss);
                }
            }
            if seeds.len() > 1 {
                println!("median final-loss ratio over {} seeds: {:.4}", seeds.len(), median(ratios));
                if !val_gaps.is_empty() {
                    println!("median validation-loss gap (ablated - baseline): {:.6}", median(val_gaps));
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
