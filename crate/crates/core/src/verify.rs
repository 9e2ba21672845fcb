//! Finite-difference verification of every differentiable operation and of
//! the end-to-end training loss.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::color::{luminance, rgb_to_lab};
use crate::error::Result;
use crate::losses::{combined_loss, l2_loss, ms_ssim, ssim_map, LossConfig};
use crate::model::{apply_quadratic_transform, deepisp_forward, init_params, Ablation, ModelConfig, ParamVars};
use crate::rng::rng_for;
use crate::tensor::{CustomOp, GradCheck, Graph, Padding, Tensor, Var, Worst};

/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

type LossFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;
type PointFn = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;

struct Case {
    name: &'static str,
    loss: LossFn,
    point: PointFn,
    /// Coordinates sampled per input tensor; `None` checks all.
    max_coords: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckItem {
    pub name: String,
    pub points: usize,
    pub max_rel_error: f64,
    /// Points where some coordinate still crossed a kink after every redraw;
    /// those coordinates are not part of `max_rel_error`.
    pub rough_points: usize,
    /// Worst coordinate seen, for diagnosing failures.
    pub worst: Option<Worst>,
}

impl CheckItem {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub items: Vec<CheckItem>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(CheckItem::passed)
    }

    pub fn failures(&self) -> Vec<&CheckItem> {
        self.items.iter().filter(|i| !i.passed()).collect()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.items {
            writeln!(
                f,
                "{:<24} {:>4} points  max rel error {:.3e}  {}{}",
                i.name,
                i.points,
                i.max_rel_error,
                if i.passed() { "ok" } else { "FAIL" },
                if i.rough_points > 0 { format!("  ({} points kept a kink crossing)", i.rough_points) } else { String::new() }
            )?;
            if let (false, Some(w)) = (i.passed(), i.worst) {
                writeln!(
                    f,
                    "    worst: input {} coord {}  analytic {:.6e}  numeric {:.6e}",
                    w.input, w.coord, w.analytic, w.numeric
                )?;
            }
        }
        let failed = self.failures().len();
        write!(f, "{} checks, {} failed", self.items.len(), failed)
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub points: usize,
    pub seed: u64,
    pub h: f64,
    /// Replace tanh with a version whose derivative is wrong.
    pub corrupt_tanh: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            points: 100,
            seed: 0,
            h: 1e-4,
            corrupt_tanh: false,
        }
    }
}

/// tanh with a derivative off by 10%, for exercising the checker.
struct CorruptTanh;

impl CustomOp for CorruptTanh {
    fn name(&self) -> &str {
        "tanh"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].map(f64::tanh))
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        vec![output.zip_map(grad, |y, g| 1.1 * (1.0 - y * y) * g).expect("same shape")]
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// `sum(x ⊙ w)` for a fixed pseudo-random `w`, so that every output element
/// contributes with a different weight.
fn weighted_sum(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let w = Tensor::from_fn(&shape, |i| ((i as f64 + 1.0) * 0.618_034).fract() - 0.4);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn cases(corrupt_tanh: bool) -> Vec<Case> {
    let mut v: Vec<Case> = Vec::new();
    v.push(Case {
        name: "conv2d_reflect",
        loss: Box::new(|g, x| {
            let y = g.conv2d(x[0], x[1], x[2], 1, Padding::Reflect)?;
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[5, 5, 2], -1.0, 1.0), uniform(r, &[3, 3, 2, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "conv2d_stride2",
        loss: Box::new(|g, x| {
            let y = g.conv2d(x[0], x[1], x[2], 2, Padding::None)?;
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[7, 7, 2], -1.0, 1.0), uniform(r, &[3, 3, 2, 2], -1.0, 1.0), uniform(r, &[2], -1.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "relu",
        loss: Box::new(|g, x| {
            let y = g.relu(x[0]);
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[4, 4, 2], -1.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "tanh",
        loss: Box::new(move |g, x| {
            let y = if corrupt_tanh {
                g.custom(Arc::new(CorruptTanh), &[x[0]])?
            } else {
                g.tanh(x[0])
            };
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[4, 4, 2], -2.0, 2.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "abs",
        loss: Box::new(|g, x| {
            let y = g.abs(x[0]);
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[4, 4, 2], -1.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "max_pool2x2",
        loss: Box::new(|g, x| {
            let y = g.max_pool2x2(x[0])?;
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[5, 6, 2], -1.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "global_mean",
        loss: Box::new(|g, x| {
            let y = g.global_mean(x[0])?;
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[4, 3, 3], -1.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "avg_pool2x2",
        loss: Box::new(|g, x| {
            let y = g.avg_pool2x2(x[0])?;
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[6, 4, 2], -1.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "affine",
        loss: Box::new(|g, x| {
            let y = g.affine(x[0], x[1], x[2])?;
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[6], -1.0, 1.0), uniform(r, &[4, 6], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "elementwise",
        loss: Box::new(|g, x| {
            let a = g.mul(x[0], x[1])?;
            let b = g.div(a, x[2])?;
            let c = g.sub(b, x[0])?;
            let d = g.add(c, x[1])?;
            let e = g.scale(d, 0.7);
            let e = g.add_scalar(e, 0.2);
            let m = g.mean(e);
            let s = weighted_sum(g, e)?;
            g.add(s, m)
        }),
        point: Box::new(|r| vec![uniform(r, &[3, 3, 2], -1.0, 1.0), uniform(r, &[3, 3, 2], -1.0, 1.0), uniform(r, &[3, 3, 2], 0.5, 1.5)]),
        max_coords: None,
    });
    v.push(Case {
        name: "channel_ops",
        loss: Box::new(|g, x| {
            let a = g.slice_channels(x[0], 1, 2)?;
            let b = g.concat_channels(&[a, x[1]])?;
            let c = g.pad_channels(b, 5)?;
            let d = g.reshape(c, &[3, 6, 5])?;
            weighted_sum(g, d)
        }),
        point: Box::new(|r| vec![uniform(r, &[3, 6, 4], -1.0, 1.0), uniform(r, &[3, 6, 1], -1.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "box_filter",
        loss: Box::new(|g, x| {
            let y = g.box_filter(x[0], 5)?;
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[6, 7, 1], 0.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "rgb_to_lab",
        loss: Box::new(|g, x| {
            let y = rgb_to_lab(g, x[0])?;
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[3, 3, 3], 0.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "luminance",
        loss: Box::new(|g, x| {
            let y = luminance(g, x[0])?;
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[3, 3, 3], -50.0, 100.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "quadratic_transform",
        loss: Box::new(|g, x| {
            let y = apply_quadratic_transform(g, x[0], x[1])?;
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[4, 4, 3], 0.0, 1.0), uniform(r, &[30], -1.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "ssim_map",
        loss: Box::new(|g, x| {
            let y = ssim_map(g, x[0], x[1], 5, 1e-4, 9e-4)?;
            weighted_sum(g, y)
        }),
        point: Box::new(|r| vec![uniform(r, &[6, 6, 1], 0.0, 1.0), uniform(r, &[6, 6, 1], 0.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "ms_ssim",
        loss: Box::new(|g, x| ms_ssim(g, x[0], x[1], &LossConfig::default())),
        point: Box::new(|r| vec![uniform(r, &[10, 12, 1], 0.0, 1.0), uniform(r, &[10, 12, 1], 0.0, 1.0)]),
        max_coords: Some(40),
    });
    v.push(Case {
        name: "l2_loss",
        loss: Box::new(|g, x| l2_loss(g, x[0], x[1])),
        point: Box::new(|r| vec![uniform(r, &[4, 4, 3], 0.0, 1.0), uniform(r, &[4, 4, 3], 0.0, 1.0)]),
        max_coords: None,
    });
    v.push(Case {
        name: "combined_loss",
        loss: Box::new(|g, x| {
            let t = g.constant(Tensor::from_fn(&[10, 10, 3], |i| ((i as f64 + 0.5) * 0.381_966).fract()));
            combined_loss(g, x[0], t, &LossConfig::default())
        }),
        point: Box::new(|r| vec![uniform(r, &[10, 10, 3], 0.0, 1.0)]),
        max_coords: Some(60),
    });
    v.push(Case {
        name: "deepisp_end_to_end",
        loss: Box::new(e2e_loss),
        point: Box::new(e2e_point),
        max_coords: Some(4),
    });
    v
}

const E2E: ModelConfig = ModelConfig {
    n_ll: 2,
    n_hl: 1,
    width: 6,
    hl_width: 4,
};

fn e2e_images() -> (Tensor, Tensor) {
    let input = Tensor::image(16, 16, 3, |y, x, c| 0.1 + 0.8 * (((y * 16 + x) * 3 + c) as f64 * 0.754_877).fract());
    let target = Tensor::image(16, 16, 3, |y, x, c| 0.1 + 0.8 * (((y * 16 + x) * 3 + c) as f64 * 0.569_840).fract());
    (input, target)
}

/// `combined_loss(deepisp_forward(input), target)` as a function of every
/// model parameter.
fn e2e_loss(g: &mut Graph, x: &[Var]) -> Result<Var> {
    let (input, target) = e2e_images();
    let mut it = x.iter().copied();
    let mut next = || it.next().expect("parameter count");
    let vars = ParamVars {
        lowlevel: (0..E2E.n_ll).map(|_| (next(), next())).collect(),
        highlevel: (0..E2E.n_hl).map(|_| (next(), next())).collect(),
        head_weights: next(),
        head_bias: next(),
    };
    let i = g.constant(input);
    let t = g.constant(target);
    let out = deepisp_forward(g, i, &vars, &E2E, Ablation::default())?;
    combined_loss(g, out.output, t, &LossConfig::default())
}

fn e2e_point(r: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut p = init_params(r.random(), &E2E, None).expect("valid config");
    for l in p.lowlevel.iter_mut().chain(p.highlevel.iter_mut()) {
        for b in l.bias.data_mut() {
            *b = r.random_range(-0.1..0.1);
        }
    }
    // small residuals keep the estimate inside the Lab clamp range
    for l in &mut p.lowlevel {
        for v in l.kernel.data_mut() {
            *v *= 0.3;
        }
    }
    for v in p.head_weights.data_mut() {
        *v = r.random_range(-0.05..0.05);
    }
    p.named_tensors().into_iter().map(|(_, t)| t.clone()).collect()
}

const MAX_REDRAWS: usize = 20;

/// Runs the whole suite. Each case is checked at `opts.points` random
/// points drawn from a seeded stream. A point where some probed coordinate
/// crosses a kink is replaced by a fresh draw.
pub fn cmd_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut report = GradcheckReport::default();
    for (ci, case) in cases(opts.corrupt_tanh).into_iter().enumerate() {
        let mut rng = rng_for(&[opts.seed, ci as u64, 0x6C4E]);
        let mut max_err = 0.0f64;
        let mut rough = 0;
        let mut worst = None;
        for _ in 0..opts.points {
            let mut res = None;
            for _ in 0..=MAX_REDRAWS {
                let point = (case.point)(&mut rng);
                let check = GradCheck {
                    h: opts.h,
                    max_coords: case.max_coords,
                    seed: rng.random(),
                };
                let r = check.run(&case.loss, &point)?;
                let done = r.straddled == 0;
                res = Some(r);
                if done {
                    break;
                }
            }
            let res = res.expect("at least one draw");
            if res.straddled > 0 {
                rough += 1;
            }
            if res.max_rel_error > max_err || worst.is_none() {
                max_err = max_err.max(res.max_rel_error);
                worst = res.worst;
            }
        }
        report.items.push(CheckItem {
            name: case.name.to_string(),
            points: opts.points,
            max_rel_error: max_err,
            rough_points: rough,
            worst,
        });
    }
    Ok(report)
}
