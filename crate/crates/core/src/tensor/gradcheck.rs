use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Central finite-difference check of a scalar function of several tensors.
///
/// Uses the five-point stencil `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`
/// so that truncation error does not swamp small gradients. A coordinate
/// whose probes change the graph's kink signature crossed a non-smooth
/// point; it is counted in `straddled` and left out of the error.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub h: f64,
    /// Check at most this many coordinates per input (sampled without
    /// replacement); `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            h: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckResult {
    pub max_rel_error: f64,
    pub worst: Option<Worst>,
    pub coords_checked: usize,
    /// Coordinates skipped because a probe crossed a kink.
    pub straddled: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Worst {
    pub input: usize,
    /// Flat index into the input tensor.
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Derivatives smaller than this fraction of the function's scale sit at
/// the level of rounding noise in the probes and are compared absolutely.
const NOISE_FLOOR: f64 = 1e-6;

fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval<F>(f: &F, point: &[Tensor]) -> Result<(f64, Option<u64>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_kink_signature();
    let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if !v.is_scalar() {
        return Err(Error::shape("grad_check", format!("function output has shape {:?}", v.shape())));
    }
    Ok((v.data()[0], g.kink_signature()))
}

impl GradCheck {
    pub fn run<F>(&self, f: F, point: &[Tensor]) -> Result<GradCheckResult>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::with_kink_signature();
        let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let grads = g.backward(out)?;
        let base_sig = g.kink_signature();
        let grad_scale = vars
            .iter()
            .flat_map(|v| grads.wrt(&g, *v).data().to_vec())
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let floor = (NOISE_FLOOR * g.value(out).data()[0].abs().max(grad_scale)).max(1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut worst = None;
        let mut max_err = 0.0f64;
        let mut checked = 0;
        let mut straddled = 0;
        let mut probe: Vec<Tensor> = point.to_vec();
        for (i, var) in vars.iter().enumerate() {
            let analytic = grads.wrt(&g, *var);
            let n = point[i].len();
            let coords: Vec<usize> = match self.max_coords {
                Some(m) if m < n => {
                    let mut c = sample(&mut rng, n, m).into_vec();
                    c.sort_unstable();
                    c
                }
                _ => (0..n).collect(),
            };
            for j in coords {
                let orig = point[i].data()[j];
                let mut vals = [0.0; 4];
                let mut crossed = false;
                for (k, off) in [2.0, 1.0, -1.0, -2.0].into_iter().enumerate() {
                    probe[i].data_mut()[j] = orig + off * self.h;
                    let (v, sig) = eval(&f, &probe)?;
                    vals[k] = v;
                    crossed |= sig != base_sig;
                }
                probe[i].data_mut()[j] = orig;
                checked += 1;
                if crossed {
                    straddled += 1;
                    continue;
                }
                let numeric = (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * self.h);
                let err = rel_error(analytic.data()[j], numeric, floor);
                if err > max_err || worst.is_none() {
                    max_err = max_err.max(err);
                    worst = Some(Worst {
                        input: i,
                        coord: j,
                        analytic: analytic.data()[j],
                        numeric,
                    });
                }
            }
        }
        Ok(GradCheckResult {
            max_rel_error: max_err,
            worst,
            coords_checked: checked,
            straddled,
        })
    }
}

/// Maximum relative error between the analytic gradient of `f` at `point`
/// and central finite differences with step `h`, over every coordinate that
/// does not straddle a kink.
///
/// The error of one coordinate is `|a − n| / max(|a|, |n|, s)` where
/// `s = 1e-6 · max(|f|, max|∇f|)`.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let check = GradCheck {
        h,
        ..GradCheck::default()
    };
    Ok(check.run(f, point)?.max_rel_error)
}
