//! im2col convolution kernels backed by a blocked GEMM.

use super::Tensor;

/// Mirror index into `[0, n)` without repeating the border sample.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    // a single reflection suffices whenever the pad is smaller than n
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    debug_assert!((0..n).contains(&i));
    i as usize
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn hp(&self) -> usize {
        self.h + 2 * self.pad
    }

    pub fn wp(&self) -> usize {
        self.w + 2 * self.pad
    }

    /// Length of one im2col row.
    pub fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }

    pub fn pixels(&self) -> usize {
        self.ho * self.wo
    }
}

fn pad_reflect(input: &Tensor, g: &ConvGeom) -> Vec<f64> {
    if g.pad == 0 {
        return input.data().to_vec();
    }
    let (hp, wp, c) = (g.hp(), g.wp(), g.cin);
    let src = input.data();
    let mut out = vec![0.0; hp * wp * c];
    for py in 0..hp {
        let sy = reflect(py as isize - g.pad as isize, g.h);
        for px in 0..wp {
            let sx = reflect(px as isize - g.pad as isize, g.w);
            let s = (sy * g.w + sx) * c;
            let d = (py * wp + px) * c;
            out[d..d + c].copy_from_slice(&src[s..s + c]);
        }
    }
    out
}

fn im2col(padded: &[f64], g: &ConvGeom) -> Vec<f64> {
    let row = g.patch();
    let span = g.k * g.cin;
    let wp = g.wp();
    let mut cols = vec![0.0; g.pixels() * row];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let dst = &mut cols[(oy * g.wo + ox) * row..][..row];
            for ky in 0..g.k {
                let s = ((oy * g.stride + ky) * wp + ox * g.stride) * g.cin;
                dst[ky * span..(ky + 1) * span].copy_from_slice(&padded[s..s + span]);
            }
        }
    }
    cols
}

/// `c[m×n] += a[m×k] · b[k×n]` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    beta: f64,
) {
    // SAFETY: the slices cover the addressed ranges; callers pass strides
    // matching dense row-major (or transposed) views of these buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn conv_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor, g: &ConvGeom) -> Tensor {
    let padded = pad_reflect(input, g);
    let cols = im2col(&padded, g);
    let (p, kk, co) = (g.pixels(), g.patch(), g.cout);
    let mut out = Vec::with_capacity(p * co);
    for _ in 0..p {
        out.extend_from_slice(bias.data());
    }
    gemm(p, kk, co, &cols, kk as isize, 1, kernel.data(), co as isize, 1, &mut out, 1.0);
    Tensor {
        shape: vec![g.ho, g.wo, co],
        data: out,
    }
}

pub(crate) struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub(crate) fn conv_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    g: &ConvGeom,
    need_input: bool,
) -> ConvGrads {
    let padded = pad_reflect(input, g);
    let cols = im2col(&padded, g);
    let (p, kk, co) = (g.pixels(), g.patch(), g.cout);
    let go = grad_out.data();

    // dK = colsᵀ · dOut
    let mut dk = vec![0.0; kk * co];
    gemm(kk, p, co, &cols, 1, kk as isize, go, co as isize, 1, &mut dk, 0.0);

    let mut db = vec![0.0; co];
    for row in go.chunks_exact(co) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }

    let dinput = need_input.then(|| {
        // dCols = dOut · Kᵀ
        let mut dcols = vec![0.0; p * kk];
        gemm(p, co, kk, go, co as isize, 1, kernel.data(), 1, co as isize, &mut dcols, 0.0);
        let (wp, span) = (g.wp(), g.k * g.cin);
        let mut dpad = vec![0.0; g.hp() * wp * g.cin];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let src = &dcols[(oy * g.wo + ox) * kk..][..kk];
                for ky in 0..g.k {
                    let d = ((oy * g.stride + ky) * wp + ox * g.stride) * g.cin;
                    for (t, s) in dpad[d..d + span].iter_mut().zip(&src[ky * span..]) {
                        *t += s;
                    }
                }
            }
        }
        let mut dx = vec![0.0; g.h * g.w * g.cin];
        for py in 0..g.hp() {
            let sy = reflect(py as isize - g.pad as isize, g.h);
            for px in 0..wp {
                let sx = reflect(px as isize - g.pad as isize, g.w);
                let s = (sy * g.w + sx) * g.cin;
                let d = (py * wp + px) * g.cin;
                for c in 0..g.cin {
                    dx[s + c] += dpad[d + c];
                }
            }
        }
        Tensor {
            shape: vec![g.h, g.w, g.cin],
            data: dx,
        }
    });

    ConvGrads {
        input: dinput,
        kernel: Tensor {
            shape: kernel.shape().to_vec(),
            data: dk,
        },
        bias: Tensor {
            shape: vec![co],
            data: db,
        },
    }
}

/// Mean over a `window × window` neighbourhood with reflected borders.
pub(crate) fn box_forward(input: &Tensor, window: usize) -> Tensor {
    let (h, w, c) = (input.shape[0], input.shape[1], input.shape[2]);
    let r = (window / 2) as isize;
    let norm = 1.0 / (window * window) as f64;
    let mut out = Tensor::zeros(&[h, w, c]);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut s = 0.0;
                for dy in -r..=r {
                    let sy = reflect(y as isize + dy, h);
                    for dx in -r..=r {
                        let sx = reflect(x as isize + dx, w);
                        s += input.data[(sy * w + sx) * c + ch];
                    }
                }
                out.data[(y * w + x) * c + ch] = s * norm;
            }
        }
    }
    out
}

pub(crate) fn box_backward(grad: &Tensor, window: usize) -> Tensor {
    let (h, w, c) = (grad.shape[0], grad.shape[1], grad.shape[2]);
    let r = (window / 2) as isize;
    let norm = 1.0 / (window * window) as f64;
    let mut dx = Tensor::zeros(&[h, w, c]);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let g = grad.data[(y * w + x) * c + ch] * norm;
                for dy in -r..=r {
                    let sy = reflect(y as isize + dy, h);
                    for ddx in -r..=r {
                        let sx = reflect(x as isize + ddx, w);
                        dx.data[(sy * w + sx) * c + ch] += g;
                    }
                }
            }
        }
    }
    dx
}
