//! 2-D cross-correlation over NHWC tensors with HWIO kernels.
//!
//! Each (sample, output row, kernel tap) contributes one strided GEMM of the
//! valid output columns against the `m x n` slice of the kernel at that tap,
//! so no im2col buffer is materialized.

use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Layout};
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`. Odd deficits put the
    /// extra row/column at the bottom/right.
    Same,
    Valid,
}

/// Output size and leading padding along one spatial axis.
pub fn conv2d_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Option<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                return None;
            }
            Some(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            if kernel > input + total {
                return None;
            }
            Some((out, total / 2))
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub m: usize,
    pub kh: usize,
    pub kw: usize,
    pub n: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(
        x_shape: &[usize],
        k_shape: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (b, h, w, m) = match x_shape {
            [b, h, w, m] => (*b, *h, *w, *m),
            s => return dim_err("conv2d", format!("input must be b x h x w x m, got {s:?}")),
        };
        let (kh, kw, km, n) = match k_shape {
            [kh, kw, km, n] => (*kh, *kw, *km, *n),
            s => {
                return dim_err(
                    "conv2d",
                    format!("kernel must be kh x kw x m x n, got {s:?}"),
                )
            }
        };
        if km != m {
            return dim_err(
                "conv2d",
                format!("input {x_shape:?} has {m} channels but kernel {k_shape:?} expects {km}"),
            );
        }
        let (oh, pad_top) =
            conv2d_output_size(h, kh, stride, padding).ok_or_else(|| crate::Error::Dimension {
                op: "conv2d",
                detail: format!("kernel {k_shape:?} does not fit input {x_shape:?}"),
            })?;
        let (ow, pad_left) =
            conv2d_output_size(w, kw, stride, padding).ok_or_else(|| crate::Error::Dimension {
                op: "conv2d",
                detail: format!("kernel {k_shape:?} does not fit input {x_shape:?}"),
            })?;
        Ok(ConvGeom {
            b,
            h,
            w,
            m,
            kh,
            kw,
            n,
            oh,
            ow,
            stride,
            pad_top,
            pad_left,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.b, self.oh, self.ow, self.n]
    }

    /// Visits every (input row offset, output row offset, column count,
    /// kernel tap offset) block contributing to the output.
    fn for_each_block(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let s = self.stride;
        if self.kh == 1 && self.kw == 1 && s == 1 && self.pad_top == 0 && self.pad_left == 0 {
            // pointwise: every pixel of every sample is one GEMM row
            f(0, 0, self.b * self.h * self.w, 0);
            return;
        }
        for bi in 0..self.b {
            for oy in 0..self.oh {
                for dy in 0..self.kh {
                    let iy = (oy * s + dy) as isize - self.pad_top as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for dx in 0..self.kw {
                        // valid output columns: 0 <= ox*s + dx - pad_left < w
                        let lo = if dx >= self.pad_left {
                            0
                        } else {
                            (self.pad_left - dx).div_ceil(s)
                        };
                        let hi_num = self.w + self.pad_left;
                        if hi_num <= dx {
                            continue;
                        }
                        let hi = ((hi_num - dx - 1) / s + 1).min(self.ow);
                        if lo >= hi {
                            continue;
                        }
                        let ix0 = lo * s + dx - self.pad_left;
                        let x_off = ((bi * self.h + iy) * self.w + ix0) * self.m;
                        let y_off = ((bi * self.oh + oy) * self.ow + lo) * self.n;
                        let k_off = (dy * self.kw + dx) * self.m * self.n;
                        f(x_off, y_off, hi - lo, k_off);
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], k: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; g.b * g.oh * g.ow * g.n];
    let xs = g.stride * g.m;
    g.for_each_block(|x_off, y_off, cols, k_off| {
        gemm(
            cols,
            g.m,
            g.n,
            x,
            Layout {
                offset: x_off,
                row_stride: xs,
                col_stride: 1,
            },
            k,
            Layout::row_major(k_off, g.n),
            1.0,
            &mut y,
            Layout::row_major(y_off, g.n),
        );
    });
    y
}

pub(crate) fn conv2d_backward_input(g: &ConvGeom, dy: &[f64], k: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; g.b * g.h * g.w * g.m];
    let xs = g.stride * g.m;
    g.for_each_block(|x_off, y_off, cols, k_off| {
        gemm(
            cols,
            g.n,
            g.m,
            dy,
            Layout::row_major(y_off, g.n),
            k,
            Layout::transposed(k_off, g.n),
            1.0,
            &mut dx,
            Layout {
                offset: x_off,
                row_stride: xs,
                col_stride: 1,
            },
        );
    });
    dx
}

pub(crate) fn conv2d_backward_kernel(g: &ConvGeom, dy: &[f64], x: &[f64]) -> Vec<f64> {
    let mut dk = vec![0.0; g.kh * g.kw * g.m * g.n];
    let xs = g.stride * g.m;
    g.for_each_block(|x_off, y_off, cols, k_off| {
        gemm(
            g.m,
            cols,
            g.n,
            x,
            Layout {
                offset: x_off,
                row_stride: 1,
                col_stride: xs,
            },
            dy,
            Layout::row_major(y_off, g.n),
            1.0,
            &mut dk,
            Layout::row_major(k_off, g.n),
        );
    });
    dk
}
