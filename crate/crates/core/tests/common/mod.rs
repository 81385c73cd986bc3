//! Independent reference implementations used as test oracles. Everything
//! here is written with plain loops over `Vec<f64>` and shares no code with
//! the library beyond the `Tensor` container.
#![allow(dead_code)]

use gconv_core::Tensor;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Stride-1 cross-correlation with zero padding so that output size equals
/// input size (lead padding `(k - 1) / 2`). `x`: b x h x w x m, `k`:
/// kh x kw x m x n.
pub fn conv_same(x: &Tensor, k: &Tensor) -> Tensor {
    let (b, h, w, m) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, n) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    assert_eq!(k.shape()[2], m);
    let (pt, pl) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut y = vec![0.0; b * h * w * n];
    for bi in 0..b {
        for oy in 0..h {
            for ox in 0..w {
                for o in 0..n {
                    let mut acc = 0.0;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = oy as isize + dy as isize - pt as isize;
                            let ix = ox as isize + dx as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for c in 0..m {
                                acc += x.at(&[bi, iy as usize, ix as usize, c])
                                    * k.at(&[dy, dx, c, o]);
                            }
                        }
                    }
                    y[((bi * h + oy) * w + ox) * n + o] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, h, w, n], y).unwrap()
}

/// Valid (unpadded) stride-1 cross-correlation.
pub fn conv_valid(x: &Tensor, k: &Tensor) -> Tensor {
    let (b, h, w, m) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, n) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut y = Tensor::zeros(vec![b, oh, ow, n]);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..n {
                    let mut acc = 0.0;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            for c in 0..m {
                                acc += x.at(&[bi, oy + dy, ox + dx, c]) * k.at(&[dy, dx, c, o]);
                            }
                        }
                    }
                    y.set(&[bi, oy, ox, o], acc);
                }
            }
        }
    }
    y
}

/// Per-sample spatial mean, b x m.
pub fn spatial_mean(x: &Tensor) -> Vec<Vec<f64>> {
    let (b, h, w, m) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    (0..b)
        .map(|bi| {
            (0..m)
                .map(|c| {
                    let mut s = 0.0;
                    for y in 0..h {
                        for xx in 0..w {
                            s += x.at(&[bi, y, xx, c]);
                        }
                    }
                    s / (h * w) as f64
                })
                .collect()
        })
        .collect()
}

/// Generative convolution computed by materializing each sample's kernel:
/// `S_i = sigmoid([mean(x_i), z_i] W_s)`, `Khat_i = K diag(S_i) W_L`,
/// `y_i = x_i * K + x_i * Khat_i`.
pub fn gconv_materialized(x: &Tensor, z: &Tensor, k: &Tensor, ws: &Tensor, wl: &Tensor) -> Tensor {
    let (b, h, w, m) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, n) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let d_z = z.shape()[1];
    let means = spatial_mean(x);
    let mut out = Vec::with_capacity(b * h * w * n);
    for bi in 0..b {
        let feat: Vec<f64> = means[bi]
            .iter()
            .copied()
            .chain((0..d_z).map(|j| z.at(&[bi, j])))
            .collect();
        let s: Vec<f64> = (0..n)
            .map(|o| sigmoid((0..m + d_z).map(|r| feat[r] * ws.at(&[r, o])).sum()))
            .collect();
        let mut khat = Tensor::zeros(vec![kh, kw, m, n]);
        for dy in 0..kh {
            for dx in 0..kw {
                for c in 0..m {
                    for o in 0..n {
                        let v: f64 = (0..n)
                            .map(|j| k.at(&[dy, dx, c, j]) * s[j] * wl.at(&[j, o]))
                            .sum();
                        khat.set(&[dy, dx, c, o], v);
                    }
                }
            }
        }
        let xi = Tensor::new(
            vec![1, h, w, m],
            x.data()[bi * h * w * m..(bi + 1) * h * w * m].to_vec(),
        )
        .unwrap();
        let base = conv_same(&xi, k);
        let extra = conv_same(&xi, &khat);
        out.extend(base.data().iter().zip(extra.data()).map(|(a, e)| a + e));
    }
    Tensor::new(vec![b, h, w, n], out).unwrap()
}

/// Singular values of an r x c row-major matrix by one-sided Jacobi
/// rotations, sorted descending.
pub fn jacobi_singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    // work on columns of A (or A^T when wide)
    let (r, c, get): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if rows >= cols {
        (rows, cols, Box::new(|i, j| a[i * cols + j]))
    } else {
        (cols, rows, Box::new(|i, j| a[j * cols + i]))
    };
    let mut u: Vec<Vec<f64>> = (0..c)
        .map(|j| (0..r).map(|i| get(i, j)).collect())
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..c {
            for q in p + 1..c {
                let alpha: f64 = u[p].iter().map(|v| v * v).sum();
                let beta: f64 = u[q].iter().map(|v| v * v).sum();
                let gamma: f64 = u[p].iter().zip(&u[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for i in 0..r {
                    let (x, y) = (u[p][i], u[q][i]);
                    u[p][i] = cs * x - sn * y;
                    u[q][i] = sn * x + cs * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut s: Vec<f64> = u
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Hand-rolled Adam on plain vectors.
pub struct AdamOracle {
    pub lr: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: i32,
}

impl AdamOracle {
    pub fn new(lr: f64, n: usize) -> Self {
        AdamOracle {
            lr,
            b1: 0.0,
            b2: 0.9,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, p: &mut [f64], g: &[f64]) {
        self.t += 1;
        for i in 0..p.len() {
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g[i];
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - self.b1.powi(self.t));
            let vh = self.v[i] / (1.0 - self.b2.powi(self.t));
            p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// `max |a - b| / max(max |b|, tiny)`.
pub fn rel_dev(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let num = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    num / b.max_abs().max(1e-300)
}
