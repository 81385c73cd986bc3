//! Strided general matrix multiply over `f64` slices, backed by `matrixmultiply`.

/// A strided matrix view into a slice: element `(i, j)` lives at
/// `offset + i * row_stride + j * col_stride`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl Layout {
    pub fn row_major(offset: usize, cols: usize) -> Self {
        Layout {
            offset,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// View of a row-major `rows x cols` block as its transpose.
    pub fn transposed(offset: usize, cols: usize) -> Self {
        Layout {
            offset,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// `C = beta * C + A * B` with `A: m x k`, `B: k x n`, `C: m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(lc.last_index(m, n) < c.len(), "gemm: C out of bounds");
    if k == 0 {
        if beta != 1.0 {
            for i in 0..m {
                for j in 0..n {
                    let idx = lc.offset + i * lc.row_stride + j * lc.col_stride;
                    c[idx] *= beta;
                }
            }
        }
        return;
    }
    assert!(la.last_index(m, k) < a.len(), "gemm: A out of bounds");
    assert!(lb.last_index(k, n) < b.len(), "gemm: B out of bounds");
    // SAFETY: every index touched by the kernel is bounded by the
    // `last_index` checks above, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(la.offset),
            la.row_stride as isize,
            la.col_stride as isize,
            b.as_ptr().add(lb.offset),
            lb.row_stride as isize,
            lb.col_stride as isize,
            beta,
            c.as_mut_ptr().add(lc.offset),
            lc.row_stride as isize,
            lc.col_stride as isize,
        );
    }
}
