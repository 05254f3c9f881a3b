use serde::{Deserialize, Serialize};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape does not match data length");
        Self { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `C = alpha * op(A) * op(B) + beta * C` over strided views.
///
/// Shapes: `op(A)` is `m x k`, `op(B)` is `k x n`. Strides are given in
/// elements as `(row_stride, col_stride)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_stride: (isize, isize),
    b: &[f64],
    b_stride: (isize, isize),
    beta: f64,
    c: &mut [f64],
    c_stride: (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    // bounds: the furthest element touched in each operand must be in range
    let last = |rows: usize, cols: usize, s: (isize, isize)| {
        (rows.saturating_sub(1) as isize) * s.0 + (cols.saturating_sub(1) as isize) * s.1
    };
    if k > 0 {
        assert!((last(m, k, a_stride) as usize) < a.len(), "gemm: A out of bounds");
        assert!((last(k, n, b_stride) as usize) < b.len(), "gemm: B out of bounds");
    }
    assert!((last(m, n, c_stride) as usize) < c.len(), "gemm: C out of bounds");
    // SAFETY: every index reached by the kernel lies within the slices (checked above),
    // and `c` does not alias `a` or `b` because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_stride.0,
            a_stride.1,
            b.as_ptr(),
            b_stride.0,
            b_stride.1,
            beta,
            c.as_mut_ptr(),
            c_stride.0,
            c_stride.1,
        );
    }
}
