//! Dense inner loops shared by the linear layers.
//!
//! Rust never contracts `a * b + c` into a fused multiply-add, so the AVX2
//! builds of these loops round exactly like the portable ones; the dispatch
//! only changes speed.

use super::Tensor2;
use crate::par::{self, Exec};

/// Rows held in registers by the tiled loops.
const ROW_BLOCK: usize = 4;
/// Rows per parallel task.
const TASK_ROWS: usize = 32;

#[inline(always)]
fn axpy_body(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline(always)]
fn dot_body(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let j = c * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..n {
        s += a[j] * b[j];
    }
    s
}

/// Output columns per register tile.
const COL_TILE: usize = 8;

// y[r] += x[r] . W for a block of rows. Each output sums its terms in
// ascending `i`, whatever the tiling. Column strips are the outer loop so
// a strip of W stays in cache while every row block consumes it.
#[inline(always)]
fn gemm_block_body(x: &[f64], in_dim: usize, w: &[f64], out_dim: usize, y: &mut [f64]) {
    let rows = y.len() / out_dim;
    let full = out_dim / COL_TILE * COL_TILE;
    let blocks = rows / ROW_BLOCK;
    let xt: Vec<Vec<[f64; ROW_BLOCK]>> = (0..blocks)
        .map(|b| {
            let xb = &x[b * ROW_BLOCK * in_dim..];
            (0..in_dim).map(|i| std::array::from_fn(|r| xb[r * in_dim + i])).collect()
        })
        .collect();
    for c0 in (0..full).step_by(COL_TILE) {
        for (b, xb) in xt.iter().enumerate() {
            let yb = &mut y[b * ROW_BLOCK * out_dim..];
            let mut acc = [[0.0f64; COL_TILE]; ROW_BLOCK];
            for (r, a) in acc.iter_mut().enumerate() {
                a.copy_from_slice(&yb[r * out_dim + c0..r * out_dim + c0 + COL_TILE]);
            }
            for (w_row, xa) in w.chunks_exact(out_dim).zip(xb) {
                let wt: &[f64; COL_TILE] = w_row[c0..c0 + COL_TILE].try_into().unwrap();
                for (a, &alpha) in acc.iter_mut().zip(xa) {
                    for c in 0..COL_TILE {
                        a[c] += alpha * wt[c];
                    }
                }
            }
            for (r, a) in acc.iter().enumerate() {
                yb[r * out_dim + c0..r * out_dim + c0 + COL_TILE].copy_from_slice(a);
            }
        }
    }
    for r in blocks * ROW_BLOCK..rows {
        gemm_row(&x[r * in_dim..(r + 1) * in_dim], w, out_dim, 0, full, &mut y[r * out_dim..(r + 1) * out_dim]);
    }
    for r in 0..rows {
        gemm_row(&x[r * in_dim..(r + 1) * in_dim], w, out_dim, full, out_dim, &mut y[r * out_dim..(r + 1) * out_dim]);
    }
}

#[inline(always)]
fn gemm_row(x: &[f64], w: &[f64], out_dim: usize, c0: usize, c1: usize, y: &mut [f64]) {
    for (i, &alpha) in x.iter().enumerate() {
        axpy_body(alpha, &w[i * out_dim + c0..i * out_dim + c1], &mut y[c0..c1]);
    }
}

// dx[r, i] = dy[r] . W[i] for a block of rows, each dot reduced exactly
// like `dot_body`.
#[inline(always)]
fn gemm_t_block_body(dy: &[f64], out_dim: usize, w: &[f64], in_dim: usize, dx: &mut [f64]) {
    const IT: usize = 2;
    let rows = dx.len() / in_dim;
    let chunks = out_dim / 4;
    let mut i = 0;
    while i < in_dim {
        let ni = (in_dim - i).min(IT);
        for r0 in (0..rows).step_by(ROW_BLOCK) {
            let nr = (rows - r0).min(ROW_BLOCK);
            let mut acc = [[[0.0f64; 4]; IT]; ROW_BLOCK];
            for c in 0..chunks {
                let j = c * 4;
                for t in 0..ni {
                    let wv: &[f64; 4] = w[(i + t) * out_dim + j..(i + t) * out_dim + j + 4].try_into().unwrap();
                    for (r, a) in acc.iter_mut().enumerate().take(nr) {
                        let o = (r0 + r) * out_dim + j;
                        let d: &[f64; 4] = dy[o..o + 4].try_into().unwrap();
                        for l in 0..4 {
                            a[t][l] += d[l] * wv[l];
                        }
                    }
                }
            }
            for (r, a) in acc.iter().enumerate().take(nr) {
                let row = r0 + r;
                for t in 0..ni {
                    let lanes = a[t];
                    let mut s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
                    for j in chunks * 4..out_dim {
                        s += dy[row * out_dim + j] * w[(i + t) * out_dim + j];
                    }
                    dx[row * in_dim + i + t] = s;
                }
            }
        }
        i += ni;
    }
}

// dw[i] += sum_n x[n, i] * dy[n] for a block of consecutive rows of dw,
// summing over `n` in ascending order.
#[inline(always)]
fn outer_acc_body(x: &Tensor2, dy: &Tensor2, i0: usize, dw: &mut [f64]) {
    let cols = dy.cols();
    let rows = dw.len() / cols;
    let full = cols / COL_TILE * COL_TILE;
    for c0 in (0..full).step_by(COL_TILE) {
        let mut acc = [[0.0f64; COL_TILE]; ROW_BLOCK];
        for k in 0..rows {
            acc[k].copy_from_slice(&dw[k * cols + c0..k * cols + c0 + COL_TILE]);
        }
        for n in 0..x.rows() {
            let d: &[f64; COL_TILE] = dy.row(n)[c0..c0 + COL_TILE].try_into().unwrap();
            let xr = x.row(n);
            for (k, a) in acc.iter_mut().enumerate().take(rows) {
                let alpha = xr[i0 + k];
                for c in 0..COL_TILE {
                    a[c] += alpha * d[c];
                }
            }
        }
        for k in 0..rows {
            dw[k * cols + c0..k * cols + c0 + COL_TILE].copy_from_slice(&acc[k]);
        }
    }
    if full < cols {
        for n in 0..x.rows() {
            for k in 0..rows {
                axpy_body(x.get(n, i0 + k), &dy.row(n)[full..], &mut dw[k * cols + full..(k + 1) * cols]);
            }
        }
    }
}

macro_rules! dispatch {
    ($name:ident, $body:ident, ($($arg:ident : $ty:ty),*) $(-> $ret:ty)?) => {
        #[inline]
        pub(crate) fn $name($($arg: $ty),*) $(-> $ret)? {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn wide($($arg: $ty),*) $(-> $ret)? {
                    $body($($arg),*)
                }
                if std::is_x86_feature_detected!("avx2") {
                    // SAFETY: the CPU supports AVX2, checked just above.
                    return unsafe { wide($($arg),*) };
                }
            }
            $body($($arg),*)
        }
    };
}

dispatch!(dot, dot_body, (a: &[f64], b: &[f64]) -> f64);
dispatch!(gemm_block, gemm_block_body, (x: &[f64], in_dim: usize, w: &[f64], out_dim: usize, y: &mut [f64]));
dispatch!(gemm_t_block, gemm_t_block_body, (dy: &[f64], out_dim: usize, w: &[f64], in_dim: usize, dx: &mut [f64]));
dispatch!(outer_acc, outer_acc_body, (x: &Tensor2, dy: &Tensor2, i0: usize, dw: &mut [f64]));

/// `y = x W + b` with `W` stored `in x out`.
pub(crate) fn affine(exec: Exec, x: &Tensor2, w: &Tensor2, b: &[f64]) -> Tensor2 {
    let (in_dim, out_dim) = w.shape();
    let mut y = Tensor2::zeros(x.rows(), out_dim);
    for r in 0..x.rows() {
        y.row_mut(r).copy_from_slice(b);
    }
    let xd = x.data();
    let wd = w.data();
    par::for_each_row(exec, y.data_mut(), TASK_ROWS * out_dim, |blk, ys| {
        let r0 = blk * TASK_ROWS;
        let rows = ys.len() / out_dim;
        gemm_block(&xd[r0 * in_dim..(r0 + rows) * in_dim], in_dim, wd, out_dim, ys);
    });
    y
}

/// `dx = dy W^T`.
pub(crate) fn affine_input_grad(exec: Exec, dy: &Tensor2, w: &Tensor2) -> Tensor2 {
    let (in_dim, out_dim) = w.shape();
    let mut dx = Tensor2::zeros(dy.rows(), in_dim);
    let dyd = dy.data();
    let wd = w.data();
    par::for_each_row(exec, dx.data_mut(), TASK_ROWS * in_dim, |blk, xs| {
        let r0 = blk * TASK_ROWS;
        let rows = xs.len() / in_dim;
        gemm_t_block(&dyd[r0 * out_dim..(r0 + rows) * out_dim], out_dim, wd, in_dim, xs);
    });
    dx
}

/// `dw += x^T dy`.
pub(crate) fn affine_weight_grad(exec: Exec, x: &Tensor2, dy: &Tensor2, dw: &mut Tensor2) {
    let cols = dw.cols();
    par::for_each_row(exec, dw.data_mut(), ROW_BLOCK * cols, |blk, rows| outer_acc(x, dy, blk * ROW_BLOCK, rows));
}
