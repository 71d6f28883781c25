//! Slice-level loops shared by the tensor operations and the LSTM code.
//!
//! Everything is written in `i-k-j` order so the innermost loop is a contiguous
//! `y += a * x` that the compiler vectorizes. Summation order is fixed by the
//! loop nest; there is no reassociation anywhere.

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Column tile width of [`matmul_acc`]; a `m × TILE` block of `c` stays in L1.
const TILE: usize = 256;

/// `c[m×n] += a[m×k] · b[k×n]`.
///
/// Zero entries of `a` are skipped. Adding `0 * b` to an accumulator that
/// started at `+0.0` never changes it, so skipping keeps the result bit-equal
/// to the dense loop while making sparse inputs (binary frames) cheap.
///
/// The `p` loop sits outside the `i` loop so each row of `b` is read once per
/// column tile. Every `c[i][j]` still accumulates over `p` in ascending order.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for j0 in (0..n).step_by(TILE) {
        let j1 = (j0 + TILE).min(n);
        let mut p = 0;
        while p + 4 <= k {
            let rows = [0, 1, 2, 3].map(|q| &b[(p + q) * n + j0..(p + q) * n + j1]);
            for i in 0..m {
                let av = [0, 1, 2, 3].map(|q| a[i * k + p + q]);
                let c_row = &mut c[i * n + j0..i * n + j1];
                match av.iter().filter(|&&v| v != 0.0).count() {
                    0 => {}
                    1 => {
                        let q = av.iter().position(|&v| v != 0.0).unwrap();
                        axpy(av[q], rows[q], c_row);
                    }
                    _ => axpy4(av, rows, c_row),
                }
            }
            p += 4;
        }
        for p in p..k {
            let b_row = &b[p * n + j0..p * n + j1];
            for i in 0..m {
                let av = a[i * k + p];
                if av != 0.0 {
                    axpy(av, b_row, &mut c[i * n + j0..i * n + j1]);
                }
            }
        }
    }
}

/// `y += a[0]·x[0] + a[1]·x[1] + a[2]·x[2] + a[3]·x[3]`, added left to right
/// so the result equals four successive [`axpy`] calls.
#[inline]
fn axpy4(a: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
    let n = y.len();
    let (x0, x1, x2, x3) = (&x[0][..n], &x[1][..n], &x[2][..n], &x[3][..n]);
    for j in 0..n {
        let mut v = y[j];
        v += a[0] * x0[j];
        v += a[1] * x1[j];
        v += a[2] * x2[j];
        v += a[3] * x3[j];
        y[j] = v;
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`, skipping zero entries of `a`. Each
/// `c[p][j]` accumulates over `r` in ascending order.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for (p, c_row) in c.chunks_exact_mut(n.max(1)).enumerate().take(k) {
        let mut r = 0;
        while r + 4 <= m {
            let av = [0, 1, 2, 3].map(|q| a[(r + q) * k + p]);
            let rows = [0, 1, 2, 3].map(|q| &b[(r + q) * n..(r + q + 1) * n]);
            match av.iter().filter(|&&v| v != 0.0).count() {
                0 => {}
                1 => {
                    let q = av.iter().position(|&v| v != 0.0).unwrap();
                    axpy(av[q], rows[q], c_row);
                }
                _ => axpy4(av, rows, c_row),
            }
            r += 4;
        }
        for r in r..m {
            let av = a[r * k + p];
            if av != 0.0 {
                axpy(av, &b[r * n..(r + 1) * n], c_row);
            }
        }
    }
}

pub fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut out = vec![0.0; src.len()];
    transpose_strided(src, cols, rows, cols, &mut out, rows);
    out
}

/// `dst[c·dst_stride + r] = src[r·src_stride + c]` for `r < rows`, `c < cols`,
/// in square tiles so both sides stay cache resident.
pub fn transpose_strided(src: &[f64], src_stride: usize, rows: usize, cols: usize, dst: &mut [f64], dst_stride: usize) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * dst_stride + r] = src[r * src_stride + c];
                }
            }
        }
    }
}

pub fn sum_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Population variance, two-pass.
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}
