//! Low-level compute kernels: GEMM variants, im2col convolution helpers.
//!
//! Every parallel kernel assigns each output element to exactly one task and
//! keeps a fixed accumulation order, so results are bit-identical for any
//! worker-thread count.

use rayon::prelude::*;

use super::scalar::Scalar;

/// Rows of C handled per rayon task; amortizes scheduling for narrow outputs.
const ROWS_PER_TASK: usize = 8;

/// C[m,n] = A[m,k] * B[k,n], overwriting C. Parallel over rows of C.
pub fn gemm_nn<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.par_chunks_mut(n)
        .with_min_len(ROWS_PER_TASK)
        .enumerate()
        .for_each(|(i, c_row)| gemm_nn_row(&a[i * k..(i + 1) * k], b, c_row, k, n));
}

/// Single-threaded variant for use inside an outer parallel loop.
pub fn gemm_nn_st<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for (i, c_row) in c.chunks_mut(n).enumerate() {
        gemm_nn_row(&a[i * k..(i + 1) * k], b, c_row, k, n);
    }
}

#[inline]
fn gemm_nn_row<S: Scalar>(a_row: &[S], b: &[S], c_row: &mut [S], k: usize, n: usize) {
    // Narrow outputs (attention head width) go through fixed-width kernels so
    // the accumulator array vectorizes.
    match n {
        4 => return gemm_nn_row_fixed::<S, 4>(a_row, b, c_row, k),
        8 => return gemm_nn_row_fixed::<S, 8>(a_row, b, c_row, k),
        16 => return gemm_nn_row_fixed::<S, 16>(a_row, b, c_row, k),
        32 => return gemm_nn_row_fixed::<S, 32>(a_row, b, c_row, k),
        _ => {}
    }
    if n < 32 {
        let mut acc = [S::zero(); 32];
        for (t, &av) in a_row.iter().enumerate().take(k) {
            let b_row = &b[t * n..t * n + n];
            for j in 0..n {
                acc[j] = acc[j] + av * b_row[j];
            }
        }
        c_row.copy_from_slice(&acc[..n]);
    } else {
        for v in c_row.iter_mut() {
            *v = S::zero();
        }
        for (t, &av) in a_row.iter().enumerate().take(k) {
            let b_row = &b[t * n..t * n + n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv = *cv + av * bv;
            }
        }
    }
}

#[inline]
fn gemm_nn_row_fixed<S: Scalar, const N: usize>(a_row: &[S], b: &[S], c_row: &mut [S], k: usize) {
    let mut acc = [S::zero(); N];
    for (t, &av) in a_row.iter().enumerate().take(k) {
        let b_row = &b[t * N..t * N + N];
        for l in 0..N {
            acc[l] = acc[l] + av * b_row[l];
        }
    }
    c_row.copy_from_slice(&acc);
}

/// C[m,q] = A[m,p] * B^T where B is stored [q,p]. Parallel over rows of C.
pub fn gemm_nt<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, p: usize, q: usize) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), q * p);
    debug_assert_eq!(c.len(), m * q);
    c.par_chunks_mut(q)
        .with_min_len(ROWS_PER_TASK)
        .enumerate()
        .for_each(|(i, c_row)| gemm_nt_row(&a[i * p..(i + 1) * p], b, c_row, p));
}

/// Single-threaded `gemm_nt`.
pub fn gemm_nt_st<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, p: usize, q: usize) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), q * p);
    debug_assert_eq!(c.len(), m * q);
    for (i, c_row) in c.chunks_mut(q).enumerate() {
        gemm_nt_row(&a[i * p..(i + 1) * p], b, c_row, p);
    }
}

#[inline]
fn gemm_nt_row<S: Scalar>(a_row: &[S], b: &[S], c_row: &mut [S], p: usize) {
    match p {
        4 => return gemm_nt_row_fixed::<S, 4>(a_row, b, c_row),
        8 => return gemm_nt_row_fixed::<S, 8>(a_row, b, c_row),
        16 => return gemm_nt_row_fixed::<S, 16>(a_row, b, c_row),
        32 => return gemm_nt_row_fixed::<S, 32>(a_row, b, c_row),
        _ => {}
    }
    for (j, cv) in c_row.iter_mut().enumerate() {
        *cv = dot(a_row, &b[j * p..(j + 1) * p]);
    }
}

#[inline]
fn gemm_nt_row_fixed<S: Scalar, const P: usize>(a_row: &[S], b: &[S], c_row: &mut [S]) {
    for (j, cv) in c_row.iter_mut().enumerate() {
        let b_row = &b[j * P..(j + 1) * P];
        let mut s = S::zero();
        for l in 0..P {
            s = s + a_row[l] * b_row[l];
        }
        *cv = s;
    }
}

/// C[m,n] = A^T * B where A is stored [p,m] and B is stored [p,n].
/// Parallel over rows of C.
pub fn gemm_tn<S: Scalar>(a: &[S], b: &[S], c: &mut [S], p: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), p * m);
    debug_assert_eq!(b.len(), p * n);
    debug_assert_eq!(c.len(), m * n);
    c.par_chunks_mut(n)
        .with_min_len(ROWS_PER_TASK)
        .enumerate()
        .for_each(|(i, c_row)| gemm_tn_row(a, b, c_row, i, p, m, n));
}

/// Single-threaded `gemm_tn`.
pub fn gemm_tn_st<S: Scalar>(a: &[S], b: &[S], c: &mut [S], p: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), p * m);
    debug_assert_eq!(b.len(), p * n);
    debug_assert_eq!(c.len(), m * n);
    for (i, c_row) in c.chunks_mut(n).enumerate() {
        gemm_tn_row(a, b, c_row, i, p, m, n);
    }
}

#[inline]
fn gemm_tn_row<S: Scalar>(a: &[S], b: &[S], c_row: &mut [S], i: usize, p: usize, m: usize, n: usize) {
    match n {
        4 => return gemm_tn_row_fixed::<S, 4>(a, b, c_row, i, p, m),
        8 => return gemm_tn_row_fixed::<S, 8>(a, b, c_row, i, p, m),
        16 => return gemm_tn_row_fixed::<S, 16>(a, b, c_row, i, p, m),
        32 => return gemm_tn_row_fixed::<S, 32>(a, b, c_row, i, p, m),
        _ => {}
    }
    for v in c_row.iter_mut() {
        *v = S::zero();
    }
    for t in 0..p {
        let av = a[t * m + i];
        let b_row = &b[t * n..t * n + n];
        for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
            *cv = *cv + av * bv;
        }
    }
}

#[inline]
fn gemm_tn_row_fixed<S: Scalar, const N: usize>(
    a: &[S],
    b: &[S],
    c_row: &mut [S],
    i: usize,
    p: usize,
    m: usize,
) {
    let mut acc = [S::zero(); N];
    for t in 0..p {
        let av = a[t * m + i];
        let b_row = &b[t * N..t * N + N];
        for l in 0..N {
            acc[l] = acc[l] + av * b_row[l];
        }
    }
    c_row.copy_from_slice(&acc);
}

/// Eight-lane maximum (vectorizable; empty slices return -inf).
#[inline]
pub fn max_of<S: Scalar>(row: &[S]) -> S {
    let mut lanes = [S::neg_infinity(); 8];
    let chunks = row.len() / 8;
    for c in 0..chunks {
        let r = &row[c * 8..c * 8 + 8];
        for l in 0..8 {
            if r[l] > lanes[l] {
                lanes[l] = r[l];
            }
        }
    }
    let mut mx = lanes[0];
    for &l in &lanes[1..] {
        if l > mx {
            mx = l;
        }
    }
    for &v in &row[chunks * 8..] {
        if v > mx {
            mx = v;
        }
    }
    mx
}

/// Eight-lane sum with a fixed reduction order.
#[inline]
pub fn sum_of<S: Scalar>(row: &[S]) -> S {
    let mut lanes = [S::zero(); 8];
    let chunks = row.len() / 8;
    for c in 0..chunks {
        let r = &row[c * 8..c * 8 + 8];
        for l in 0..8 {
            lanes[l] = lanes[l] + r[l];
        }
    }
    let mut s =
        ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for &v in &row[chunks * 8..] {
        s = s + v;
    }
    s
}

/// In-place softmax of one row: separate max / exp / sum / scale passes so
/// each one vectorizes. Returns (row max, exp sum) for later recomputation.
#[inline]
pub fn softmax_row<S: Scalar>(row: &mut [S]) -> (S, S) {
    let mx = max_of(row);
    for v in row.iter_mut() {
        *v = (*v - mx).exp_fast();
    }
    let total = sum_of(row);
    let inv = S::one() / total;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
    (mx, total)
}

/// Eight-lane unrolled dot product (fixed summation order).
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let ao = &a[c * 8..c * 8 + 8];
        let bo = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] = acc[l] + ao[l] * bo[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for t in chunks * 8..a.len() {
        s = s + a[t] * b[t];
    }
    s
}

/// Unfold one [C,H,W] image into columns for a 3x3, stride-1, pad-1
/// convolution: `cols[(c*9 + u*3 + v), y*w + x] = x[c, y+u-1, x+v-1]`
/// (zero outside the image). `cols` must have length `c_in*9*h*w`.
pub fn im2col_3x3<S: Scalar>(x: &[S], c_in: usize, h: usize, w: usize, cols: &mut [S]) {
    debug_assert_eq!(x.len(), c_in * h * w);
    debug_assert_eq!(cols.len(), c_in * 9 * h * w);
    let hw = h * w;
    for c in 0..c_in {
        let plane = &x[c * hw..(c + 1) * hw];
        for u in 0..3usize {
            for v in 0..3usize {
                let out = &mut cols[(c * 9 + u * 3 + v) * hw..(c * 9 + u * 3 + v + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + u as isize - 1;
                    let dst = &mut out[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        for d in dst.iter_mut() {
                            *d = S::zero();
                        }
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match v {
                        0 => {
                            dst[0] = S::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = S::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of column gradients back to image layout; inverse of
/// [`im2col_3x3`]. `dx` is accumulated into (caller zeroes it first).
pub fn col2im_3x3<S: Scalar>(cols: &[S], c_in: usize, h: usize, w: usize, dx: &mut [S]) {
    debug_assert_eq!(dx.len(), c_in * h * w);
    debug_assert_eq!(cols.len(), c_in * 9 * h * w);
    let hw = h * w;
    for c in 0..c_in {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for u in 0..3usize {
            for v in 0..3usize {
                let src_plane = &cols[(c * 9 + u * 3 + v) * hw..(c * 9 + u * 3 + v + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + u as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &src_plane[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match v {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(src[1..].iter()) {
                                *d = *d + s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                                *d = *d + s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(src[..w - 1].iter()) {
                                *d = *d + s;
                            }
                        }
                    }
                }
            }
        }
    }
}
