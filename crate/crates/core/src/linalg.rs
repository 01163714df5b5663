//! Thin safe wrappers over `matrixmultiply` for row-major buffers.

use crate::scalar::Real;

/// Whether an operand is used as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// `c = op(a) * op(b) + beta * c` with `op(a)` shaped `m x k` and `op(b)` shaped
/// `k x n`. All buffers are dense row-major; a transposed operand is stored in
/// its untransposed shape (`k x m` for `a`, `n x k` for `b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    op_a: Op,
    b: &[T],
    op_b: Op,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: lhs buffer too small");
    assert!(b.len() >= k * n, "gemm: rhs buffer too small");
    assert!(c.len() >= m * n, "gemm: output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v = if beta == T::zero() { T::zero() } else { *v * beta };
        }
        return;
    }
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    // SAFETY: the asserts above bound every element addressed by these strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

/// Transposes each of `batch` consecutive `rows x cols` blocks of `src` into `dst`.
pub fn batched_transpose<T: Copy>(src: &[T], dst: &mut [T], batch: usize, rows: usize, cols: usize) {
    let block = rows * cols;
    debug_assert!(src.len() >= batch * block && dst.len() >= batch * block);
    if rows == 1 || cols == 1 {
        dst[..batch * block].copy_from_slice(&src[..batch * block]);
        return;
    }
    for b in 0..batch {
        let s = &src[b * block..(b + 1) * block];
        let d = &mut dst[b * block..(b + 1) * block];
        for r in 0..rows {
            let row = &s[r * cols..(r + 1) * cols];
            for (c, &v) in row.iter().enumerate() {
                d[c * rows + r] = v;
            }
        }
    }
}
