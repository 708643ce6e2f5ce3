//! Dense row-major matrix products on flat slices.

/// `c = beta * c + op(a) · op(b)` where `op(a)` is `m × k`, `op(b)` is `k × n`
/// and `c` is `m × n`, all stored row-major. With `trans_a`, `a` is stored as
/// `k × m`; with `trans_b`, `b` is stored as `n × k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "lhs shape");
    assert_eq!(b.len(), k * n, "rhs shape");
    assert_eq!(c.len(), m * n, "output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above guarantee every index touched by the kernel
    // (max row * row stride + max col * col stride) lies inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `x · w + bias` for `x: rows × k`, `w: k × n`.
pub fn affine(rows: usize, k: usize, n: usize, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    gemm(rows, k, n, x, false, w, false, 1.0, &mut out);
    out
}

pub fn add_column_sums(rows: usize, cols: usize, x: &[f64], acc: &mut [f64]) {
    for r in 0..rows {
        for (a, v) in acc.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
            *a += v;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = x[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn all_transpose_combinations() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let expect = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut c = vec![0.0; m * n];
            let lhs = if ta { &at } else { &a };
            let rhs = if tb { &bt } else { &b };
            gemm(m, k, n, lhs, ta, rhs, tb, 0.0, &mut c);
            for (x, y) in c.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let mut c = expect.clone();
        gemm(m, k, n, &a, false, &b, false, 1.0, &mut c);
        assert!((c[7] - 2.0 * expect[7]).abs() < 1e-12);
    }
}
