//! Orthogonal weight initialization.

use rand::Rng;
use rand_distr::StandardNormal;

/// Fills a `rows × cols` row-major matrix with a scaled (semi-)orthogonal
/// matrix: orthonormal columns when `rows >= cols`, orthonormal rows otherwise.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng, out: &mut [f64]) {
    assert_eq!(out.len(), rows * cols);
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // `short` vectors of length `long`, orthonormalized by modified Gram-Schmidt
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for q in &basis {
            let proj: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain
                * if rows >= cols {
                    basis[c][r]
                } else {
                    basis[r][c]
                };
        }
    }
}
