#![allow(dead_code)]

use mmwave_gbomp::block_geometry::BlockAnchor;
use mmwave_gbomp::{CMatrix, CVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| gaussian(rng))
}

/// 0-based columns of the `b x b` block anchored at 1-based `(p, q)` on a
/// `rows x cols` torus, by plain modular arithmetic.
pub fn torus_block(p: usize, q: usize, b: usize, rows: usize, cols: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for j in 0..b {
        for i in 0..b {
            let r = (p - 1 + i) % rows;
            let c = (q - 1 + j) % cols;
            out.push(r + c * rows);
        }
    }
    out.sort_unstable();
    out
}

/// Exhaustive first-pick search: the anchor maximizing `||(A^H y)_J||`,
/// smallest `(p, q)` on ties.
pub fn brute_force_anchor(a: &CMatrix, y: &CVector, rows: usize, cols: usize, b: usize) -> BlockAnchor {
    let corr = a.adjoint() * y;
    let mut best = (BlockAnchor { p: 1, q: 1 }, f64::NEG_INFINITY);
    for p in 1..=rows {
        for q in 1..=cols {
            let score = torus_block(p, q, b, rows, cols)
                .into_iter()
                .map(|c| corr[c].norm_sqr())
                .sum::<f64>()
                .sqrt();
            if score > best.1 {
                best = (BlockAnchor { p, q }, score);
            }
        }
    }
    best.0
}

/// Random block-sparse instance on a small torus.
pub fn instance(seed: u64) -> (CMatrix, CVector, usize, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.random_range(2..=8);
    let cols = rng.random_range(2..=(64 / rows).min(8));
    let b = rng.random_range(1..=rows.min(cols).min(3));
    let m = rng.random_range(6..=24);
    let a = gaussian_matrix(&mut rng, m, rows * cols);
    let mut e = CVector::zeros(rows * cols);
    for _ in 0..rng.random_range(1..=2) {
        let (p, q) = (rng.random_range(1..=rows), rng.random_range(1..=cols));
        for c in torus_block(p, q, b, rows, cols) {
            e[c] += gaussian(&mut rng);
        }
    }
    let y = &a * e + gaussian_vector(&mut rng, m) * Complex64::from(0.05);
    (a, y, rows, cols, b)
}
