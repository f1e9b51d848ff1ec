#![allow(dead_code)]

use icl_core::numerics::{Matrix, RngStream, SpdMatrix};

pub fn gaussian(rng: &mut RngStream, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, rng.normal_vec(rows * cols)).unwrap()
}

/// `G Gᵀ / d + floor · I` with Gaussian `G`.
pub fn random_spd(rng: &mut RngStream, d: usize, floor: f64) -> SpdMatrix {
    let g = gaussian(rng, d, d);
    let a = g.matmul(&g.transpose()).unwrap().scale(1.0 / d as f64);
    SpdMatrix::new(a.add(&Matrix::identity(d).scale(floor)).unwrap().symmetrized()).unwrap()
}

pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}
