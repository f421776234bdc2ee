//! Randomized system generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    sv.max() / sv.min()
}

/// `H = I + 0.4 G / sqrt(n)` with condition number at most 20, and its inverse.
pub fn similarity(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    loop {
        let h = DMatrix::identity(n, n) + gaussian_matrix(rng, n, n) * (0.4 / (n as f64).sqrt());
        if condition(&h) <= 20.0 {
            let inv = h.clone().try_inverse().expect("well conditioned");
            return (h, inv);
        }
    }
}

/// Spectral building block of a block-diagonal `D`.
#[derive(Debug, Clone, Copy)]
pub enum Block {
    Real(f64),
    /// `re +- i im`.
    Pair(f64, f64),
    /// 2x2 Jordan block at `lambda`.
    Jordan(f64),
}

impl Block {
    pub fn size(self) -> usize {
        match self {
            Block::Real(_) => 1,
            Block::Pair(..) | Block::Jordan(_) => 2,
        }
    }

    /// Reflect the spectrum through `Re = 1`: `lambda -> 2 - conj(lambda)`.
    pub fn mirrored(self) -> Self {
        match self {
            Block::Real(l) => Block::Real(2.0 - l),
            Block::Pair(re, im) => Block::Pair(2.0 - re, im),
            Block::Jordan(l) => Block::Jordan(2.0 - l),
        }
    }
}

pub fn block_diagonal(blocks: &[Block]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.size()).sum();
    let mut d = DMatrix::zeros(n, n);
    let mut k = 0;
    for b in blocks {
        match *b {
            Block::Real(l) => d[(k, k)] = l,
            Block::Pair(re, im) => {
                d[(k, k)] = re;
                d[(k, k + 1)] = im;
                d[(k + 1, k)] = -im;
                d[(k + 1, k + 1)] = re;
            }
            Block::Jordan(l) => {
                d[(k, k)] = l;
                d[(k, k + 1)] = 1.0;
                d[(k + 1, k + 1)] = l;
            }
        }
        k += b.size();
    }
    d
}

/// Blocks with every real part in `[lo, hi]`, filling exactly `n` dimensions.
pub fn stable_blocks(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<Block> {
    let mut out = Vec::new();
    let mut left = n;
    while left > 0 {
        if left >= 2 && rng.random_bool(0.4) {
            out.push(Block::Pair(rng.random_range(lo..hi), rng.random_range(0.1..1.0)));
            left -= 2;
        } else {
            out.push(Block::Real(rng.random_range(lo..hi)));
            left -= 1;
        }
    }
    out
}

/// Random row-stochastic matrix with positive weights in `[0.05, 1]` on a
/// random sparsity pattern; every row keeps at least one entry.
pub fn random_row_stochastic(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if rng.random_bool(density) {
                p[(i, j)] = rng.random_range(0.05..1.0);
            }
        }
        if (0..n).all(|j| p[(i, j)] == 0.0) {
            let j = rng.random_range(0..n);
            p[(i, j)] = rng.random_range(0.05..1.0);
        }
        let s: f64 = p.row(i).sum();
        for j in 0..n {
            p[(i, j)] /= s;
        }
    }
    p
}

/// `H^-1 D H` with a semisimple eigenvalue 1 of multiplicity `r` and the rest
/// of the spectrum in `Re <= 0.8`.
pub fn semisimple_unit_matrix(rng: &mut ChaCha8Rng, n: usize, r: usize) -> DMatrix<f64> {
    let mut blocks = vec![Block::Real(1.0); r];
    blocks.extend(stable_blocks(rng, n - r, -1.5, 0.8));
    let (h, h_inv) = similarity(rng, n);
    &h_inv * block_diagonal(&blocks) * &h
}
