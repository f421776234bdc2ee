//! Matrix-valued states `X` (n agents, m topics) and their vectorized form.
//!
//! Vectorization is row-major throughout: `y[i * m + j] = X[i][j]`. With this
//! ordering `vec(P X C^T) = (P kron C) vec(X)`.

use nalgebra::{DMatrix, DVector};

use crate::analysis::fj_fixed_point;
use crate::ensembles::{add_noise, MatrixSampler, Sampler, StreamKey};
use crate::error::{Error, Result};
use crate::linalg::{check_square_finite, unvec_rows, vec_rows};
use crate::spectral::{analyze, default_tol};

/// The vector recursion equivalent to `X -> P X C^T + U`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSystem {
    pub q: DMatrix<f64>,
    pub v: DVector<f64>,
    pub n: usize,
    pub m: usize,
}

impl LiftedSystem {
    pub fn vec_state(&self, x: &DMatrix<f64>) -> DVector<f64> {
        vec_rows(x)
    }

    pub fn unvec_state(&self, y: &DVector<f64>) -> DMatrix<f64> {
        unvec_rows(y, self.n, self.m)
    }
}

/// `Q = P kron C`, `v = vec(U)`.
pub fn lift(p: &DMatrix<f64>, c: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<LiftedSystem> {
    let n = check_square_finite(p, "P")?;
    let m = check_square_finite(c, "C")?;
    if u.shape() != (n, m) {
        return Err(Error::InvalidInput(format!(
            "U is {}x{}, expected {n}x{m}",
            u.nrows(),
            u.ncols()
        )));
    }
    Ok(LiftedSystem {
        q: p.kronecker(c),
        v: vec_rows(u),
        n,
        m,
    })
}

/// Presents a matrix-state ensemble as a vector ensemble on `vec(X)`.
#[derive(Debug, Clone)]
pub struct LiftedEnsemble<M> {
    inner: M,
}

impl<M: MatrixSampler> LiftedEnsemble<M> {
    pub fn new(inner: M) -> Self {
        Self { inner }
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: MatrixSampler> Sampler for LiftedEnsemble<M> {
    fn dim(&self) -> usize {
        let (n, m) = self.inner.shape();
        n * m
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }

    fn draw_into(&self, s: u64, trial: u64, x: &DVector<f64>, q: &mut DMatrix<f64>, v: &mut DVector<f64>) {
        let (n, m) = self.inner.shape();
        let xm = unvec_rows(x, n, m);
        let mut p = DMatrix::zeros(n, n);
        let mut c = DMatrix::zeros(m, m);
        let mut u = DMatrix::zeros(n, m);
        self.inner.draw_into(s, trial, &xm, &mut p, &mut c, &mut u);
        q.copy_from(&p.kronecker(&c));
        v.copy_from(&vec_rows(&u));
    }
}

/// Standard deviations of the independent entrywise Gaussian perturbations in
/// the stochastic Friedkin-Johnsen model.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FjNoise {
    /// On the diagonal of `Lambda` only.
    pub sigma_lambda: f64,
    pub sigma_p: f64,
    pub sigma_c: f64,
}

/// Random `(Lambda(s), P(s), C(s))` around fixed means. Each draw is presented
/// as the affine map `X -> Lambda(s) P(s) X C(s)^T + (I - Lambda(s)) X0`.
/// Draw order within a step: diagonal of `Lambda`, then `P`, then `C`, row-major.
#[derive(Debug, Clone)]
pub struct FjEnsemble {
    lambda: DVector<f64>,
    p: DMatrix<f64>,
    c: DMatrix<f64>,
    x0: DMatrix<f64>,
    noise: FjNoise,
    streams: StreamKey,
}

impl MatrixSampler for FjEnsemble {
    fn shape(&self) -> (usize, usize) {
        self.x0.shape()
    }

    fn is_deterministic(&self) -> bool {
        self.noise == FjNoise::default()
    }

    fn draw_into(
        &self,
        s: u64,
        trial: u64,
        _x: &DMatrix<f64>,
        p: &mut DMatrix<f64>,
        c: &mut DMatrix<f64>,
        u: &mut DMatrix<f64>,
    ) {
        let n = self.p.nrows();
        let mut lambda = self.lambda.clone();
        p.copy_from(&self.p);
        c.copy_from(&self.c);
        if !self.is_deterministic() {
            let mut rng = self.streams.rng(trial, s);
            let mut diag = DMatrix::from_column_slice(n, 1, lambda.as_slice());
            add_noise(&mut diag, self.noise.sigma_lambda, &mut rng);
            lambda.copy_from(&diag.column(0));
            add_noise(p, self.noise.sigma_p, &mut rng);
            add_noise(c, self.noise.sigma_c, &mut rng);
        }
        for i in 0..n {
            for j in 0..n {
                p[(i, j)] *= lambda[i];
            }
            for j in 0..self.x0.ncols() {
                u[(i, j)] = (1.0 - lambda[i]) * self.x0[(i, j)];
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FjScenario {
    pub ensemble: FjEnsemble,
    pub x0: DMatrix<f64>,
    pub fixed_point: DMatrix<f64>,
    /// Largest real part of the spectrum of `(Lambda P) kron C`.
    pub lifted_rho_max_re: f64,
}

/// Stochastic Friedkin-Johnsen scenario started from the prejudice `X0`,
/// together with its fixed point.
pub fn fj_scenario(
    lambda: &DMatrix<f64>,
    p: &DMatrix<f64>,
    c: &DMatrix<f64>,
    x0: &DMatrix<f64>,
    noise: FjNoise,
    seed: u64,
) -> Result<FjScenario> {
    let fixed_point = fj_fixed_point(lambda, p, c, x0)?;
    for (name, v) in [
        ("sigma_lambda", noise.sigma_lambda),
        ("sigma_p", noise.sigma_p),
        ("sigma_c", noise.sigma_c),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("{name} must be finite and non-negative, got {v}")));
        }
    }
    let q = (lambda * p).kronecker(c);
    let summary = analyze(&q, default_tol(&q))?;
    if summary.rho_max_re >= 1.0 - summary.tol {
        return Err(Error::PreconditionViolated(format!(
            "lifted matrix has an eigenvalue with real part {} >= 1",
            summary.rho_max_re
        )));
    }
    Ok(FjScenario {
        ensemble: FjEnsemble {
            lambda: lambda.diagonal(),
            p: p.clone(),
            c: c.clone(),
            x0: x0.clone(),
            noise,
            streams: StreamKey::new(seed),
        },
        x0: x0.clone(),
        fixed_point,
        lifted_rho_max_re: summary.rho_max_re,
    })
}
