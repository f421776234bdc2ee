//! Seeded generators of random `(P(s), u(s))` pairs with fixed conditional means.
//!
//! Randomness is counter-based: draw `s` of trial `trial` uses a ChaCha8
//! generator keyed by the ensemble seed, on stream `trial`, positioned at word
//! `s << 32`. Any `(seed, s, trial)` therefore maps to the same numbers no
//! matter which thread or in which order it is evaluated.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_square_finite, check_vector};

/// Source of independent per-(trial, step) random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    key: [u8; 32],
    seed: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self {
            key: ChaCha8Rng::seed_from_u64(seed).get_seed(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for step `s` of trial `trial`.
    pub fn rng(&self, trial: u64, s: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(trial);
        rng.set_word_pos(u128::from(s) << 32);
        rng
    }
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Anything that produces the random affine map of one SA step.
pub trait Sampler: Sync {
    fn dim(&self) -> usize;

    /// Overwrite `p` (n x n) and `u` (n) with the draw for step `s` of `trial`
    /// at current state `x`. Must be a pure function of its arguments.
    fn draw_into(&self, s: u64, trial: u64, x: &DVector<f64>, p: &mut DMatrix<f64>, u: &mut DVector<f64>);

    fn draw(&self, s: u64, trial: u64, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let mut p = DMatrix::zeros(n, n);
        let mut u = DVector::zeros(n);
        self.draw_into(s, trial, x, &mut p, &mut u);
        (p, u)
    }

    /// Whether every draw equals the mean.
    fn is_deterministic(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    /// Independent zero-mean Gaussian perturbations per entry of `P` and `u`.
    IidEntrywise { sigma_p: f64, sigma_u: f64 },
    /// `u_i(s) = sum_j P_ij(s) * c * x_j * w_ji(s)` with `w ~ N(0, w_variance)`.
    /// `P(s)` itself gets entrywise noise of size `sigma_p` (zero allowed).
    StateDependent {
        noise_scale: f64,
        w_variance: f64,
        #[serde(default)]
        sigma_p: f64,
    },
}

impl NoiseKind {
    fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| {
            Err(Error::InvalidInput(format!(
                "{name} must be finite and non-negative, got {v}"
            )))
        };
        match *self {
            NoiseKind::None => Ok(()),
            NoiseKind::IidEntrywise { sigma_p, sigma_u } => {
                for (name, v) in [("sigma_p", sigma_p), ("sigma_u", sigma_u)] {
                    if !(v >= 0.0 && v.is_finite()) {
                        return bad(name, v);
                    }
                }
                Ok(())
            }
            NoiseKind::StateDependent {
                noise_scale,
                w_variance,
                sigma_p,
            } => {
                for (name, v) in [("w_variance", w_variance), ("sigma_p", sigma_p)] {
                    if !(v >= 0.0 && v.is_finite()) {
                        return bad(name, v);
                    }
                }
                if !noise_scale.is_finite() {
                    return Err(Error::InvalidInput("noise_scale must be finite".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatrixEnsemble {
    mean_p: DMatrix<f64>,
    mean_u: DVector<f64>,
    noise: NoiseKind,
    streams: StreamKey,
}

impl MatrixEnsemble {
    pub fn new(mean_p: DMatrix<f64>, mean_u: DVector<f64>, noise: NoiseKind, seed: u64) -> Result<Self> {
        let n = check_square_finite(&mean_p, "mean P")?;
        check_vector(&mean_u, n, "mean u")?;
        noise.validate()?;
        if matches!(noise, NoiseKind::StateDependent { .. }) && mean_u.iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidInput(
                "state-dependent noise produces a zero-mean input; mean u must be zero".into(),
            ));
        }
        Ok(Self {
            mean_p,
            mean_u,
            noise,
            streams: StreamKey::new(seed),
        })
    }

    /// Noise-free ensemble returning `(P, u)` at every step.
    pub fn deterministic(mean_p: DMatrix<f64>, mean_u: DVector<f64>) -> Result<Self> {
        Self::new(mean_p, mean_u, NoiseKind::None, 0)
    }

    pub fn mean_p(&self) -> &DMatrix<f64> {
        &self.mean_p
    }

    pub fn mean_u(&self) -> &DVector<f64> {
        &self.mean_u
    }

    pub fn noise(&self) -> NoiseKind {
        self.noise
    }

    pub fn seed(&self) -> u64 {
        self.streams.seed()
    }

    /// Same ensemble, different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            streams: StreamKey::new(seed),
            ..self.clone()
        }
    }
}

impl Sampler for MatrixEnsemble {
    fn dim(&self) -> usize {
        self.mean_u.len()
    }

    fn is_deterministic(&self) -> bool {
        match self.noise {
            NoiseKind::None => true,
            NoiseKind::IidEntrywise { sigma_p, sigma_u } => sigma_p == 0.0 && sigma_u == 0.0,
            NoiseKind::StateDependent {
                noise_scale,
                w_variance,
                sigma_p,
            } => sigma_p == 0.0 && (noise_scale == 0.0 || w_variance == 0.0),
        }
    }

    fn draw_into(&self, s: u64, trial: u64, x: &DVector<f64>, p: &mut DMatrix<f64>, u: &mut DVector<f64>) {
        p.copy_from(&self.mean_p);
        u.copy_from(&self.mean_u);
        let n = self.dim();
        match self.noise {
            NoiseKind::None => {}
            NoiseKind::IidEntrywise { sigma_p, sigma_u } => {
                let mut rng = self.streams.rng(trial, s);
                if sigma_p > 0.0 {
                    for i in 0..n {
                        for j in 0..n {
                            p[(i, j)] += sigma_p * gaussian(&mut rng);
                        }
                    }
                }
                if sigma_u > 0.0 {
                    for i in 0..n {
                        u[i] += sigma_u * gaussian(&mut rng);
                    }
                }
            }
            NoiseKind::StateDependent {
                noise_scale,
                w_variance,
                sigma_p,
            } => {
                let mut rng = self.streams.rng(trial, s);
                if sigma_p > 0.0 {
                    for i in 0..n {
                        for j in 0..n {
                            p[(i, j)] += sigma_p * gaussian(&mut rng);
                        }
                    }
                }
                let w_sd = w_variance.sqrt();
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        // w_ji: noise on the message from j to i
                        let w = w_sd * gaussian(&mut rng);
                        acc += p[(i, j)] * noise_scale * x[j] * w;
                    }
                    u[i] = acc;
                }
            }
        }
    }
}

/// Producer of the random triple `(P(s), C(s), U(s))` driving a matrix-valued state
/// `X` of shape `n x m`.
pub trait MatrixSampler: Sync {
    /// `(n, m)`.
    fn shape(&self) -> (usize, usize);

    /// Overwrite `p` (n x n), `c` (m x m) and `u` (n x m) with the draw for
    /// step `s` of `trial` at current state `x`.
    fn draw_into(
        &self,
        s: u64,
        trial: u64,
        x: &DMatrix<f64>,
        p: &mut DMatrix<f64>,
        c: &mut DMatrix<f64>,
        u: &mut DMatrix<f64>,
    );

    fn is_deterministic(&self) -> bool;
}

/// Means of `P`, `C`, `U` plus independent entrywise Gaussian noise on each.
/// Draw order within a step: `P`, then `C`, then `U`, each row-major.
#[derive(Debug, Clone)]
pub struct MatrixStateEnsemble {
    mean_p: DMatrix<f64>,
    mean_c: DMatrix<f64>,
    mean_u: DMatrix<f64>,
    sigma_p: f64,
    sigma_c: f64,
    sigma_u: f64,
    streams: StreamKey,
}

impl MatrixStateEnsemble {
    pub fn new(
        mean_p: DMatrix<f64>,
        mean_c: DMatrix<f64>,
        mean_u: DMatrix<f64>,
        (sigma_p, sigma_c, sigma_u): (f64, f64, f64),
        seed: u64,
    ) -> Result<Self> {
        let n = check_square_finite(&mean_p, "mean P")?;
        let m = check_square_finite(&mean_c, "mean C")?;
        if mean_u.shape() != (n, m) || mean_u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("mean U must be a finite {n}x{m} matrix")));
        }
        for (name, v) in [("sigma_p", sigma_p), ("sigma_c", sigma_c), ("sigma_u", sigma_u)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(Self {
            mean_p,
            mean_c,
            mean_u,
            sigma_p,
            sigma_c,
            sigma_u,
            streams: StreamKey::new(seed),
        })
    }
}

pub(crate) fn add_noise(m: &mut DMatrix<f64>, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                m[(i, j)] += sigma * gaussian(rng);
            }
        }
    }
}

impl MatrixSampler for MatrixStateEnsemble {
    fn shape(&self) -> (usize, usize) {
        self.mean_u.shape()
    }

    fn is_deterministic(&self) -> bool {
        self.sigma_p == 0.0 && self.sigma_c == 0.0 && self.sigma_u == 0.0
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
        p.copy_from(&self.mean_p);
        c.copy_from(&self.mean_c);
        u.copy_from(&self.mean_u);
        if self.is_deterministic() {
            return;
        }
        let mut rng = self.streams.rng(trial, s);
        add_noise(p, self.sigma_p, &mut rng);
        add_noise(c, self.sigma_c, &mut rng);
        add_noise(u, self.sigma_u, &mut rng);
    }
}

/// Monte Carlo estimates of the first two moments of an ensemble at a fixed state.
#[derive(Debug, Clone)]
pub struct EmpiricalMoments {
    pub n_samples: usize,
    pub mean_p: DMatrix<f64>,
    pub mean_p_stderr: DMatrix<f64>,
    pub mean_u: DVector<f64>,
    pub mean_u_stderr: DVector<f64>,
    /// Entrywise sample variance of `u(s)`.
    pub u_variance: DVector<f64>,
    /// Estimated `E ||P(s)||_F^2`.
    pub p_second_moment: f64,
    /// Estimated `E ||u(s)||_2^2`.
    pub u_second_moment: f64,
}

impl EmpiricalMoments {
    /// Largest `|mean_hat - mean| / stderr` over all entries of `P` and `u`;
    /// entries with zero standard error must match exactly.
    pub fn max_z_score(&self, mean_p: &DMatrix<f64>, mean_u: &DVector<f64>) -> f64 {
        let z = |hat: f64, mean: f64, se: f64| {
            let d = (hat - mean).abs();
            if se > 0.0 {
                d / se
            } else if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        };
        let zp = (0..mean_p.len())
            .map(|k| z(self.mean_p[k], mean_p[k], self.mean_p_stderr[k]))
            .fold(0.0, f64::max);
        let zu = (0..mean_u.len())
            .map(|k| z(self.mean_u[k], mean_u[k], self.mean_u_stderr[k]))
            .fold(0.0, f64::max);
        zp.max(zu)
    }
}

pub fn empirical_moments<S: Sampler + ?Sized>(ensemble: &S, x: &DVector<f64>, n_samples: usize) -> Result<EmpiricalMoments> {
    let n = ensemble.dim();
    check_vector(x, n, "x")?;
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    let mut sum_p = DMatrix::zeros(n, n);
    let mut sq_p = DMatrix::zeros(n, n);
    let mut sum_u = DVector::zeros(n);
    let mut sq_u = DVector::zeros(n);
    let mut p_second = 0.0;
    let mut u_second = 0.0;
    let mut p = DMatrix::zeros(n, n);
    let mut u = DVector::zeros(n);
    for k in 0..n_samples {
        ensemble.draw_into(k as u64, 0, x, &mut p, &mut u);
        sum_p += &p;
        sq_p += p.component_mul(&p);
        sum_u += &u;
        sq_u += u.component_mul(&u);
        p_second += p.norm_squared();
        u_second += u.norm_squared();
    }
    let count = n_samples as f64;
    let mean_p = &sum_p / count;
    let mean_u = &sum_u / count;
    let var = |sum: f64, sq: f64| {
        if n_samples > 1 {
            ((sq - sum * sum / count) / (count - 1.0)).max(0.0)
        } else {
            0.0
        }
    };
    let mean_p_stderr = DMatrix::from_fn(n, n, |i, j| (var(sum_p[(i, j)], sq_p[(i, j)]) / count).sqrt());
    let u_variance = DVector::from_fn(n, |i, _| var(sum_u[i], sq_u[i]));
    let mean_u_stderr = u_variance.map(|v| (v / count).sqrt());
    Ok(EmpiricalMoments {
        n_samples,
        mean_p,
        mean_p_stderr,
        mean_u,
        mean_u_stderr,
        u_variance,
        p_second_moment: p_second / count,
        u_second_moment: u_second / count,
    })
}
