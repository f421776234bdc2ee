//! The SA recursion `x(s+1) = (1 - a(s)) x(s) + a(s) [P(s) x(s) + u(s)]` and
//! its matrix-state variant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensembles::{MatrixSampler, Sampler};
use crate::error::{Error, Result};
use crate::linalg::check_vector;

/// States with `||x||_inf` above this count as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSign {
    NonNegative,
    NonPositive,
}

impl GainSign {
    pub fn factor(self) -> f64 {
        match self {
            GainSign::NonNegative => 1.0,
            GainSign::NonPositive => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GainSchedule {
    /// `a(s) = sign * alpha / (s + beta)^gamma`, indexed from `s = 0`.
    PowerLaw {
        sign: GainSign,
        alpha: f64,
        beta: f64,
        gamma: f64,
    },
    /// `a(s) = 1 / (s + 1)`, so `a(0) = 1`.
    Harmonic,
    /// Explicit gains; must cover every simulated step.
    Custom { values: Vec<f64> },
}

impl GainSchedule {
    pub fn power_law(sign: GainSign, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let g = GainSchedule::PowerLaw {
            sign,
            alpha,
            beta,
            gamma,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GainSchedule::PowerLaw {
                alpha, beta, gamma, ..
            } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
                }
                if !(beta.is_finite() && *beta > 0.0) {
                    return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
                }
                if !(*gamma > 0.5 && *gamma <= 1.0) {
                    return Err(Error::InvalidInput(format!("gamma must lie in (1/2, 1], got {gamma}")));
                }
                Ok(())
            }
            GainSchedule::Harmonic => Ok(()),
            GainSchedule::Custom { values } => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("custom gains must be finite".into()));
                }
                Ok(())
            }
        }
    }

    /// Gain used for the transition from step `s` to `s + 1`.
    pub fn gain(&self, s: u64) -> f64 {
        match self {
            GainSchedule::PowerLaw {
                sign,
                alpha,
                beta,
                gamma,
            } => sign.factor() * alpha / (s as f64 + beta).powf(*gamma),
            GainSchedule::Harmonic => 1.0 / (s as f64 + 1.0),
            GainSchedule::Custom { values } => values[s as usize],
        }
    }

    /// Sign class, or `None` for a custom sequence with mixed signs.
    pub fn sign(&self) -> Option<GainSign> {
        match self {
            GainSchedule::PowerLaw { sign, .. } => Some(*sign),
            GainSchedule::Harmonic => Some(GainSign::NonNegative),
            GainSchedule::Custom { values } => {
                if values.iter().all(|&v| v >= 0.0) {
                    Some(GainSign::NonNegative)
                } else if values.iter().all(|&v| v <= 0.0) {
                    Some(GainSign::NonPositive)
                } else {
                    None
                }
            }
        }
    }

    /// Exponent `gamma` of a power law; the harmonic schedule counts as `gamma = 1`.
    pub fn gamma(&self) -> Option<f64> {
        match self {
            GainSchedule::PowerLaw { gamma, .. } => Some(*gamma),
            GainSchedule::Harmonic => Some(1.0),
            GainSchedule::Custom { .. } => None,
        }
    }

    fn check_horizon(&self, steps: u64) -> Result<()> {
        if let GainSchedule::Custom { values } = self {
            if (values.len() as u64) < steps {
                return Err(Error::InvalidInput(format!(
                    "custom schedule has {} gains but {steps} steps were requested",
                    values.len()
                )));
            }
        }
        Ok(())
    }
}

fn exceeds(x: &[f64]) -> bool {
    x.iter().any(|v| v.is_nan() || v.abs() > DIVERGENCE_THRESHOLD)
}

/// `out = (1 - a) x + a (P x + u)`, using `scratch` for `P x + u`.
fn step_into(
    x: &DVector<f64>,
    a: f64,
    p: &DMatrix<f64>,
    u: &DVector<f64>,
    scratch: &mut DVector<f64>,
    out: &mut DVector<f64>,
) {
    scratch.gemv(1.0, p, x, 0.0);
    *scratch += u;
    for i in 0..x.len() {
        out[i] = (1.0 - a) * x[i] + a * scratch[i];
    }
}

/// One SA step. Fails with `DivergenceDetected` if the result is not finite.
pub fn step(x: &DVector<f64>, a: f64, p: &DMatrix<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    let n = x.len();
    if p.shape() != (n, n) || u.len() != n {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: x has {n} entries, P is {}x{}, u has {}",
            p.nrows(),
            p.ncols(),
            u.len()
        )));
    }
    let mut scratch = DVector::zeros(n);
    let mut out = DVector::zeros(n);
    step_into(x, a, p, u, &mut scratch, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::DivergenceDetected { step: None });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub steps_recorded: Vec<u64>,
    /// Step at which `||x||_inf` first exceeded [`DIVERGENCE_THRESHOLD`].
    pub diverged_at: Option<u64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory always records x(0)")
    }

    pub fn state_at(&self, s: u64) -> Option<&DVector<f64>> {
        self.steps_recorded
            .binary_search(&s)
            .ok()
            .map(|k| &self.states[k])
    }
}

/// Iterate for `steps` steps, recording `x(0)`, every multiple of
/// `record_every`, and `x(steps)`.
pub fn run<S: Sampler + ?Sized>(
    x0: &DVector<f64>,
    schedule: &GainSchedule,
    ensemble: &S,
    steps: u64,
    record_every: u64,
    trial: u64,
) -> Result<Trajectory> {
    if steps == 0 || record_every == 0 {
        return Err(Error::InvalidInput("steps and record_every must be at least 1".into()));
    }
    let mut checkpoints: Vec<u64> = (0..=steps).step_by(record_every as usize).collect();
    if checkpoints.last() != Some(&steps) {
        checkpoints.push(steps);
    }
    run_at(x0, schedule, ensemble, &checkpoints, trial)
}

/// Iterate up to the largest checkpoint, recording `x(0)` and every listed step.
pub fn run_at<S: Sampler + ?Sized>(
    x0: &DVector<f64>,
    schedule: &GainSchedule,
    ensemble: &S,
    checkpoints: &[u64],
    trial: u64,
) -> Result<Trajectory> {
    let n = ensemble.dim();
    check_vector(x0, n, "x0")?;
    schedule.validate()?;
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("checkpoints must be strictly increasing".into()));
    }
    let horizon = checkpoints.last().copied().unwrap_or(0);
    schedule.check_horizon(horizon)?;

    let mut states = vec![x0.clone()];
    let mut steps_recorded = vec![0];
    let mut next = checkpoints.iter().copied().skip_while(|&c| c == 0).peekable();

    let mut x = x0.clone();
    let mut out = DVector::zeros(n);
    let mut scratch = DVector::zeros(n);
    let mut p = DMatrix::zeros(n, n);
    let mut u = DVector::zeros(n);
    for s in 0..horizon {
        ensemble.draw_into(s, trial, &x, &mut p, &mut u);
        step_into(&x, schedule.gain(s), &p, &u, &mut scratch, &mut out);
        std::mem::swap(&mut x, &mut out);
        if exceeds(x.as_slice()) {
            return Ok(Trajectory {
                states,
                steps_recorded,
                diverged_at: Some(s + 1),
            });
        }
        if next.peek() == Some(&(s + 1)) {
            next.next();
            states.push(x.clone());
            steps_recorded.push(s + 1);
        }
    }
    Ok(Trajectory {
        states,
        steps_recorded,
        diverged_at: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTrajectory {
    pub states: Vec<DMatrix<f64>>,
    pub steps_recorded: Vec<u64>,
    pub diverged_at: Option<u64>,
}

/// Iterate `X(s+1) = (1 - a) X(s) + a [P(s) X(s) C(s)^T + U(s)]`.
pub fn run_matrix<M: MatrixSampler + ?Sized>(
    x0: &DMatrix<f64>,
    schedule: &GainSchedule,
    ensemble: &M,
    steps: u64,
    record_every: u64,
    trial: u64,
) -> Result<MatrixTrajectory> {
    let (n, m) = ensemble.shape();
    if x0.shape() != (n, m) {
        return Err(Error::InvalidInput(format!(
            "X0 is {}x{}, ensemble expects {n}x{m}",
            x0.nrows(),
            x0.ncols()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("X0 has non-finite entries".into()));
    }
    if steps == 0 || record_every == 0 {
        return Err(Error::InvalidInput("steps and record_every must be at least 1".into()));
    }
    schedule.validate()?;
    schedule.check_horizon(steps)?;

    let mut states = vec![x0.clone()];
    let mut steps_recorded = vec![0];
    let mut x = x0.clone();
    let mut p = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(m, m);
    let mut u = DMatrix::zeros(n, m);
    for s in 0..steps {
        ensemble.draw_into(s, trial, &x, &mut p, &mut c, &mut u);
        let a = schedule.gain(s);
        let mapped = &p * &x * c.transpose() + &u;
        x = x * (1.0 - a) + mapped * a;
        if exceeds(x.as_slice()) {
            return Ok(MatrixTrajectory {
                states,
                steps_recorded,
                diverged_at: Some(s + 1),
            });
        }
        if (s + 1) % record_every == 0 || s + 1 == steps {
            states.push(x.clone());
            steps_recorded.push(s + 1);
        }
    }
    Ok(MatrixTrajectory {
        states,
        steps_recorded,
        diverged_at: None,
    })
}
