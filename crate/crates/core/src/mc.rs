//! Monte Carlo estimation over independent trials.
//!
//! Trial `k` always uses RNG stream `k`, and per-trial results are reduced in
//! trial order, so results are bit-identical across thread counts and between
//! [`Execution::Parallel`] and [`Execution::Sequential`].

use nalgebra::DVector;
use serde::Serialize;

use crate::engine::{run_at, GainSchedule, Trajectory};
use crate::ensembles::Sampler;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::linalg::check_vector;
use crate::spectral::Partition;

#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// Known limit, e.g. `(I - P)^-1 u`.
    Fixed(DVector<f64>),
    /// Each trial's own state at the horizon. Biased low for checkpoints near
    /// the horizon, so rate fits should stop well short of it.
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Fixed,
    Tail,
}

#[derive(Debug, Clone)]
pub struct Scenario<S> {
    pub x0: DVector<f64>,
    pub schedule: GainSchedule,
    pub ensemble: S,
    /// Horizon `S_max`.
    pub steps: u64,
    pub reference: Reference,
    /// Groups for the pairwise-gap and group-mean statistics.
    pub partition: Option<Partition>,
}

impl<S: Sampler> Scenario<S> {
    fn validate(&self) -> Result<()> {
        let n = self.ensemble.dim();
        check_vector(&self.x0, n, "x0")?;
        self.schedule.validate()?;
        if self.steps == 0 {
            return Err(Error::InvalidInput("steps must be at least 1".into()));
        }
        if let Reference::Fixed(r) = &self.reference {
            check_vector(r, n, "reference")?;
        }
        if let Some(p) = &self.partition {
            if p.n() != n {
                return Err(Error::InvalidInput(format!(
                    "partition covers {} agents, state has {n}",
                    p.n()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error of the mean; zero when fewer than two samples.
    pub stderr: f64,
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn estimate(&self) -> Estimate {
        let stderr = if self.count > 1 {
            (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean: self.mean,
            stderr,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryStats {
    pub checkpoints: Vec<u64>,
    /// `E ||x(s) - reference||^2`.
    pub mse: Vec<Estimate>,
    /// Max over same-group agent pairs of `E |x_i(s) - x_j(s)|`.
    pub pairwise_gap: Option<Vec<Estimate>>,
    /// `[checkpoint][group]`: mean over trials of the group average.
    pub group_means: Option<Vec<Vec<Estimate>>>,
    pub state_mean: Vec<DVector<f64>>,
    pub state_stderr: Vec<DVector<f64>>,
    pub n_trials: usize,
    /// Trials that hit the divergence guard; excluded from every statistic.
    pub diverged_trials: usize,
    pub reference: ReferenceKind,
}

impl TrajectoryStats {
    pub fn completed_trials(&self) -> usize {
        self.n_trials - self.diverged_trials
    }
}

/// Roughly `per_octave` log-spaced steps per doubling in `[1, max]`, always
/// including `max`.
pub fn geometric_checkpoints(max: u64, per_octave: u32) -> Vec<u64> {
    let mut out = Vec::new();
    if max == 0 {
        return out;
    }
    let per_octave = per_octave.max(1) as f64;
    let octaves = (max as f64).log2();
    let count = (octaves * per_octave).ceil() as u64;
    for k in 0..=count {
        let s = 2f64.powf(k as f64 / per_octave).round() as u64;
        let s = s.clamp(1, max);
        if out.last() != Some(&s) {
            out.push(s);
        }
    }
    if out.last() != Some(&max) {
        out.push(max);
    }
    out
}

fn sorted_unique(mut v: Vec<u64>) -> Vec<u64> {
    v.sort_unstable();
    v.dedup();
    v
}

fn check_trials(n_trials: usize) -> Result<()> {
    if n_trials < 2 {
        return Err(Error::InvalidInput("at least 2 trials are needed for standard errors".into()));
    }
    Ok(())
}

fn run_trials<S: Sampler>(scenario: &Scenario<S>, record: &[u64], n_trials: usize, exec: Execution) -> Result<Vec<Trajectory>> {
    let results = map_indexed(n_trials, exec, |k| {
        run_at(&scenario.x0, &scenario.schedule, &scenario.ensemble, record, k as u64)
    });
    results.into_iter().collect()
}

/// Run `n_trials` independent trials and summarize them at `checkpoints`
/// (the horizon is always added).
pub fn estimate<S: Sampler>(
    scenario: &Scenario<S>,
    checkpoints: &[u64],
    n_trials: usize,
    exec: Execution,
) -> Result<TrajectoryStats> {
    scenario.validate()?;
    check_trials(n_trials)?;
    if checkpoints.iter().any(|&c| c > scenario.steps) {
        return Err(Error::InvalidInput("checkpoint beyond the horizon".into()));
    }
    let record = stats_steps(checkpoints, scenario.steps);
    let trajectories = run_trials(scenario, &record, n_trials, exec)?;
    reduce_stats(scenario, &record, &trajectories)
}

fn stats_steps(checkpoints: &[u64], horizon: u64) -> Vec<u64> {
    let mut record = checkpoints.to_vec();
    record.push(horizon);
    sorted_unique(record)
}

fn reduce_stats<S: Sampler>(scenario: &Scenario<S>, record: &[u64], trajectories: &[Trajectory]) -> Result<TrajectoryStats> {
    let n_trials = trajectories.len();
    let n = scenario.ensemble.dim();
    let k = record.len();
    let pairs: Vec<(usize, usize)> = scenario
        .partition
        .iter()
        .flat_map(|p| p.groups().iter())
        .flat_map(|g| {
            g.iter()
                .enumerate()
                .flat_map(move |(a, &i)| g[a + 1..].iter().map(move |&j| (i, j)))
        })
        .collect();
    let n_groups = scenario.partition.as_ref().map_or(0, |p| p.len());

    let mut mse = vec![Accumulator::default(); k];
    let mut gaps = vec![vec![Accumulator::default(); pairs.len()]; k];
    let mut groups = vec![vec![Accumulator::default(); n_groups]; k];
    let mut state = vec![vec![Accumulator::default(); n]; k];
    let mut diverged = 0;
    for t in trajectories {
        if t.diverged_at.is_some() {
            diverged += 1;
            continue;
        }
        let reference = match &scenario.reference {
            Reference::Fixed(r) => r,
            Reference::Tail => t.final_state(),
        };
        // record[0] may be 0, which run_at always stores first
        for (c, &s) in record.iter().enumerate() {
            let x = t.state_at(s).expect("recorded checkpoint");
            mse[c].push((x - reference).norm_squared());
            for (g, &(i, j)) in pairs.iter().enumerate() {
                gaps[c][g].push((x[i] - x[j]).abs());
            }
            if let Some(p) = &scenario.partition {
                for (g, members) in p.groups().iter().enumerate() {
                    let avg = members.iter().map(|&i| x[i]).sum::<f64>() / members.len() as f64;
                    groups[c][g].push(avg);
                }
            }
            for i in 0..n {
                state[c][i].push(x[i]);
            }
        }
    }
    if diverged == n_trials {
        return Err(Error::AllDiverged { n_trials });
    }

    let pairwise_gap = scenario.partition.as_ref().map(|_| {
        gaps.iter()
            .map(|row| {
                row.iter()
                    .map(Accumulator::estimate)
                    .fold(Estimate { mean: 0.0, stderr: 0.0 }, |best, e| if e.mean > best.mean { e } else { best })
            })
            .collect()
    });
    let group_means = scenario
        .partition
        .as_ref()
        .map(|_| groups.iter().map(|row| row.iter().map(Accumulator::estimate).collect()).collect());
    let state_mean = state
        .iter()
        .map(|row| DVector::from_iterator(n, row.iter().map(|a| a.estimate().mean)))
        .collect();
    let state_stderr = state
        .iter()
        .map(|row| DVector::from_iterator(n, row.iter().map(|a| a.estimate().stderr)))
        .collect();

    Ok(TrajectoryStats {
        checkpoints: record.to_vec(),
        mse: mse.iter().map(Accumulator::estimate).collect(),
        pairwise_gap,
        group_means,
        state_mean,
        state_stderr,
        n_trials,
        diverged_trials: diverged,
        reference: match scenario.reference {
            Reference::Fixed(_) => ReferenceKind::Fixed,
            Reference::Tail => ReferenceKind::Tail,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub exponent: f64,
    pub stderr: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "{} points, need at least 5",
            points.len()
        )));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::InsufficientData("power-law fit needs positive finite values".into()));
    }
    let k = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientData("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let sse = (syy - slope * sxy).max(0.0);
    let stderr = (sse / (k - 2.0) / sxx).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(RateFit {
        exponent: slope,
        stderr,
        r_squared,
        points: points.len(),
    })
}

/// Log-log fit of the MSE over checkpoints in `[lo, hi]`.
pub fn fit_rate(stats: &TrajectoryStats, window: (u64, u64)) -> Result<RateFit> {
    let points: Vec<(f64, f64)> = stats
        .checkpoints
        .iter()
        .zip(&stats.mse)
        .filter(|(&s, _)| s >= window.0.max(1) && s <= window.1)
        .map(|(&s, e)| (s as f64, e.mean))
        .collect();
    fit_power_law(&points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapEstimate {
    pub s: u64,
    pub s2: u64,
    /// `E ||x(s2) - x(s)||^2` over non-diverged trials.
    pub gap: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CauchyGaps {
    pub gaps: Vec<GapEstimate>,
    pub n_trials: usize,
    pub diverged_trials: usize,
}

/// `E ||x(s2_k) - x(s_k)||^2` for each pair.
pub fn cauchy_gap<S: Sampler>(
    scenario: &Scenario<S>,
    s_list: &[u64],
    s2_list: &[u64],
    n_trials: usize,
    exec: Execution,
) -> Result<CauchyGaps> {
    scenario.validate()?;
    check_trials(n_trials)?;
    check_pairs(scenario, s_list, s2_list)?;
    let record = sorted_unique(s_list.iter().chain(s2_list).copied().collect());
    let trajectories = run_trials(scenario, &record, n_trials, exec)?;
    Ok(reduce_gaps(s_list, s2_list, &trajectories))
}

fn check_pairs<S>(scenario: &Scenario<S>, s_list: &[u64], s2_list: &[u64]) -> Result<()> {
    if s_list.len() != s2_list.len() || s_list.is_empty() {
        return Err(Error::InvalidInput("need equally many, and at least one, s and s2 values".into()));
    }
    if s_list.iter().chain(s2_list).any(|&s| s > scenario.steps) {
        return Err(Error::InvalidInput("gap step beyond the horizon".into()));
    }
    Ok(())
}

fn reduce_gaps(s_list: &[u64], s2_list: &[u64], trajectories: &[Trajectory]) -> CauchyGaps {
    let mut acc = vec![Accumulator::default(); s_list.len()];
    let mut diverged = 0;
    for t in trajectories {
        if t.diverged_at.is_some() {
            diverged += 1;
            continue;
        }
        for (k, (&s, &s2)) in s_list.iter().zip(s2_list).enumerate() {
            let a = t.state_at(s).expect("recorded");
            let b = t.state_at(s2).expect("recorded");
            acc[k].push((b - a).norm_squared());
        }
    }
    CauchyGaps {
        gaps: s_list
            .iter()
            .zip(s2_list)
            .zip(&acc)
            .map(|((&s, &s2), a)| GapEstimate {
                s,
                s2,
                gap: a.estimate(),
            })
            .collect(),
        n_trials: trajectories.len(),
        diverged_trials: diverged,
    }
}

/// [`estimate`] and [`cauchy_gap`] from a single set of trials. When every
/// trial diverges the gaps are still returned, with `Err(AllDiverged)` in
/// place of the statistics.
pub fn estimate_with_gaps<S: Sampler>(
    scenario: &Scenario<S>,
    checkpoints: &[u64],
    (s_list, s2_list): (&[u64], &[u64]),
    n_trials: usize,
    exec: Execution,
) -> Result<(Result<TrajectoryStats>, CauchyGaps)> {
    scenario.validate()?;
    check_trials(n_trials)?;
    check_pairs(scenario, s_list, s2_list)?;
    if checkpoints.iter().any(|&c| c > scenario.steps) {
        return Err(Error::InvalidInput("checkpoint beyond the horizon".into()));
    }
    let stats_record = stats_steps(checkpoints, scenario.steps);
    let record = sorted_unique(stats_record.iter().chain(s_list).chain(s2_list).copied().collect());
    let trajectories = run_trials(scenario, &record, n_trials, exec)?;
    let stats = reduce_stats(scenario, &stats_record, &trajectories);
    Ok((stats, reduce_gaps(s_list, s2_list, &trajectories)))
}

/// Doubling pairs `(s, 2s)` with `2s` running over the last `octaves + 1`
/// powers of two up to `horizon`, earliest first.
pub fn doubling_pairs(horizon: u64, octaves: u32) -> (Vec<u64>, Vec<u64>) {
    let mut s2 = Vec::new();
    let mut h = horizon;
    for _ in 0..=octaves {
        if h < 2 {
            break;
        }
        s2.push(h);
        h /= 2;
    }
    s2.reverse();
    let s = s2.iter().map(|v| v / 2).collect();
    (s, s2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedBehaviour {
    Converging,
    NotConverging,
}

/// Gap ratio between the last and first doubling pair below which the run
/// counts as converging.
pub const CONVERGING_RATIO: f64 = 0.25;

/// Empirical verdict from doubling-pair gaps: any diverged trial, or gaps that
/// fail to shrink by [`CONVERGING_RATIO`], mean not converging. Gaps that are
/// negligible against `scale` count as converged.
pub fn observe_behaviour(gaps: &CauchyGaps, scale: f64) -> ObservedBehaviour {
    if gaps.diverged_trials > 0 {
        return ObservedBehaviour::NotConverging;
    }
    let first = gaps.gaps.first().map_or(0.0, |g| g.gap.mean);
    let last = gaps.gaps.last().map_or(0.0, |g| g.gap.mean);
    let floor = 1e-20 * (1.0 + scale);
    if last <= floor || (first > 0.0 && last / first < CONVERGING_RATIO) {
        ObservedBehaviour::Converging
    } else {
        ObservedBehaviour::NotConverging
    }
}
