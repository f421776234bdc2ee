//! The `simulate` command: Monte Carlo runs and their cross-check against the
//! classifier.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use linsa::mc::{doubling_pairs, estimate_with_gaps, geometric_checkpoints, observe_behaviour, CauchyGaps, ObservedBehaviour, RateFit};
use linsa::{fit_rate, run_at, Execution, LiftedEnsemble, LimitPrediction, Reference, Sampler, TrajectoryStats};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{ReferenceChoice, Scenario, System};
use crate::report::{entries, Analysis, SCHEMA_VERSION};
use crate::Failure;

pub const STATS_FORMAT: &str = "# linsa stats v1: means over non-diverged trials, *_stderr = standard error of the mean";
pub const TRAJECTORY_FORMAT: &str = "# linsa trajectory v1: trial 0 state at the recorded steps";

/// Largest distance between fitted and predicted MSE exponents counted as agreement.
pub const RATE_TOLERANCE: f64 = 0.3;

/// Within-group gap, as a fraction of the initial spread, counted as consensus.
pub const GAP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct VerdictSummary {
    pub regime: String,
    pub applicable_result: linsa::ApplicableResult,
    pub converges: bool,
    pub borderline: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitCheck {
    pub predicted_mean: Vec<f64>,
    pub final_mean: Vec<f64>,
    pub final_stderr: Vec<f64>,
    pub max_abs_error: f64,
    /// `None` when every trial ends in the same state.
    pub max_abs_z: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateCheck {
    pub predicted_exponent: Option<f64>,
    pub window: [u64; 2],
    pub fitted: Option<RateFit>,
    pub fit_error: Option<String>,
    pub agrees: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupCheck {
    pub predicted_reached: Option<bool>,
    pub initial_spread: f64,
    pub final_within_gap: f64,
    pub final_within_gap_stderr: f64,
    pub final_group_means: Vec<f64>,
    /// Smallest distance between two final group means; `None` for one group.
    pub min_between_separation: Option<f64>,
    pub observed_reached: bool,
    pub agrees: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapPoint {
    pub s: u64,
    pub s2: u64,
    pub gap: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CauchyCheck {
    pub pairs: Vec<GapPoint>,
    pub observed: ObservedBehaviour,
    pub agrees: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimSummary {
    pub schema_version: u32,
    pub name: Option<String>,
    pub seed: u64,
    pub steps: u64,
    pub n_trials: usize,
    pub diverged_trials: usize,
    pub all_diverged: bool,
    pub reference: &'static str,
    pub verdict: VerdictSummary,
    pub limit: Option<LimitCheck>,
    pub rate: Option<RateCheck>,
    pub group: Option<GroupCheck>,
    pub cauchy: CauchyCheck,
    /// Convergent verdict with converging runs, or divergent verdict with
    /// non-converging runs.
    pub consistent: bool,
}

pub fn simulate(sc: &Scenario, analysis: &Analysis, out: &Path) -> Result<SimSummary, Failure> {
    match &sc.system {
        System::Vector { ensemble, .. } => run_with(sc, analysis, ensemble.clone(), out),
        System::Fj { scenario, .. } => run_with(sc, analysis, LiftedEnsemble::new(scenario.ensemble.clone()), out),
    }
}

fn run_with<S: Sampler>(sc: &Scenario, analysis: &Analysis, ensemble: S, out: &Path) -> Result<SimSummary, Failure> {
    let run = &sc.config.run;
    let x0 = sc.system.x0();
    let predicted_mean = analysis.expected_mean(&x0);
    let reference = match (run.reference, &analysis.verdict.expected_limit) {
        (ReferenceChoice::Auto, Some(LimitPrediction::Deterministic { limit })) => Reference::Fixed(limit.clone()),
        (ReferenceChoice::Auto | ReferenceChoice::Tail, _) => Reference::Tail,
        (ReferenceChoice::Predicted, _) => match &predicted_mean {
            Some(m) => Reference::Fixed(m.clone()),
            None => {
                return Err(Failure::Config(
                    "field `run.reference`: no predicted limit for a divergent verdict".into(),
                ))
            }
        },
    };
    let tail = reference == Reference::Tail;
    let scenario = linsa::Scenario {
        x0: x0.clone(),
        schedule: sc.config.gain.clone(),
        ensemble,
        steps: run.steps,
        reference,
        partition: sc.partition.clone(),
    };
    let checkpoints = geometric_checkpoints(run.steps, run.checkpoints_per_octave);
    let (s_list, s2_list) = doubling_pairs(run.steps, run.gap_octaves);
    let (stats, gaps) = estimate_with_gaps(
        &scenario,
        &checkpoints,
        (&s_list, &s2_list),
        run.n_trials,
        Execution::Parallel,
    )?;
    let stats = match stats {
        Ok(s) => Some(s),
        Err(linsa::Error::AllDiverged { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let path = run_at(&x0, &scenario.schedule, &scenario.ensemble, &checkpoints, 0)?;

    std::fs::create_dir_all(out).map_err(|e| Failure::Io(out.to_path_buf(), e))?;
    let labels = sc.system.labels();
    write_trajectory(&out.join("trajectory.csv"), &labels, &path.steps_recorded, &path.states)?;
    write_stats(&out.join("stats.csv"), &labels, sc.partition.as_ref().map_or(0, |p| p.len()), stats.as_ref())?;

    let summary = summarize(sc, analysis, &x0, predicted_mean, stats.as_ref(), &gaps, tail);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    let summary_path = out.join("summary.json");
    std::fs::write(&summary_path, json).map_err(|e| Failure::Io(summary_path, e))?;
    Ok(summary)
}

fn summarize(
    sc: &Scenario,
    analysis: &Analysis,
    x0: &DVector<f64>,
    predicted_mean: Option<DVector<f64>>,
    stats: Option<&TrajectoryStats>,
    gaps: &CauchyGaps,
    tail: bool,
) -> SimSummary {
    let run = &sc.config.run;
    let verdict = &analysis.verdict;

    let limit = match (&predicted_mean, stats) {
        (Some(pred), Some(st)) => {
            let mean = st.state_mean.last().expect("horizon recorded");
            let se = st.state_stderr.last().expect("horizon recorded");
            let err = mean - pred;
            let z = err
                .iter()
                .zip(se.iter())
                .filter(|(_, &s)| s > 0.0)
                .map(|(e, s)| (e / s).abs())
                .fold(None, |acc: Option<f64>, z| Some(acc.map_or(z, |a| a.max(z))));
            Some(LimitCheck {
                predicted_mean: entries(pred),
                final_mean: entries(mean),
                final_stderr: entries(se),
                max_abs_error: err.amax(),
                max_abs_z: z,
            })
        }
        _ => None,
    };

    let window = run.fit_window.unwrap_or(if tail {
        [(run.steps / 1000).max(1), (run.steps / 20).max(2)]
    } else {
        [(run.steps / 100).max(1), run.steps]
    });
    let predicted_exponent = sc.config.gain.gamma().and_then(|g| verdict.rate_exponent(g));
    let rate = stats.map(|st| {
        let (fitted, fit_error) = match fit_rate(st, (window[0], window[1])) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let agrees = match (predicted_exponent, fitted) {
            (Some(k), Some(f)) => Some((f.exponent - k).abs() <= RATE_TOLERANCE),
            _ => None,
        };
        RateCheck {
            predicted_exponent,
            window,
            fitted,
            fit_error,
            agrees,
        }
    });

    let group = match (stats, &sc.partition) {
        (Some(st), Some(_)) => {
            let gap = *st.pairwise_gap.as_ref().and_then(|g| g.last()).expect("partition given");
            let means: Vec<f64> = st
                .group_means
                .as_ref()
                .and_then(|g| g.last())
                .expect("partition given")
                .iter()
                .map(|e| e.mean)
                .collect();
            let mut separation: Option<f64> = None;
            for (a, &ma) in means.iter().enumerate() {
                for &mb in &means[a + 1..] {
                    let d = (ma - mb).abs();
                    separation = Some(separation.map_or(d, |s| s.min(d)));
                }
            }
            let spread = x0.max() - x0.min();
            let observed_reached = gap.mean <= GAP_FRACTION * spread;
            let predicted_reached = analysis.group.as_ref().map(|g| g.reached);
            Some(GroupCheck {
                predicted_reached,
                initial_spread: spread,
                final_within_gap: gap.mean,
                final_within_gap_stderr: gap.stderr,
                final_group_means: means,
                min_between_separation: separation,
                observed_reached,
                agrees: predicted_reached.map(|p| p == observed_reached),
            })
        }
        _ => None,
    };

    let scale = x0.norm_squared() + predicted_mean.as_ref().map_or(0.0, |m| m.norm_squared());
    let observed = observe_behaviour(gaps, scale);
    let agrees = verdict.converges() == (observed == ObservedBehaviour::Converging);
    let all_diverged = stats.is_none();

    SimSummary {
        schema_version: SCHEMA_VERSION,
        name: sc.config.name.clone(),
        seed: run.seed,
        steps: run.steps,
        n_trials: run.n_trials,
        diverged_trials: gaps.diverged_trials,
        all_diverged,
        reference: if tail { "tail" } else { "fixed" },
        verdict: VerdictSummary {
            regime: format!("{:?}", verdict.regime),
            applicable_result: verdict.applicable_result,
            converges: verdict.converges(),
            borderline: analysis.report.verdict.borderline,
        },
        limit,
        rate,
        group,
        cauchy: CauchyCheck {
            pairs: gaps
                .gaps
                .iter()
                .map(|g| GapPoint {
                    s: g.s,
                    s2: g.s2,
                    gap: g.gap.mean,
                    stderr: g.gap.stderr,
                })
                .collect(),
            observed,
            agrees,
        },
        consistent: agrees && !(verdict.converges() && all_diverged),
    }
}

/// Shortest round-trip decimal form.
fn num(v: f64) -> String {
    match serde_json::Number::from_f64(v) {
        Some(n) => n.to_string(),
        None => format!("{v}"),
    }
}

fn csv_writer(path: &Path, comment: &str) -> Result<csv::Writer<BufWriter<File>>, Failure> {
    let io = |e| Failure::Io(path.to_path_buf(), e);
    let mut file = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(file, "{comment}").map_err(io)?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<(), Failure> {
    w.flush().map_err(|e| Failure::Io(path.to_path_buf(), e))
}

fn csv_failure(path: &Path, e: csv::Error) -> Failure {
    Failure::Io(path.to_path_buf(), e.into())
}

fn write_trajectory(path: &Path, labels: &[String], steps: &[u64], states: &[DVector<f64>]) -> Result<(), Failure> {
    let mut w = csv_writer(path, TRAJECTORY_FORMAT)?;
    let header = std::iter::once("step".to_string()).chain(labels.iter().cloned());
    w.write_record(header).map_err(|e| csv_failure(path, e))?;
    for (s, x) in steps.iter().zip(states) {
        let row = std::iter::once(s.to_string()).chain(x.iter().map(|&v| num(v)));
        w.write_record(row).map_err(|e| csv_failure(path, e))?;
    }
    finish(w, path)
}

fn write_stats(path: &Path, labels: &[String], n_groups: usize, stats: Option<&TrajectoryStats>) -> Result<(), Failure> {
    let mut w = csv_writer(path, STATS_FORMAT)?;
    let mut header = vec!["step".to_string(), "mse".into(), "mse_stderr".into()];
    if n_groups > 0 {
        header.push("gap".into());
        header.push("gap_stderr".into());
        for g in 1..=n_groups {
            header.push(format!("group{g}_mean"));
            header.push(format!("group{g}_stderr"));
        }
    }
    for l in labels {
        header.push(format!("mean_{l}"));
    }
    for l in labels {
        header.push(format!("stderr_{l}"));
    }
    w.write_record(&header).map_err(|e| csv_failure(path, e))?;
    if let Some(st) = stats {
        for (c, &s) in st.checkpoints.iter().enumerate() {
            let mut row = vec![s.to_string(), num(st.mse[c].mean), num(st.mse[c].stderr)];
            if let (Some(gaps), Some(groups)) = (&st.pairwise_gap, &st.group_means) {
                row.push(num(gaps[c].mean));
                row.push(num(gaps[c].stderr));
                for e in &groups[c] {
                    row.push(num(e.mean));
                    row.push(num(e.stderr));
                }
            }
            row.extend(st.state_mean[c].iter().map(|&v| num(v)));
            row.extend(st.state_stderr[c].iter().map(|&v| num(v)));
            w.write_record(&row).map_err(|e| csv_failure(path, e))?;
        }
    }
    finish(w, path)
}

/// Default output directory: `out/<name>`, or `out/<config file stem>`.
pub fn default_out_dir(name: Option<&str>, config_path: &Path) -> PathBuf {
    let stem = name
        .map(str::to_owned)
        .or_else(|| config_path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "scenario".into());
    PathBuf::from("out").join(stem)
}
