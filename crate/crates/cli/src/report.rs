//! The `classify` report.

use std::fmt::Write as _;

use linsa::analysis::{classify_with, fj_residual, GroupConsensusVerdict, Witness};
use linsa::linalg::{is_row_stochastic, max_abs};
use linsa::{analyze, group_consensus_verdict, spanning_tree, ConvergenceVerdict, LimitPrediction, NoiseKind};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{Scenario, System};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_CONVERGENT: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_BORDERLINE: i32 = 2;
pub const EXIT_DIVERGENT: i32 = 10;

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn entries(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    /// `[re, im]` pairs, real part descending.
    pub eigenvalues: Vec<[f64; 2]>,
    pub rho_max_re: f64,
    pub rho_min_re: f64,
    pub alg_mult_one: usize,
    pub geo_mult_one: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitReport {
    Deterministic { limit: Vec<f64> },
    Random { projector: Vec<Vec<f64>>, offset: Vec<f64>, mean: Vec<f64> },
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WitnessReport {
    UnstableEigenvalue { re: f64, im: f64 },
    ComplexUnitRealPart { re: f64, im: f64 },
    Defective { algebraic: usize, geometric: usize },
    InputNotOrthogonal { left_eigenvector: Vec<f64>, projection: f64 },
}

impl From<&Witness> for WitnessReport {
    fn from(w: &Witness) -> Self {
        match w {
            Witness::UnstableEigenvalue { re, im } => WitnessReport::UnstableEigenvalue { re: *re, im: *im },
            Witness::ComplexUnitRealPart { re, im } => WitnessReport::ComplexUnitRealPart { re: *re, im: *im },
            Witness::Defective { algebraic, geometric } => WitnessReport::Defective {
                algebraic: *algebraic,
                geometric: *geometric,
            },
            Witness::InputNotOrthogonal {
                left_eigenvector,
                projection,
            } => WitnessReport::InputNotOrthogonal {
                left_eigenvector: entries(left_eigenvector),
                projection: *projection,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictReport {
    pub regime: String,
    pub gain_sign: linsa::GainSign,
    pub applicable_result: linsa::ApplicableResult,
    pub limit_is_random: bool,
    pub expected_limit: Option<LimitReport>,
    /// Predicted exponent of the mean-square error, when the gains are power-law.
    pub rate_exponent: Option<f64>,
    pub extreme_real_part: f64,
    pub witness: Option<WitnessReport>,
    pub borderline: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub groups: Vec<Vec<usize>>,
    /// `None` when the check does not apply, with the reason in `note`.
    pub reached: Option<bool>,
    pub basis: Option<linsa::analysis::GroupConsensusBasis>,
    pub group_witness: Option<serde_json::Value>,
    /// Expected agent values `Pi x0`.
    pub expected_values: Option<Vec<f64>>,
    pub borderline: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpanningTreeReport {
    pub has_spanning_tree: bool,
    /// 1-based.
    pub root: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FjReport {
    pub fixed_point: Vec<Vec<f64>>,
    pub residual: f64,
    pub lifted_rho_max_re: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifyReport {
    pub schema_version: u32,
    pub name: Option<String>,
    pub dimension: usize,
    pub tol: f64,
    pub spectrum: SpectrumReport,
    pub verdict: VerdictReport,
    /// Convergence for every admissible gain sequence regardless of sign.
    pub arbitrary_gain_convergence: bool,
    pub group_consensus: Option<GroupReport>,
    pub spanning_tree: Option<SpanningTreeReport>,
    pub fj: Option<FjReport>,
    pub exit_code: i32,
}

/// Everything `classify` computes, kept in library types for `simulate`.
pub struct Analysis {
    pub verdict: ConvergenceVerdict,
    pub group: Option<GroupConsensusVerdict>,
    pub report: ClassifyReport,
}

impl Analysis {
    pub fn exit_code(&self) -> i32 {
        self.report.exit_code
    }

    pub fn expected_mean(&self, x0: &DVector<f64>) -> Option<DVector<f64>> {
        self.verdict.expected_limit.as_ref().map(|l| l.mean_for(x0))
    }
}

pub fn analyse(sc: &Scenario) -> linsa::Result<Analysis> {
    let (p, u) = sc.system.mean_map();
    let x0 = sc.system.x0();
    let summary = analyze(&p, sc.tol)?;
    let verdict = classify_with(&summary, &p, &u, sc.gain_sign)?;

    let expected_limit = verdict.expected_limit.as_ref().map(|l| match l {
        LimitPrediction::Deterministic { limit } => LimitReport::Deterministic { limit: entries(limit) },
        LimitPrediction::Random { projector, offset } => LimitReport::Random {
            projector: rows(projector),
            offset: entries(offset),
            mean: entries(&l.mean_for(&x0)),
        },
    });
    let gamma = sc.config.gain.gamma();
    let noise = sc.config.ensemble.unwrap_or(NoiseKind::None);
    let arbitrary_gain_convergence = linsa::arbitrary_gain_verdict(&p, &u, &noise, sc.tol)?;

    let mut group = None;
    let group_consensus = match &sc.partition {
        None => None,
        Some(partition) => {
            let groups = partition
                .groups()
                .iter()
                .map(|g| g.iter().map(|i| i + 1).collect())
                .collect();
            if max_abs(&u) > sc.tol {
                Some(GroupReport {
                    groups,
                    reached: None,
                    basis: None,
                    group_witness: None,
                    expected_values: None,
                    borderline: false,
                    note: Some("group consensus is only decided for u = 0".into()),
                })
            } else {
                let g = group_consensus_verdict(&p, &u, partition, sc.gain_sign, sc.tol)?;
                let report = GroupReport {
                    groups,
                    reached: Some(g.reached),
                    basis: Some(g.basis),
                    group_witness: g
                        .group_witness
                        .as_ref()
                        .map(|w| serde_json::to_value(w).expect("witness serializes")),
                    expected_values: g.projector.as_ref().map(|pi| entries(&(pi * &x0))),
                    borderline: g.borderline,
                    note: None,
                };
                group = Some(g);
                Some(report)
            }
        }
    };

    let interaction = match &sc.system {
        System::Vector { p, .. } | System::Fj { p, .. } => p,
    };
    let spanning = if is_row_stochastic(interaction, sc.tol.max(1e-12)) {
        let root = spanning_tree(interaction, sc.tol)?;
        Some(SpanningTreeReport {
            has_spanning_tree: root.is_some(),
            root: root.map(|r| r + 1),
        })
    } else {
        None
    };

    let fj = match &sc.system {
        System::Fj {
            lambda,
            p,
            c,
            x0,
            scenario,
        } => Some(FjReport {
            fixed_point: rows(&scenario.fixed_point),
            residual: fj_residual(lambda, p, c, x0, &scenario.fixed_point),
            lifted_rho_max_re: scenario.lifted_rho_max_re,
        }),
        System::Vector { .. } => None,
    };

    let borderline = verdict.borderline || group.as_ref().is_some_and(|g| g.borderline);
    let exit_code = if borderline {
        EXIT_BORDERLINE
    } else if verdict.converges() {
        EXIT_CONVERGENT
    } else {
        EXIT_DIVERGENT
    };

    let report = ClassifyReport {
        schema_version: SCHEMA_VERSION,
        name: sc.config.name.clone(),
        dimension: summary.dim(),
        tol: sc.tol,
        spectrum: SpectrumReport {
            eigenvalues: summary.eigenvalues.iter().map(|l| [l.re, l.im]).collect(),
            rho_max_re: summary.rho_max_re,
            rho_min_re: summary.rho_min_re,
            alg_mult_one: summary.alg_mult_one,
            geo_mult_one: summary.geo_mult_one,
        },
        verdict: VerdictReport {
            regime: format!("{:?}", verdict.regime),
            gain_sign: verdict.gain_sign,
            applicable_result: verdict.applicable_result,
            limit_is_random: verdict.limit_is_random,
            expected_limit,
            rate_exponent: gamma.and_then(|g| verdict.rate_exponent(g)),
            extreme_real_part: verdict.extreme_real_part,
            witness: verdict.witness.as_ref().map(Into::into),
            borderline: verdict.borderline,
        },
        arbitrary_gain_convergence,
        group_consensus,
        spanning_tree: spanning,
        fj,
        exit_code,
    };
    Ok(Analysis { verdict, group, report })
}

fn fmt_num(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| fmt_num(x)).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_complex([re, im]: [f64; 2]) -> String {
    if im.abs() < 5e-7 {
        fmt_num(re)
    } else if im > 0.0 {
        format!("{}+{}i", fmt_num(re), fmt_num(im))
    } else {
        format!("{}-{}i", fmt_num(re), fmt_num(-im))
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn render_text(r: &ClassifyReport) -> String {
    let mut out = String::new();
    let w = &mut out;
    if let Some(name) = &r.name {
        let _ = writeln!(w, "scenario: {name}");
    }
    let _ = writeln!(w, "dimension: {}  tol: {:.3e}", r.dimension, r.tol);
    let eig: Vec<String> = r.spectrum.eigenvalues.iter().map(|&l| fmt_complex(l)).collect();
    let _ = writeln!(w, "eigenvalues: {}", eig.join(", "));
    let _ = writeln!(
        w,
        "real parts: max {}  min {}  eigenvalue 1: algebraic {} geometric {}",
        fmt_num(r.spectrum.rho_max_re),
        fmt_num(r.spectrum.rho_min_re),
        r.spectrum.alg_mult_one,
        r.spectrum.geo_mult_one
    );
    let v = &r.verdict;
    let sign = match v.gain_sign {
        linsa::GainSign::NonNegative => "non-negative gains",
        linsa::GainSign::NonPositive => "non-positive gains",
    };
    let _ = writeln!(w, "verdict: {} ({sign})", v.regime);
    let _ = writeln!(w, "applicable result: {}", v.applicable_result.label());
    match &v.expected_limit {
        Some(LimitReport::Deterministic { limit }) => {
            let _ = writeln!(w, "limit: {}", fmt_vec(limit));
        }
        Some(LimitReport::Random { mean, .. }) => {
            let _ = writeln!(w, "limit: random, mean {}", fmt_vec(mean));
        }
        None => {}
    }
    if let Some(k) = v.rate_exponent {
        let _ = writeln!(w, "predicted mse exponent: {k}");
    }
    if let Some(wit) = &v.witness {
        let _ = writeln!(w, "witness: {}", serde_json::to_string(wit).expect("witness serializes"));
    }
    let _ = writeln!(w, "arbitrary-gain convergence: {}", yes_no(r.arbitrary_gain_convergence));
    if let Some(g) = &r.group_consensus {
        match (g.reached, &g.note) {
            (Some(reached), _) => {
                let basis = g.basis.map(|b| serde_json::to_value(b).expect("basis serializes"));
                let _ = writeln!(
                    w,
                    "group consensus over {:?}: {} ({})",
                    g.groups,
                    yes_no(reached),
                    basis.as_ref().and_then(|b| b.as_str()).unwrap_or("-")
                );
                if let Some(e) = &g.expected_values {
                    let _ = writeln!(w, "expected agent values: {}", fmt_vec(e));
                }
            }
            (None, Some(note)) => {
                let _ = writeln!(w, "group consensus over {:?}: {note}", g.groups);
            }
            (None, None) => {}
        }
    }
    if let Some(t) = &r.spanning_tree {
        match t.root {
            Some(root) => {
                let _ = writeln!(w, "spanning tree: yes (root agent {root})");
            }
            None => {
                let _ = writeln!(w, "spanning tree: no");
            }
        }
    }
    if let Some(fj) = &r.fj {
        let _ = writeln!(w, "fixed point:");
        for row in &fj.fixed_point {
            let _ = writeln!(w, "  {}", fmt_vec(row));
        }
        let _ = writeln!(w, "fixed-point residual: {:.3e}", fj.residual);
    }
    if r.exit_code == EXIT_BORDERLINE {
        let _ = writeln!(w, "borderline: a deciding quantity is within the tolerance band");
    }
    out
}
