//! Scenario files: one TOML document per scenario.

use std::fmt;
use std::path::Path;

use linsa::multidim::FjScenario;
use linsa::{default_tol, fj_scenario, FjNoise, GainSchedule, GainSign, MatrixEnsemble, NoiseKind, Partition};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn field_error(field: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("field `{field}`: {msg}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub system: Option<SystemBlock>,
    #[serde(default)]
    pub fj: Option<FjBlock>,
    #[serde(default)]
    pub ensemble: Option<NoiseKind>,
    pub gain: GainSchedule,
    #[serde(default)]
    pub partition: Option<PartitionBlock>,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub p: Vec<Vec<f64>>,
    #[serde(default)]
    pub u: Option<Vec<f64>>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FjBlock {
    /// Diagonal of `Lambda`.
    pub lambda: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub x0: Vec<Vec<f64>>,
    #[serde(default)]
    pub sigma_lambda: f64,
    #[serde(default)]
    pub sigma_p: f64,
    #[serde(default)]
    pub sigma_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionBlock {
    /// 1-based agent indices.
    pub groups: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceChoice {
    /// The predicted limit when it is deterministic, otherwise the tail.
    #[default]
    Auto,
    Tail,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunBlock {
    pub steps: u64,
    pub n_trials: usize,
    pub seed: u64,
    pub checkpoints_per_octave: u32,
    pub reference: ReferenceChoice,
    /// `[lo, hi]` for the MSE rate fit.
    pub fit_window: Option<[u64; 2]>,
    /// Number of doubling pairs compared by the Cauchy-gap check, minus one.
    pub gap_octaves: u32,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            steps: 10_000,
            n_trials: 100,
            seed: 0,
            checkpoints_per_octave: 4,
            reference: ReferenceChoice::Auto,
            fit_window: None,
            gap_octaves: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    /// Spectral tolerance; defaults to `1e-8 * max(1, ||P||_inf)`.
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<String>,
}

/// Validated scenario ready for analysis and simulation.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub system: System,
    pub partition: Option<Partition>,
    pub tol: f64,
    pub gain_sign: GainSign,
}

pub enum System {
    Vector {
        p: DMatrix<f64>,
        u: DVector<f64>,
        x0: DVector<f64>,
        ensemble: MatrixEnsemble,
    },
    /// Matrix-valued opinions, analysed through the lifted vector system.
    Fj {
        lambda: DMatrix<f64>,
        p: DMatrix<f64>,
        c: DMatrix<f64>,
        x0: DMatrix<f64>,
        scenario: Box<FjScenario>,
    },
}

impl System {
    /// Mean map `(P, u)` of the (lifted) vector recursion.
    pub fn mean_map(&self) -> (DMatrix<f64>, DVector<f64>) {
        match self {
            System::Vector { p, u, .. } => (p.clone(), u.clone()),
            System::Fj { lambda, p, c, x0, .. } => {
                let n = lambda.nrows();
                let q = (lambda * p).kronecker(c);
                let v = linsa::linalg::vec_rows(&((DMatrix::identity(n, n) - lambda) * x0));
                (q, v)
            }
        }
    }

    pub fn x0(&self) -> DVector<f64> {
        match self {
            System::Vector { x0, .. } => x0.clone(),
            System::Fj { x0, .. } => linsa::linalg::vec_rows(x0),
        }
    }

    /// Column names for the state entries.
    pub fn labels(&self) -> Vec<String> {
        match self {
            System::Vector { x0, .. } => (1..=x0.len()).map(|i| format!("x{i}")).collect(),
            System::Fj { x0, .. } => (1..=x0.nrows())
                .flat_map(|i| (1..=x0.ncols()).map(move |j| format!("x{i}_{j}")))
                .collect(),
        }
    }
}

fn matrix(field: &str, rows: &[Vec<f64>], cols: Option<usize>) -> Result<DMatrix<f64>, ConfigError> {
    if rows.is_empty() {
        return Err(field_error(field, "must have at least one row"));
    }
    let width = cols.unwrap_or(rows[0].len());
    if width == 0 {
        return Err(field_error(field, "rows must not be empty"));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(field_error(
                field,
                format!("row {} has {} entries, expected {width}", i + 1, r.len()),
            ));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(field_error(field, format!("entry ({}, {}) is not finite", i + 1, j + 1)));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

fn square(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let m = matrix(field, rows, None)?;
    if !m.is_square() {
        return Err(field_error(field, format!("must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(m)
}

fn vector(field: &str, v: &[f64], n: usize) -> Result<DVector<f64>, ConfigError> {
    if v.len() != n {
        return Err(field_error(field, format!("has {} entries, expected {n}", v.len())));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(field_error(field, format!("entry {} is not finite", i + 1)));
    }
    Ok(DVector::from_column_slice(v))
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// Range-check every field and build the model.
    pub fn validate(self) -> Result<Scenario, ConfigError> {
        let run = &self.run;
        if run.steps == 0 {
            return Err(field_error("run.steps", "must be at least 1"));
        }
        if run.n_trials < 2 {
            return Err(field_error("run.n_trials", "must be at least 2"));
        }
        if run.checkpoints_per_octave == 0 {
            return Err(field_error("run.checkpoints_per_octave", "must be at least 1"));
        }
        if run.gap_octaves == 0 {
            return Err(field_error("run.gap_octaves", "must be at least 1"));
        }
        if run.steps < 1 << (run.gap_octaves + 1) {
            return Err(field_error(
                "run.steps",
                format!("must be at least {} for {} gap octaves", 1u64 << (run.gap_octaves + 1), run.gap_octaves),
            ));
        }
        if let Some([lo, hi]) = run.fit_window {
            if lo == 0 || lo >= hi || hi > run.steps {
                return Err(field_error("run.fit_window", "need 1 <= lo < hi <= steps"));
            }
        }
        self.gain.validate().map_err(|e| field_error("gain", e))?;
        if let GainSchedule::Custom { values } = &self.gain {
            if (values.len() as u64) < run.steps {
                return Err(field_error(
                    "gain.values",
                    format!("{} gains for {} steps", values.len(), run.steps),
                ));
            }
        }
        let gain_sign = self
            .gain
            .sign()
            .ok_or_else(|| field_error("gain.values", "gains must not change sign"))?;

        let system = match (&self.system, &self.fj) {
            (Some(_), Some(_)) => return Err(ConfigError("give either [system] or [fj], not both".into())),
            (None, None) => return Err(ConfigError("missing [system] or [fj] table".into())),
            (Some(s), None) => {
                let p = square("system.p", &s.p)?;
                let n = p.nrows();
                let u = match &s.u {
                    Some(u) => vector("system.u", u, n)?,
                    None => DVector::zeros(n),
                };
                let x0 = vector("system.x0", &s.x0, n)?;
                let noise = self.ensemble.unwrap_or(NoiseKind::None);
                let ensemble =
                    MatrixEnsemble::new(p.clone(), u.clone(), noise, run.seed).map_err(|e| field_error("ensemble", e))?;
                System::Vector { p, u, x0, ensemble }
            }
            (None, Some(f)) => {
                if self.ensemble.is_some() {
                    return Err(field_error("ensemble", "not used with [fj]; set fj.sigma_* instead"));
                }
                let p = square("fj.p", &f.p)?;
                let n = p.nrows();
                let c = square("fj.c", &f.c)?;
                let lambda = DMatrix::from_diagonal(&vector("fj.lambda", &f.lambda, n)?);
                if f.x0.len() != n {
                    return Err(field_error("fj.x0", format!("has {} rows, expected {n}", f.x0.len())));
                }
                let x0 = matrix("fj.x0", &f.x0, Some(c.nrows()))?;
                let noise = FjNoise {
                    sigma_lambda: f.sigma_lambda,
                    sigma_p: f.sigma_p,
                    sigma_c: f.sigma_c,
                };
                let scenario = fj_scenario(&lambda, &p, &c, &x0, noise, run.seed).map_err(|e| field_error("fj", e))?;
                System::Fj {
                    lambda,
                    p,
                    c,
                    x0,
                    scenario: Box::new(scenario),
                }
            }
        };

        let partition = match &self.partition {
            None => None,
            Some(block) => {
                let System::Vector { x0, .. } = &system else {
                    return Err(field_error("partition", "only supported with [system]"));
                };
                let n = x0.len();
                let mut groups = Vec::with_capacity(block.groups.len());
                for g in &block.groups {
                    let mut members = Vec::with_capacity(g.len());
                    for &i in g {
                        if i == 0 || i > n {
                            return Err(field_error("partition.groups", format!("agent {i} outside 1..={n}")));
                        }
                        members.push(i - 1);
                    }
                    groups.push(members);
                }
                Some(Partition::new(groups, n).map_err(|e| field_error("partition.groups", e))?)
            }
        };

        let (mean_p, _) = system.mean_map();
        let tol = match self.analysis.tol {
            Some(t) if t > 0.0 && t.is_finite() => t,
            Some(t) => return Err(field_error("analysis.tol", format!("must be positive, got {t}"))),
            None => default_tol(&mean_p),
        };

        Ok(Scenario {
            config: self,
            system,
            partition,
            tol,
            gain_sign,
        })
    }
}
