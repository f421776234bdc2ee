//! Convergence classification and predicted limits and rates.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::engine::{GainSchedule, GainSign};
use crate::ensembles::NoiseKind;
use crate::error::{Error, Result};
use crate::linalg::{check_square_finite, check_vector, is_row_stochastic, max_abs, unvec_rows, vec_rows};
use crate::spectral::{
    analyze, check_a3, check_a5, near_threshold, projector_one, A3Violation, A5Violation, Partition, SpectralSummary,
};

/// Condition number above which the restricted solve for the critical offset is refused.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ConvergesDeterministic,
    ConvergesRandomCritical,
    DivergesOrOscillates,
}

/// The result that decides the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApplicableResult {
    /// Spectrum strictly on the stable side: `x(s) -> (I - P)^-1 u` in mean square.
    StrictStability,
    /// Spectrum touches `Re = 1` only at a semisimple eigenvalue 1 with `u`
    /// orthogonal to its left eigenvectors: random limit.
    CriticalRandomLimit,
    /// Some eigenvalue lies strictly on the unstable side.
    UnstableMode,
    /// An eigenvalue `1 + ib`, `b != 0`.
    ComplexUnitRealPart,
    /// Eigenvalue 1 with a nontrivial Jordan block.
    DefectiveUnitEigenvalue,
    /// Eigenvalue 1 semisimple but `u` has a component along a left eigenvector.
    InputExcitesUnitMode,
}

impl ApplicableResult {
    pub fn label(self) -> &'static str {
        match self {
            ApplicableResult::StrictStability => "strict-stability",
            ApplicableResult::CriticalRandomLimit => "critical-random-limit",
            ApplicableResult::UnstableMode => "unstable-mode",
            ApplicableResult::ComplexUnitRealPart => "complex-unit-real-part",
            ApplicableResult::DefectiveUnitEigenvalue => "defective-unit-eigenvalue",
            ApplicableResult::InputExcitesUnitMode => "input-excites-unit-mode",
        }
    }
}

/// Expected limit of `x(s)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitPrediction {
    /// `x(s) -> z` in mean square.
    Deterministic { limit: DVector<f64> },
    /// `x(s)` converges to a random `x*` with `E x* = projector * x0 + offset`.
    Random { projector: DMatrix<f64>, offset: DVector<f64> },
}

impl LimitPrediction {
    pub fn mean_for(&self, x0: &DVector<f64>) -> DVector<f64> {
        match self {
            LimitPrediction::Deterministic { limit } => limit.clone(),
            LimitPrediction::Random { projector, offset } => projector * x0 + offset,
        }
    }
}

/// Whether mean-square error decays like `s^-gamma` or `s^(1 - 2 gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Strict,
    Critical,
}

impl RateKind {
    pub fn exponent(self, gamma: f64) -> f64 {
        match self {
            RateKind::Strict => -gamma,
            RateKind::Critical => 1.0 - 2.0 * gamma,
        }
    }
}

/// Failed clause behind a divergent verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// Extreme real part on the wrong side of 1.
    UnstableEigenvalue { re: f64, im: f64 },
    ComplexUnitRealPart { re: f64, im: f64 },
    Defective { algebraic: usize, geometric: usize },
    InputNotOrthogonal { left_eigenvector: DVector<f64>, projection: f64 },
}

impl From<A3Violation> for Witness {
    fn from(v: A3Violation) -> Self {
        match v {
            A3Violation::ComplexUnitRealPart { eigenvalue } => Witness::ComplexUnitRealPart {
                re: eigenvalue.re,
                im: eigenvalue.im,
            },
            A3Violation::Defective { algebraic, geometric } => Witness::Defective { algebraic, geometric },
            A3Violation::InputNotOrthogonal {
                left_eigenvector,
                projection,
            } => Witness::InputNotOrthogonal {
                left_eigenvector,
                projection,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceVerdict {
    pub regime: Regime,
    pub gain_sign: GainSign,
    pub applicable_result: ApplicableResult,
    pub expected_limit: Option<LimitPrediction>,
    pub limit_is_random: bool,
    pub rate_kind: Option<RateKind>,
    /// `rho_max_re` for non-negative gains, `rho_min_re` for non-positive ones.
    pub extreme_real_part: f64,
    pub witness: Option<Witness>,
    /// A deciding quantity fell within a factor 100 of its tolerance.
    pub borderline: bool,
}

impl ConvergenceVerdict {
    pub fn converges(&self) -> bool {
        self.regime != Regime::DivergesOrOscillates
    }

    /// Predicted exponent of `E ||x(s) - x*||^2` for gains of order `s^-gamma`.
    pub fn rate_exponent(&self, gamma: f64) -> Option<f64> {
        self.rate_kind.map(|k| k.exponent(gamma))
    }
}

/// Signed distance of the deciding real part from 1; negative is the stable side.
fn stability_margin(summary: &SpectralSummary, sign: GainSign) -> f64 {
    match sign {
        GainSign::NonNegative => summary.rho_max_re - 1.0,
        GainSign::NonPositive => 1.0 - summary.rho_min_re,
    }
}

fn extreme_eigenvalue(summary: &SpectralSummary, sign: GainSign) -> (f64, f64) {
    let pick = match sign {
        GainSign::NonNegative => summary.eigenvalues.first(),
        GainSign::NonPositive => summary.eigenvalues.last(),
    };
    pick.map(|l| (l.re, l.im)).unwrap_or((f64::NAN, f64::NAN))
}

/// Decide the regime of the SA recursion with mean map `(P, u)` and gains of
/// the given sign.
pub fn classify(p: &DMatrix<f64>, u: &DVector<f64>, gain_sign: GainSign, tol: f64) -> Result<ConvergenceVerdict> {
    let summary = analyze(p, tol)?;
    classify_with(&summary, p, u, gain_sign)
}

/// [`classify`] reusing an existing spectral summary of `p`.
pub fn classify_with(
    summary: &SpectralSummary,
    p: &DMatrix<f64>,
    u: &DVector<f64>,
    gain_sign: GainSign,
) -> Result<ConvergenceVerdict> {
    let n = summary.dim();
    check_vector(u, n, "u")?;
    let tol = summary.tol;
    let d = stability_margin(summary, gain_sign);
    let extreme_real_part = match gain_sign {
        GainSign::NonNegative => summary.rho_max_re,
        GainSign::NonPositive => summary.rho_min_re,
    };
    let mut borderline = (d.abs() > tol && d.abs() <= tol.sqrt()) || near_threshold(d.abs(), tol);

    let verdict = |regime, applicable_result, expected_limit, rate_kind, witness, borderline| ConvergenceVerdict {
        regime,
        gain_sign,
        applicable_result,
        limit_is_random: regime == Regime::ConvergesRandomCritical,
        expected_limit,
        rate_kind,
        extreme_real_part,
        witness,
        borderline,
    };

    if d < -tol {
        let limit = solve_fixed_point(p, u)?;
        return Ok(verdict(
            Regime::ConvergesDeterministic,
            ApplicableResult::StrictStability,
            Some(LimitPrediction::Deterministic { limit }),
            Some(RateKind::Strict),
            None,
            borderline,
        ));
    }
    if d > tol {
        let (re, im) = extreme_eigenvalue(summary, gain_sign);
        return Ok(verdict(
            Regime::DivergesOrOscillates,
            ApplicableResult::UnstableMode,
            None,
            None,
            Some(Witness::UnstableEigenvalue { re, im }),
            borderline,
        ));
    }

    let a3 = check_a3(summary, u)?;
    borderline |= a3.borderline;
    match a3.witness {
        None => {
            let projector = projector_one(summary)?;
            let offset = critical_offset(p, u, &summary.left_one_basis)?;
            Ok(verdict(
                Regime::ConvergesRandomCritical,
                ApplicableResult::CriticalRandomLimit,
                Some(LimitPrediction::Random { projector, offset }),
                Some(RateKind::Critical),
                None,
                borderline,
            ))
        }
        Some(w) => {
            let result = match w {
                A3Violation::ComplexUnitRealPart { .. } => ApplicableResult::ComplexUnitRealPart,
                A3Violation::Defective { .. } => ApplicableResult::DefectiveUnitEigenvalue,
                A3Violation::InputNotOrthogonal { .. } => ApplicableResult::InputExcitesUnitMode,
            };
            Ok(verdict(
                Regime::DivergesOrOscillates,
                result,
                None,
                None,
                Some(w.into()),
                borderline,
            ))
        }
    }
}

/// `(I - P)^-1 u`.
fn solve_fixed_point(p: &DMatrix<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let a = DMatrix::identity(n, n) - p;
    let z = a
        .clone()
        .lu()
        .solve(u)
        .ok_or_else(|| Error::numerical("I - P is singular"))?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("I - P solve produced non-finite values"));
    }
    Ok(z)
}

/// The unique `z` with `(I - P) z = u` and `W z = 0`, by least squares on the
/// stacked system.
fn critical_offset(p: &DMatrix<f64>, u: &DVector<f64>, w: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let r = w.nrows();
    let mut a = DMatrix::zeros(n + r, n);
    a.view_mut((0, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) - p));
    a.view_mut((n, 0), (r, n)).copy_from(w);
    let mut b = DVector::zeros(n + r);
    b.rows_mut(0, n).copy_from(u);

    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(Error::NumericalFailure {
            what: "restricted solve for the critical offset is ill-conditioned".into(),
            condition: Some(condition),
        });
    }
    svd.solve(&b, 0.0).map_err(|e| Error::numerical(e.to_string()))
}

/// Mean of the limit from `x0`: `(I - P)^-1 u` in the strict regime,
/// `Pi x0 + z` in the critical one.
pub fn expected_limit(
    p: &DMatrix<f64>,
    u: &DVector<f64>,
    x0: &DVector<f64>,
    gain_sign: GainSign,
    tol: f64,
) -> Result<DVector<f64>> {
    let v = classify(p, u, gain_sign, tol)?;
    check_vector(x0, p.nrows(), "x0")?;
    match v.expected_limit {
        Some(l) => Ok(l.mean_for(x0)),
        None => Err(Error::NotApplicable(format!(
            "no limit: {}",
            v.applicable_result.label()
        ))),
    }
}

/// Predicted exponent of `E ||x(s) - x*||^2 ~ s^k` for a power-law schedule.
pub fn predicted_rate(p: &DMatrix<f64>, u: &DVector<f64>, gain: &GainSchedule, tol: f64) -> Result<f64> {
    let (sign, gamma) = match gain {
        GainSchedule::PowerLaw { sign, gamma, .. } => (*sign, *gamma),
        GainSchedule::Harmonic => (GainSign::NonNegative, 1.0),
        GainSchedule::Custom { .. } => {
            return Err(Error::NotApplicable("rates are predicted for power-law gains only".into()))
        }
    };
    gain.validate()?;
    let v = classify(p, u, sign, tol)?;
    v.rate_exponent(gamma).ok_or_else(|| {
        Error::NotApplicable(format!(
            "recursion does not converge ({})",
            v.applicable_result.label()
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupConsensusBasis {
    /// Strictly stable spectrum: every agent goes to 0.
    StrictDecay,
    /// Semisimple eigenvalue 1 whose eigenvectors are group-constant.
    GroupConstantEigenspace,
    NotReached,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupConsensusVerdict {
    pub reached: bool,
    pub basis: GroupConsensusBasis,
    /// Divergent-side witness from the spectrum or the eigenvalue-1 clauses.
    pub witness: Option<Witness>,
    pub group_witness: Option<GroupWitness>,
    /// `Pi`, so that the expected group values are `Pi x0`.
    pub projector: Option<DMatrix<f64>>,
    pub borderline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupWitness {
    Multiplicity { eigenspace_dim: usize, groups: usize },
    NotGroupConstant { column: usize, residual: f64 },
}

impl From<A5Violation> for GroupWitness {
    fn from(v: A5Violation) -> Self {
        match v {
            A5Violation::Multiplicity { eigenspace_dim, groups } => GroupWitness::Multiplicity { eigenspace_dim, groups },
            A5Violation::NotGroupConstant { column, residual } => GroupWitness::NotGroupConstant { column, residual },
        }
    }
}

/// Whether the zero-input recursion reaches group consensus over `partition`.
pub fn group_consensus_verdict(
    p: &DMatrix<f64>,
    u: &DVector<f64>,
    partition: &Partition,
    gain_sign: GainSign,
    tol: f64,
) -> Result<GroupConsensusVerdict> {
    let n = check_square_finite(p, "P")?;
    check_vector(u, n, "u")?;
    if max_abs(u) > tol {
        return Err(Error::PreconditionViolated("group consensus requires u = 0".into()));
    }
    if partition.n() != n {
        return Err(Error::InvalidInput(format!(
            "partition covers {} agents, matrix has {n}",
            partition.n()
        )));
    }
    let summary = analyze(p, tol)?;
    let zero = DVector::zeros(n);
    let v = classify_with(&summary, p, &zero, gain_sign)?;
    let mut out = GroupConsensusVerdict {
        reached: false,
        basis: GroupConsensusBasis::NotReached,
        witness: v.witness.clone(),
        group_witness: None,
        projector: None,
        borderline: v.borderline,
    };
    match v.regime {
        Regime::ConvergesDeterministic => {
            out.reached = true;
            out.basis = GroupConsensusBasis::StrictDecay;
            out.projector = Some(DMatrix::zeros(n, n));
        }
        Regime::ConvergesRandomCritical => {
            let a5 = check_a5(&summary, partition)?;
            out.borderline |= a5.borderline;
            if a5.holds {
                out.reached = true;
                out.basis = GroupConsensusBasis::GroupConstantEigenspace;
                out.projector = Some(projector_one(&summary)?);
            } else {
                out.group_witness = a5.witness.map(Into::into);
            }
        }
        Regime::DivergesOrOscillates => {}
    }
    Ok(out)
}

/// Whether the interaction graph of a row-stochastic `P` has a spanning tree,
/// with an edge `j -> i` whenever `P_ij > tol`, `i != j`. Returns the smallest
/// root index, if any.
pub fn spanning_tree(p: &DMatrix<f64>, tol: f64) -> Result<Option<usize>> {
    let n = check_square_finite(p, "P")?;
    if !is_row_stochastic(p, tol.max(1e-12)) {
        return Err(Error::PreconditionViolated("P must be row-stochastic".into()));
    }
    let reaches_all = |root: usize| {
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(j) = stack.pop() {
            for i in 0..n {
                if !seen[i] && i != j && p[(i, j)] > tol {
                    seen[i] = true;
                    stack.push(i);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    Ok((0..n).find(|&r| reaches_all(r)))
}

/// Convergence for every gain sequence with sum a = inf, sum a^2 < inf,
/// whatever its signs: the spectrum must lie strictly on one side of `Re = 1`.
/// The noise description is not consulted.
pub fn arbitrary_gain_verdict(p: &DMatrix<f64>, u: &DVector<f64>, _noise: &NoiseKind, tol: f64) -> Result<bool> {
    let summary = analyze(p, tol)?;
    check_vector(u, summary.dim(), "u")?;
    Ok(summary.rho_max_re < 1.0 - tol || summary.rho_min_re > 1.0 + tol)
}

fn check_fj_inputs(lambda: &DMatrix<f64>, p: &DMatrix<f64>, c: &DMatrix<f64>, x0: &DMatrix<f64>) -> Result<()> {
    let n = check_square_finite(lambda, "Lambda")?;
    check_square_finite(p, "P")?;
    let m = check_square_finite(c, "C")?;
    if p.nrows() != n || x0.shape() != (n, m) {
        return Err(Error::InvalidInput(format!(
            "shapes: Lambda {n}x{n}, P {}x{}, C {m}x{m}, X0 {}x{}",
            p.nrows(),
            p.ncols(),
            x0.nrows(),
            x0.ncols()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("X0 has non-finite entries".into()));
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && lambda[(i, j)] != 0.0 {
                return Err(Error::PreconditionViolated("Lambda must be diagonal".into()));
            }
        }
        let l = lambda[(i, i)];
        if !(0.0..1.0).contains(&l) {
            return Err(Error::PreconditionViolated(format!(
                "Lambda diagonal must lie in [0, 1), entry {i} is {l}"
            )));
        }
    }
    if !is_row_stochastic(p, 1e-9) {
        return Err(Error::PreconditionViolated("P must be row-stochastic".into()));
    }
    if !is_row_stochastic(c, 1e-9) {
        return Err(Error::PreconditionViolated("C must be row-stochastic".into()));
    }
    Ok(())
}

/// Solution of `X = Lambda P X C^T + (I - Lambda) X0`, via the row-major
/// vectorization `(I - (Lambda P) kron C) vec(X) = vec((I - Lambda) X0)`.
pub fn fj_fixed_point(lambda: &DMatrix<f64>, p: &DMatrix<f64>, c: &DMatrix<f64>, x0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_fj_inputs(lambda, p, c, x0)?;
    let (n, m) = x0.shape();
    let q = (lambda * p).kronecker(c);
    let a = DMatrix::identity(n * m, n * m) - q;
    let rhs = vec_rows(&((DMatrix::identity(n, n) - lambda) * x0));
    let y = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("I - (Lambda P) kron C is singular"))?;
    Ok(unvec_rows(&y, n, m))
}

/// `max |X - Lambda P X C^T - (I - Lambda) X0|`.
pub fn fj_residual(lambda: &DMatrix<f64>, p: &DMatrix<f64>, c: &DMatrix<f64>, x0: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let n = lambda.nrows();
    let r = x - lambda * p * x * c.transpose() - (DMatrix::identity(n, n) - lambda) * x0;
    r.amax()
}

/// `y_{k+1} = (1 - a_k) y_k + b_k` from `y_1`, returning `[y_1, ..., y_{steps+1}]`.
pub fn deterministic_recursion_oracle(y1: f64, a: &[f64], b: &[f64], steps: usize) -> Result<Vec<f64>> {
    if a.len() < steps || b.len() < steps {
        return Err(Error::InvalidInput(format!(
            "need {steps} coefficients, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = y1;
    out.push(y);
    for k in 0..steps {
        y = (1.0 - a[k]) * y + b[k];
        out.push(y);
    }
    Ok(out)
}
