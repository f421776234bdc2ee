//! Eigenstructure of the mean interaction matrix.
//!
//! The Jordan form is never formed. Everything the convergence conditions
//! need is read off the eigenvalues, their real-part extremes, and the
//! eigenvalue-1 eigenspaces, which are obtained as numerical null spaces of
//! `P - I` and `(P - I)^T` through one SVD.
//!
//! Eigenvalues within `sqrt(tol)` of 1 whose cluster mean is within `tol` of
//! 1 are treated as copies of the eigenvalue 1. A defective eigenvalue of
//! multiplicity `k` is split by rounding into a ring of radius
//! `O(eps^(1/k))`, while the cluster mean stays accurate to `O(eps)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{check_square_finite, check_vector, inf_norm};

/// Comparisons whose quantity lies within this factor of the threshold are
/// reported as borderline.
pub const BORDERLINE_BAND: f64 = 100.0;

/// `1e-8 * max(1, ||P||_inf)`.
pub fn default_tol(p: &DMatrix<f64>) -> f64 {
    1e-8 * inf_norm(p).max(1.0)
}

pub(crate) fn near_threshold(quantity: f64, threshold: f64) -> bool {
    quantity > threshold / BORDERLINE_BAND && quantity <= threshold * BORDERLINE_BAND
}

#[derive(Debug, Clone)]
pub struct SpectralSummary {
    /// Sorted by real part descending, then imaginary part descending.
    pub eigenvalues: Vec<Complex64>,
    pub rho_max_re: f64,
    pub rho_min_re: f64,
    pub alg_mult_one: usize,
    pub geo_mult_one: usize,
    /// `n x geo_mult_one`, orthonormal columns spanning `ker(P - I)`.
    pub right_one_basis: DMatrix<f64>,
    /// `geo_mult_one x n`, orthonormal rows spanning the left null space of `P - I`.
    pub left_one_basis: DMatrix<f64>,
    pub tol: f64,
    /// Largest `|lambda - 1|` among the eigenvalues that were merged into the
    /// eigenvalue 1 (zero when nothing was merged).
    pub unit_cluster_spread: f64,
}

impl SpectralSummary {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_semisimple_one(&self) -> bool {
        self.alg_mult_one == self.geo_mult_one
    }

    /// A semisimple eigenvalue 1 should be computed to roughly `tol`; a wider
    /// merged cluster means the multiplicity decision is fragile.
    pub fn unit_cluster_is_fragile(&self) -> bool {
        self.is_semisimple_one() && self.alg_mult_one > 0 && self.unit_cluster_spread > self.tol
    }
}

/// Group structure `S_1, ..., S_r'` over agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
    n: usize,
}

impl Partition {
    /// Groups hold zero-based agent indices.
    pub fn new(groups: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidInput("partition needs at least one group".into()));
        }
        let mut seen = vec![false; n];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidInput(format!("group {} is empty", g + 1)));
            }
            for &i in members {
                if i >= n {
                    return Err(Error::InvalidInput(format!(
                        "agent index {} out of range for n = {n}",
                        i + 1
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidInput(format!(
                        "agent {} appears in more than one group",
                        i + 1
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!(
                "agent {} is not covered by the partition",
                missing + 1
            )));
        }
        Ok(Self { groups, n })
    }

    /// The single group `{0..n}`.
    pub fn consensus(n: usize) -> Self {
        Self {
            groups: vec![(0..n).collect()],
            n,
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// `n x r'` 0/1 matrix whose column `g` marks the members of group `g`.
    pub fn indicator_vectors(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.groups.len());
        for (g, members) in self.groups.iter().enumerate() {
            for &i in members {
                m[(i, g)] = 1.0;
            }
        }
        m
    }
}

pub fn analyze(p: &DMatrix<f64>, tol: f64) -> Result<SpectralSummary> {
    let n = check_square_finite(p, "P")?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }

    let mut eigenvalues: Vec<Complex64> = faer::Mat::from_fn(n, n, |i, j| p[(i, j)])
        .eigenvalues()
        .map_err(|e| Error::numerical(format!("eigenvalue solver failed: {e:?}")))?
        .into_iter()
        .map(|l| Complex64::new(l.re, l.im))
        .collect();
    if eigenvalues.iter().any(|l| !l.re.is_finite() || !l.im.is_finite()) {
        return Err(Error::numerical("eigenvalue solver produced non-finite values"));
    }

    let one = Complex64::new(1.0, 0.0);
    let radius = tol.sqrt().max(tol);
    let cluster: Vec<usize> = (0..n)
        .filter(|&i| (eigenvalues[i] - one).norm() <= radius)
        .collect();
    let mut alg_mult_one = 0;
    let mut unit_cluster_spread = 0.0_f64;
    if !cluster.is_empty() {
        let mean = cluster.iter().map(|&i| eigenvalues[i]).sum::<Complex64>() / cluster.len() as f64;
        let members: Vec<usize> = if (mean - one).norm() <= tol {
            cluster
        } else {
            cluster
                .into_iter()
                .filter(|&i| (eigenvalues[i] - one).norm() <= tol)
                .collect()
        };
        for &i in &members {
            unit_cluster_spread = unit_cluster_spread.max((eigenvalues[i] - one).norm());
            eigenvalues[i] = one;
        }
        alg_mult_one = members.len();
    }

    eigenvalues.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap()
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    let rho_max_re = eigenvalues.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let rho_min_re = eigenvalues.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);

    let shifted = p - DMatrix::<f64>::identity(n, n);
    let (sigma, right) = smallest_right_singular(&shifted)?;
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let threshold = tol * sigma_max.max(1.0);
    let null_dim = sigma.iter().filter(|&&v| v <= threshold).count();
    let geo_mult_one = null_dim.min(alg_mult_one);
    // U from a rank-deficient SVD is unreliable on the null space, so the left
    // basis comes from the right singular vectors of the transpose.
    let (_, left) = smallest_right_singular(&shifted.transpose())?;

    let mut right_one_basis = DMatrix::zeros(n, geo_mult_one);
    let mut left_one_basis = DMatrix::zeros(geo_mult_one, n);
    for k in 0..geo_mult_one {
        right_one_basis.set_column(k, &canonical_sign(right[k].clone()));
        left_one_basis.set_row(k, &canonical_sign(left[k].clone()).transpose());
    }

    Ok(SpectralSummary {
        eigenvalues,
        rho_max_re,
        rho_min_re,
        alg_mult_one,
        geo_mult_one,
        right_one_basis,
        left_one_basis,
        tol,
        unit_cluster_spread,
    })
}

/// Singular values ascending, with the matching right singular vectors.
fn smallest_right_singular(a: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::numerical("SVD did not return V"))?;
    let sigma = &svd.singular_values;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&x, &y| sigma[x].partial_cmp(&sigma[y]).unwrap().then(x.cmp(&y)));
    Ok((
        order.iter().map(|&k| sigma[k]).collect(),
        order.iter().map(|&k| v_t.row(k).transpose()).collect(),
    ))
}

/// Flip the sign so the largest-magnitude entry is positive.
fn canonical_sign(v: DVector<f64>) -> DVector<f64> {
    let pivot = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 {
        -v
    } else {
        v
    }
}

/// Which clause of the critical-point condition failed.
#[derive(Debug, Clone, PartialEq)]
pub enum A3Violation {
    /// An eigenvalue with unit real part is not equal to 1.
    ComplexUnitRealPart { eigenvalue: Complex64 },
    /// The eigenvalue 1 has fewer independent eigenvectors than its multiplicity.
    Defective { algebraic: usize, geometric: usize },
    /// Some left eigenvector of the eigenvalue 1 is not orthogonal to the input.
    InputNotOrthogonal {
        /// Unit vector in the left eigenspace along which `u` projects.
        left_eigenvector: DVector<f64>,
        projection: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct A3Check {
    pub holds: bool,
    pub witness: Option<A3Violation>,
    /// Some clause was decided within [`BORDERLINE_BAND`] of its tolerance.
    pub borderline: bool,
}

pub fn check_a3(summary: &SpectralSummary, u: &DVector<f64>) -> Result<A3Check> {
    let n = summary.dim();
    check_vector(u, n, "u")?;
    let tol = summary.tol;
    let mut borderline = summary.unit_cluster_is_fragile();

    let one = Complex64::new(1.0, 0.0);
    let mut witness = None;
    for &l in &summary.eigenvalues {
        if (l.re - 1.0).abs() <= tol {
            let dist = (l - one).norm();
            borderline |= near_threshold(dist, tol);
            if dist > tol && witness.is_none() {
                witness = Some(A3Violation::ComplexUnitRealPart { eigenvalue: l });
            }
        }
    }

    if witness.is_none() && !summary.is_semisimple_one() {
        witness = Some(A3Violation::Defective {
            algebraic: summary.alg_mult_one,
            geometric: summary.geo_mult_one,
        });
    }

    if witness.is_none() && summary.geo_mult_one > 0 {
        let w = &summary.left_one_basis;
        let coeffs = w * u;
        let projection = coeffs.iter().fold(0.0_f64, |acc, c| acc.max(c.abs()));
        let bound = tol * (1.0 + u.norm());
        borderline |= near_threshold(projection, bound);
        if projection > bound {
            let xi = w.transpose() * &coeffs;
            let xi = &xi / xi.norm();
            witness = Some(A3Violation::InputNotOrthogonal {
                left_eigenvector: xi,
                projection,
            });
        }
    }

    Ok(A3Check {
        holds: witness.is_none(),
        witness,
        borderline,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum A5Violation {
    /// Need `1 <= r <= r'`.
    Multiplicity { eigenspace_dim: usize, groups: usize },
    /// An eigenvalue-1 eigenvector is not constant on every group.
    NotGroupConstant { column: usize, residual: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct A5Check {
    pub holds: bool,
    pub witness: Option<A5Violation>,
    pub borderline: bool,
}

/// Whether the eigenvalue-1 right eigenspace lies in the span of the group
/// indicator vectors. Assumes the eigenvalue-1 clauses of [`check_a3`] hold.
pub fn check_a5(summary: &SpectralSummary, partition: &Partition) -> Result<A5Check> {
    if partition.n() != summary.dim() {
        return Err(Error::InvalidInput(format!(
            "partition covers {} agents, matrix has {}",
            partition.n(),
            summary.dim()
        )));
    }
    let r = summary.geo_mult_one;
    if r == 0 || r > partition.len() {
        return Ok(A5Check {
            holds: false,
            witness: Some(A5Violation::Multiplicity {
                eigenspace_dim: r,
                groups: partition.len(),
            }),
            borderline: false,
        });
    }

    let tol = summary.tol;
    let mut worst: Option<(usize, f64)> = None;
    let mut borderline = false;
    for (c, col) in summary.right_one_basis.column_iter().enumerate() {
        // Indicators are orthogonal, so projection onto their span is the group mean.
        let mut residual_sq = 0.0;
        for members in partition.groups() {
            let mean = members.iter().map(|&i| col[i]).sum::<f64>() / members.len() as f64;
            residual_sq += members.iter().map(|&i| (col[i] - mean).powi(2)).sum::<f64>();
        }
        let residual = residual_sq.sqrt();
        let bound = tol * col.norm();
        borderline |= near_threshold(residual, bound);
        if residual > bound && worst.is_none_or(|(_, w)| residual > w) {
            worst = Some((c, residual));
        }
    }
    Ok(A5Check {
        holds: worst.is_none(),
        witness: worst.map(|(column, residual)| A5Violation::NotGroupConstant { column, residual }),
        borderline,
    })
}

/// Oblique projector `V (W V)^-1 W` onto the eigenvalue-1 eigenspace along
/// the complementary invariant subspace.
pub fn projector_one(summary: &SpectralSummary) -> Result<DMatrix<f64>> {
    if summary.alg_mult_one == 0 {
        return Err(Error::EmptyEigenspace);
    }
    if !summary.is_semisimple_one() {
        return Err(Error::PreconditionViolated(format!(
            "eigenvalue 1 is defective (algebraic {}, geometric {})",
            summary.alg_mult_one, summary.geo_mult_one
        )));
    }
    let v = &summary.right_one_basis;
    let w = &summary.left_one_basis;
    let wv = w * v;
    let inv = wv
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::numerical("left/right eigenvector Gram matrix is singular"))?;
    let sv = wv.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smin <= smax * 1e-12 {
        return Err(Error::NumericalFailure {
            what: "left/right eigenvector Gram matrix is ill-conditioned".into(),
            condition: Some(smax / smin),
        });
    }
    Ok(v * inv * w)
}
