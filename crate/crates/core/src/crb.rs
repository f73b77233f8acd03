//! Cramér–Rao attainability, minimal total variance and optimal estimators.
//!
//! The rotation `Q` has the QFIM eigenvectors as its rows, so that the rotated
//! parameters `λ = Q φ` have diagonal information `Q F Qᵀ` and the rotated
//! SLDs are `L_λ = Q L_φ`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{identity, trace_of_product, ComplexMatrix};
use crate::qfim::{qfim_from_slds, Qfim};
use crate::sld::SldSet;

/// Default tolerance for the weak-commutativity residual.
pub const ATTAINABILITY_TOL: f64 = 1e-10;
/// Tolerance on `Q Qᵀ = I` for user-supplied rotations.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attainability {
    pub attainable: bool,
    /// `max_{j<k} |Im Tr(ρ L_j L_k)| / max(1, ‖F‖_F)`.
    pub max_im_residual: f64,
}

pub fn attainability_check(rho: &ComplexMatrix, slds: &SldSet, tol: f64) -> Result<Attainability> {
    let f = qfim_from_slds(rho, slds)?;
    let rho_l: Vec<ComplexMatrix> = slds.operators.iter().map(|l| rho * l).collect();
    let mut worst = 0.0_f64;
    for (j, rl) in rho_l.iter().enumerate() {
        for l in &slds.operators[j + 1..] {
            worst = worst.max(trace_of_product(rl, l).im.abs());
        }
    }
    let max_im_residual = worst / f.entries.norm().max(1.0);
    Ok(Attainability {
        attainable: max_im_residual <= tol,
        max_im_residual,
    })
}

/// Ascending eigenvalues of the QFIM and the orthogonal matrix whose rows are
/// the matching eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct QfimDiagonalization {
    pub eigenvalues: Vec<f64>,
    pub rotation: DMatrix<f64>,
}

/// Eigenvectors are signed so that their first non-negligible component is positive.
pub fn diagonalize_qfim(f: &Qfim) -> QfimDiagonalization {
    let n = f.size();
    let eig = SymmetricEigen::new(f.entries.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut rotation = DMatrix::zeros(n, n);
    for (row, &col) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(col);
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |x| x.signum());
        for i in 0..n {
            rotation[(row, i)] = sign * v[i];
        }
    }
    QfimDiagonalization {
        eigenvalues: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        rotation,
    }
}

/// Eigenvalues at or below this are treated as unidentifiable directions.
pub fn singular_tol(eigenvalues: &[f64]) -> f64 {
    let top = eigenvalues.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if top > 0.0 {
        1e-12 * top
    } else {
        1e-300
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalVariance {
    /// `(1/M) Σ_μ 1/F_μ`, or `+∞` when some direction carries no information.
    pub value: f64,
    /// Null-space directions (rows of `Q`) responsible for an infinite bound.
    pub singular_directions: Vec<Vec<f64>>,
}

pub fn min_total_variance(f: &Qfim, measurement_count: u64) -> Result<TotalVariance> {
    if measurement_count == 0 {
        return Err(Error::InvalidArgument(
            "measurement count must be at least 1".into(),
        ));
    }
    let diag = diagonalize_qfim(f);
    Ok(total_variance_from(&diag, measurement_count))
}

fn total_variance_from(diag: &QfimDiagonalization, measurement_count: u64) -> TotalVariance {
    let tol = singular_tol(&diag.eigenvalues);
    let singular_directions: Vec<Vec<f64>> = diag
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &x)| x <= tol)
        .map(|(i, _)| diag.rotation.row(i).iter().copied().collect())
        .collect();
    let value = if singular_directions.is_empty() {
        diag.eigenvalues.iter().map(|x| 1.0 / x).sum::<f64>() / measurement_count as f64
    } else {
        f64::INFINITY
    };
    TotalVariance {
        value,
        singular_directions,
    }
}

/// `(L_λ)_i = Σ_j Q_ij (L_φ)_j`.
pub fn rotated_slds(slds: &SldSet, rotation: &DMatrix<f64>) -> Result<SldSet> {
    let n = slds.len();
    if rotation.nrows() != n || rotation.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: rotation.nrows(),
        });
    }
    let defect = (rotation * rotation.transpose() - DMatrix::<f64>::identity(n, n)).norm();
    if defect > ORTHOGONALITY_TOL {
        return Err(Error::NotOrthogonal(defect));
    }
    let d = slds.dim();
    let operators = (0..n)
        .map(|i| {
            slds.operators
                .iter()
                .enumerate()
                .fold(ComplexMatrix::zeros(d, d), |acc, (j, l)| {
                    acc + l.scale(rotation[(i, j)])
                })
        })
        .collect();
    Ok(SldSet {
        method: slds.method,
        operators,
    })
}

/// `O_{λ_k} = λ_k I + L_{λ_k} / F_{λ_k}`.
pub fn optimal_estimators(
    rotated: &SldSet,
    lambda_point: &[f64],
    f_lambda: &[f64],
) -> Result<Vec<ComplexMatrix>> {
    let n = rotated.len();
    for len in [lambda_point.len(), f_lambda.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: len,
            });
        }
    }
    let tol = singular_tol(f_lambda);
    if let Some(&bad) = f_lambda.iter().find(|&&x| x <= tol) {
        return Err(Error::SingularInformation(bad));
    }
    let d = rotated.dim();
    Ok(rotated
        .operators
        .iter()
        .zip(lambda_point.iter().zip(f_lambda))
        .map(|(l, (&lambda, &fl))| identity(d).scale(lambda) + l.unscale(fl))
        .collect())
}

/// `Cov_jk = Re Tr(ρ (O_j O_k + O_k O_j)/2) − λ_j λ_k`.
pub fn estimator_covariance(
    rho: &ComplexMatrix,
    estimators: &[ComplexMatrix],
    lambda_point: &[f64],
) -> Result<DMatrix<f64>> {
    let n = estimators.len();
    if lambda_point.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: lambda_point.len(),
        });
    }
    if let Some(o) = estimators.iter().find(|o| o.shape() != rho.shape()) {
        return Err(Error::DimensionMismatch {
            expected: rho.nrows(),
            found: o.nrows(),
        });
    }
    let rho_o: Vec<ComplexMatrix> = estimators.iter().map(|o| rho * o).collect();
    let mut cov = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in j..n {
            let sym = 0.5
                * (trace_of_product(&rho_o[j], &estimators[k]).re
                    + trace_of_product(&rho_o[k], &estimators[j]).re);
            let v = sym - lambda_point[j] * lambda_point[k];
            cov[(j, k)] = v;
            cov[(k, j)] = v;
        }
    }
    Ok(cov)
}

#[derive(Debug, Clone)]
pub struct CrbReport {
    pub attainability: Attainability,
    pub qfim_eigenvalues: Vec<f64>,
    pub rotation: DMatrix<f64>,
    pub measurement_count: u64,
    pub min_total_variance: TotalVariance,
    /// `λ = Q φ`.
    pub lambda_point: Vec<f64>,
    /// Present only when the information is nonsingular.
    pub estimators: Option<Vec<ComplexMatrix>>,
    pub estimator_covariance: Option<DMatrix<f64>>,
}

impl CrbReport {
    pub fn is_singular(&self) -> bool {
        !self.min_total_variance.singular_directions.is_empty()
    }

    /// Assembles the report from SLDs valid at `phases` and the QFIM built from them.
    pub fn build(
        rho: &ComplexMatrix,
        slds: &SldSet,
        qfim: &Qfim,
        phases: &[f64],
        measurement_count: u64,
    ) -> Result<Self> {
        if measurement_count == 0 {
            return Err(Error::InvalidArgument(
                "measurement count must be at least 1".into(),
            ));
        }
        let attainability = attainability_check(rho, slds, ATTAINABILITY_TOL)?;
        let diag = diagonalize_qfim(qfim);
        let min_total_variance = total_variance_from(&diag, measurement_count);
        let lambda_point: Vec<f64> = (&diag.rotation
            * nalgebra::DVector::from_column_slice(phases))
        .iter()
        .copied()
        .collect();
        let (estimators, estimator_covariance) =
            if min_total_variance.singular_directions.is_empty() {
                let rotated = rotated_slds(slds, &diag.rotation)?;
                let estimators = optimal_estimators(&rotated, &lambda_point, &diag.eigenvalues)?;
                let cov = estimator_covariance(rho, &estimators, &lambda_point)?;
                (Some(estimators), Some(cov))
            } else {
                (None, None)
            };
        Ok(Self {
            attainability,
            qfim_eigenvalues: diag.eigenvalues,
            rotation: diag.rotation,
            measurement_count,
            min_total_variance,
            lambda_point,
            estimators,
            estimator_covariance,
        })
    }
}
