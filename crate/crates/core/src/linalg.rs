//! Dense complex-matrix primitives.
//!
//! Storage and arithmetic come from `nalgebra`; this module adds the checked
//! Hermitian eigendecomposition, PSD square root, Uhlmann fidelity and Bures
//! distance used throughout the crate.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;
pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

/// Relative tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Eigenvalues of PSD inputs in `[-PSD_CLAMP, 0)` are clamped to zero.
pub const PSD_CLAMP: f64 = 1e-10;
/// Trace tolerance for density matrices.
pub const TRACE_TOL: f64 = 1e-10;

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex::new(re, im)
}

/// Builds a matrix from rows, rejecting ragged input and non-finite entries.
pub fn matrix_from_rows(rows: &[Vec<Complex64>]) -> Result<ComplexMatrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::InvalidArgument("matrix must be at least 1x1".into()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            expected: ncols,
            found: bad.len(),
        });
    }
    let m = DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite(&m)?;
    Ok(m)
}

pub fn ensure_finite(m: &ComplexMatrix) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub fn ensure_square(m: &ComplexMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare(m.nrows(), m.ncols()));
    }
    Ok(m.nrows())
}

fn ensure_same_dim(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<usize> {
    let n = ensure_square(a)?;
    let m = ensure_square(b)?;
    if n != m {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m,
        });
    }
    Ok(n)
}

/// Frobenius norm of `M - M†`.
pub fn hermiticity_defect(m: &ComplexMatrix) -> f64 {
    (m - m.adjoint()).norm()
}

/// `(M + M†) / 2`.
pub fn hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn trace(m: &ComplexMatrix) -> Complex64 {
    m.diagonal().sum()
}

/// `Tr(AB)` without forming the product.
pub fn trace_of_product(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

fn check_hermitian(m: &ComplexMatrix) -> Result<()> {
    ensure_square(m)?;
    ensure_finite(m)?;
    let defect = hermiticity_defect(m);
    if defect > HERMITIAN_TOL * m.norm().max(1.0) {
        return Err(Error::NonHermitian(defect));
    }
    Ok(())
}

/// Spectral decomposition of a Hermitian matrix with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub eigenvalues: Vec<f64>,
    /// Unitary matrix whose columns are the eigenvectors.
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEig {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V f(Λ) V†` for a real function of the eigenvalues.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let v = &self.eigenvectors;
        let n = self.dim();
        let mut scaled = v.clone();
        for (j, &lambda) in self.eigenvalues.iter().enumerate() {
            let s = f(lambda);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        scaled * v.adjoint()
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.map_spectrum(|x| x)
    }

    /// Expresses `M` in the eigenbasis: `V† M V`.
    pub fn to_eigenbasis(&self, m: &ComplexMatrix) -> ComplexMatrix {
        self.eigenvectors.adjoint() * m * &self.eigenvectors
    }

    pub fn from_eigenbasis(&self, m: &ComplexMatrix) -> ComplexMatrix {
        &self.eigenvectors * m * self.eigenvectors.adjoint()
    }
}

pub fn hermitian_eig(m: &ComplexMatrix) -> Result<HermitianEig> {
    check_hermitian(m)?;
    let n = m.nrows();
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Cutoff below which a nonnegative eigenvalue is indistinguishable from zero.
fn roundoff_floor(eigenvalues: &[f64]) -> f64 {
    let top = eigenvalues.iter().fold(0.0_f64, |m, &x| m.max(x.abs()));
    eigenvalues.len() as f64 * f64::EPSILON * top
}

fn clamped_spectrum(eig: &HermitianEig) -> Result<Vec<f64>> {
    let floor = roundoff_floor(&eig.eigenvalues);
    eig.eigenvalues
        .iter()
        .map(|&x| {
            if x < -PSD_CLAMP {
                Err(Error::NegativeEigenvalue(x))
            } else if x <= floor {
                Ok(0.0)
            } else {
                Ok(x)
            }
        })
        .collect()
}

/// Principal square root of a Hermitian PSD matrix.
///
/// Eigenvalues within rounding of zero (including small negatives down to
/// `-PSD_CLAMP`) are treated as exact zeros so that rank-deficient inputs
/// produce rank-deficient roots.
pub fn matrix_sqrt_psd(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(m)?;
    let spectrum = clamped_spectrum(&eig)?;
    let clamped = HermitianEig {
        eigenvalues: spectrum,
        eigenvectors: eig.eigenvectors,
    };
    Ok(clamped.map_spectrum(f64::sqrt))
}

/// Checks Hermiticity, unit trace and positivity within the crate tolerances.
pub fn validate_density_matrix(rho: &ComplexMatrix) -> Result<()> {
    check_hermitian(rho).map_err(|e| match e {
        Error::NonHermitian(d) => Error::NotDensityMatrix(format!("non-Hermitian (defect {d:e})")),
        other => other,
    })?;
    let tr = trace(rho);
    if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
        return Err(Error::NotDensityMatrix(format!(
            "trace {} + {}i",
            tr.re, tr.im
        )));
    }
    let eig = hermitian_eig(rho)?;
    if eig.eigenvalues[0] < -PSD_CLAMP {
        return Err(Error::NotDensityMatrix(format!(
            "negative eigenvalue {:e}",
            eig.eigenvalues[0]
        )));
    }
    Ok(())
}

/// Precomputed `√ρ` for repeated fidelity evaluations against one state.
#[derive(Debug, Clone)]
pub struct FidelityAnchor {
    sqrt_rho: ComplexMatrix,
}

impl FidelityAnchor {
    pub fn new(rho: &ComplexMatrix) -> Result<Self> {
        validate_density_matrix(rho)?;
        Ok(Self {
            sqrt_rho: matrix_sqrt_psd(rho)?,
        })
    }

    /// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²` against the anchored `ρ`.
    pub fn fidelity(&self, sigma: &ComplexMatrix) -> Result<f64> {
        if sigma.nrows() != self.sqrt_rho.nrows() || sigma.ncols() != self.sqrt_rho.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.sqrt_rho.nrows(),
                found: sigma.nrows(),
            });
        }
        validate_density_matrix(sigma)?;
        let inner = hermitian_part(&(&self.sqrt_rho * sigma * &self.sqrt_rho));
        let eig = hermitian_eig(&inner)?;
        let root_trace: f64 = clamped_spectrum(&eig)?.iter().map(|x| x.sqrt()).sum();
        Ok((root_trace * root_trace).clamp(0.0, 1.0))
    }
}

pub fn uhlmann_fidelity(rho1: &ComplexMatrix, rho2: &ComplexMatrix) -> Result<f64> {
    ensure_same_dim(rho1, rho2)?;
    FidelityAnchor::new(rho1)?.fidelity(rho2)
}

/// `√(2 − 2√F_U)`.
pub fn bures_distance(rho1: &ComplexMatrix, rho2: &ComplexMatrix) -> Result<f64> {
    let f = uhlmann_fidelity(rho1, rho2)?;
    Ok((2.0 - 2.0 * f.sqrt()).max(0.0).sqrt())
}

pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    ensure_same_dim(a, b)?;
    Ok(a * b - b * a)
}

pub fn anticommutator(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    ensure_same_dim(a, b)?;
    Ok(a * b + b * a)
}

pub fn identity(n: usize) -> ComplexMatrix {
    DMatrix::identity(n, n)
}

/// `|u⟩⟨v|`.
pub fn outer(u: &ComplexVector, v: &ComplexVector) -> ComplexMatrix {
    u * v.adjoint()
}

/// Matrix exponential of a Hermitian matrix through its eigendecomposition.
pub fn hermitian_exp(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    Ok(hermitian_eig(m)?.map_spectrum(f64::exp))
}
