//! Phase-encoded pure states, their white-noise mixtures and Lüders-type
//! rank-r mixtures.
//!
//! The pure state is `|Ψ(φ)⟩ = Σ_k c_k e^{iφ_k} |k⟩` with real amplitudes
//! `c_k` and the gauge `φ_0 = 0`. Phase indices `k` run over `1..=d-1` and
//! name the basis state carrying the phase.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{c, identity, outer, Complex64, ComplexMatrix, ComplexVector};

/// Tolerance on `Σ c_k² = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-10;
/// Tolerance on the orthonormality of a Lüders basis.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Real amplitudes and the `d - 1` free phases of a pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModel {
    amplitudes: Vec<f64>,
    phases: Vec<f64>,
}

impl PhaseModel {
    /// Strict constructor: amplitudes must already be normalized.
    pub fn new(amplitudes: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        Self::check_shape(&amplitudes, &phases)?;
        let norm2: f64 = amplitudes.iter().map(|x| x * x).sum();
        if (norm2 - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized(norm2));
        }
        Ok(Self { amplitudes, phases })
    }

    /// Rescales the amplitudes to unit norm. The flag reports whether the
    /// input deviated from unit norm beyond tolerance.
    pub fn normalized(amplitudes: Vec<f64>, phases: Vec<f64>) -> Result<(Self, bool)> {
        Self::check_shape(&amplitudes, &phases)?;
        let norm2: f64 = amplitudes.iter().map(|x| x * x).sum();
        if norm2 == 0.0 {
            return Err(Error::NotNormalized(norm2));
        }
        let rescaled = (norm2 - 1.0).abs() > NORMALIZATION_TOL;
        let norm = norm2.sqrt();
        let amplitudes = amplitudes.into_iter().map(|x| x / norm).collect();
        Ok((Self { amplitudes, phases }, rescaled))
    }

    fn check_shape(amplitudes: &[f64], phases: &[f64]) -> Result<()> {
        let d = amplitudes.len();
        if d < 2 {
            return Err(Error::InvalidArgument(format!(
                "dimension must be at least 2, got {d}"
            )));
        }
        if phases.len() != d - 1 {
            return Err(Error::DimensionMismatch {
                expected: d - 1,
                found: phases.len(),
            });
        }
        if !amplitudes.iter().chain(phases).all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite amplitude or phase".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// Number of estimated phases, `d - 1`.
    pub fn num_params(&self) -> usize {
        self.phases.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Same amplitudes at a different phase point.
    pub fn with_phases(&self, phases: Vec<f64>) -> Result<Self> {
        Self::new(self.amplitudes.clone(), phases)
    }

    fn phase(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.phases[k - 1]
        }
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k == 0 || k >= self.dim() {
            return Err(Error::IndexOutOfRange {
                index: k,
                max: self.dim() - 1,
            });
        }
        Ok(())
    }

    /// `|Ψ(φ)⟩`.
    pub fn state_vector(&self) -> ComplexVector {
        ComplexVector::from_fn(self.dim(), |k, _| {
            Complex64::from_polar(self.amplitudes[k], self.phase(k))
        })
    }

    /// `|∂_{φ_k} Ψ⟩ = i c_k e^{iφ_k} |k⟩`.
    pub fn state_derivative(&self, k: usize) -> Result<ComplexVector> {
        self.check_index(k)?;
        let mut v = ComplexVector::zeros(self.dim());
        v[k] = c(0.0, 1.0) * Complex64::from_polar(self.amplitudes[k], self.phase(k));
        Ok(v)
    }

    /// `P = |Ψ⟩⟨Ψ|`.
    pub fn projector(&self) -> ComplexMatrix {
        let psi = self.state_vector();
        outer(&psi, &psi)
    }

    /// `A_k = |∂_{φ_k}Ψ⟩⟨Ψ| = i c_k e^{iφ_k} |k⟩⟨Ψ|`.
    pub fn derivative_operator(&self, k: usize) -> Result<ComplexMatrix> {
        Ok(outer(&self.state_derivative(k)?, &self.state_vector()))
    }

    /// `Ṗ_k = A_k + A_k†`.
    pub fn projector_derivative(&self, k: usize) -> Result<ComplexMatrix> {
        let a = self.derivative_operator(k)?;
        Ok(&a + a.adjoint())
    }

    /// `Ṗ_1 .. Ṗ_{d-1}`.
    pub fn projector_derivatives(&self) -> Vec<ComplexMatrix> {
        (1..self.dim())
            .map(|k| self.projector_derivative(k).expect("index in range"))
            .collect()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::EtaOutOfRange(eta));
    }
    Ok(())
}

/// Exponential-form coefficients `(α, β)` with `ρ = exp(αP + β)`.
///
/// `α` is `+∞` at `η = 1`.
pub fn exponential_coefficients(eta: f64, d: usize) -> (f64, f64) {
    let d = d as f64;
    if eta >= 1.0 {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    let alpha = (((d - 1.0) * eta + 1.0) / (1.0 - eta)).ln();
    let beta = ((1.0 - eta) / d).ln();
    (alpha, beta)
}

/// `ρ = η P(φ) + (1 − η)/d · I`.
#[derive(Debug, Clone)]
pub struct WhiteNoiseState {
    model: PhaseModel,
    eta: f64,
    rho: ComplexMatrix,
    alpha: f64,
    beta: f64,
}

impl WhiteNoiseState {
    pub fn new(model: PhaseModel, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        let d = model.dim();
        let rho = model.projector().scale(eta) + identity(d).scale((1.0 - eta) / d as f64);
        let (alpha, beta) = exponential_coefficients(eta, d);
        Ok(Self {
            model,
            eta,
            rho,
            alpha,
            beta,
        })
    }

    pub fn model(&self) -> &PhaseModel {
        &self.model
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn rho(&self) -> &ComplexMatrix {
        &self.rho
    }

    /// `+∞` at `η = 1`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `−∞` at `η = 1`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `(η + (1−η)/d, (1−η)/d)`: the nondegenerate and the `(d−1)`-fold eigenvalue.
    pub fn analytic_spectrum(&self) -> (f64, f64) {
        let floor = (1.0 - self.eta) / self.dim() as f64;
        (self.eta + floor, floor)
    }

    /// `G = αP + β·I`; undefined at `η = 1`.
    pub fn generator(&self) -> Result<ComplexMatrix> {
        if !self.alpha.is_finite() {
            return Err(Error::EtaEndpoint(self.eta));
        }
        Ok(self.model.projector().scale(self.alpha) + identity(self.dim()).scale(self.beta))
    }

    /// `∂ρ/∂φ_k = η Ṗ_k`.
    pub fn derivative(&self, k: usize) -> Result<ComplexMatrix> {
        Ok(self.model.projector_derivative(k)?.scale(self.eta))
    }

    pub fn derivatives(&self) -> Vec<ComplexMatrix> {
        self.model
            .projector_derivatives()
            .into_iter()
            .map(|p| p.scale(self.eta))
            .collect()
    }

    /// The same reliability at another phase point.
    pub fn at_phases(&self, phases: Vec<f64>) -> Result<Self> {
        Self::new(self.model.with_phases(phases)?, self.eta)
    }
}

/// `ρ = (η/r) P̃ + (1 − η)/d · I` for a rank-`r` projector `P̃`.
#[derive(Debug, Clone)]
pub struct LudersState {
    basis: Vec<ComplexVector>,
    eta: f64,
    rho: ComplexMatrix,
}

impl LudersState {
    pub fn new(basis: Vec<ComplexVector>, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        let r = basis.len();
        let d = basis.first().map_or(0, |v| v.len());
        if r == 0 || d == 0 {
            return Err(Error::InvalidArgument(
                "Lüders basis must be non-empty".into(),
            ));
        }
        if r > d {
            return Err(Error::InvalidArgument(format!(
                "subspace dimension {r} exceeds state dimension {d}"
            )));
        }
        if let Some(v) = basis.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
        let gram = DMatrix::from_fn(r, r, |i, j| basis[i].dotc(&basis[j]));
        let defect = (gram - identity(r)).norm();
        if defect > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(defect));
        }
        let projector = basis
            .iter()
            .fold(ComplexMatrix::zeros(d, d), |acc, v| acc + outer(v, v));
        let rho = projector.scale(eta / r as f64) + identity(d).scale((1.0 - eta) / d as f64);
        Ok(Self { basis, eta, rho })
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn basis(&self) -> &[ComplexVector] {
        &self.basis
    }

    pub fn rho(&self) -> &ComplexMatrix {
        &self.rho
    }
}

/// Lüders states whose projector carries the phase encoding of the pure-state
/// family: the reference basis is rotated by `diag(1, e^{iφ_1}, …, e^{iφ_{d-1}})`.
///
/// At `r = 1` with a real reference vector `c` this reproduces the white-noise
/// family.
#[derive(Debug, Clone)]
pub struct LudersFamily {
    reference: Vec<ComplexVector>,
    eta: f64,
}

impl LudersFamily {
    pub fn new(reference: Vec<ComplexVector>, eta: f64) -> Result<Self> {
        // validates basis and eta once
        LudersState::new(reference.clone(), eta)?;
        Ok(Self { reference, eta })
    }

    pub fn dim(&self) -> usize {
        self.reference[0].len()
    }

    pub fn rank(&self) -> usize {
        self.reference.len()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn reference(&self) -> &[ComplexVector] {
        &self.reference
    }

    pub fn state_at(&self, phases: &[f64]) -> Result<LudersState> {
        let d = self.dim();
        if phases.len() != d - 1 {
            return Err(Error::DimensionMismatch {
                expected: d - 1,
                found: phases.len(),
            });
        }
        let rotated = self
            .reference
            .iter()
            .map(|v| {
                ComplexVector::from_fn(d, |k, _| {
                    let phase = if k == 0 { 0.0 } else { phases[k - 1] };
                    v[k] * Complex64::from_polar(1.0, phase)
                })
            })
            .collect();
        LudersState::new(rotated, self.eta)
    }

    pub fn rho_at(&self, phases: &[f64]) -> Result<ComplexMatrix> {
        Ok(self.state_at(phases)?.rho)
    }
}

/// Default step for central-difference derivatives of a state family.
pub const DERIVATIVE_STEP: f64 = 1e-5;

/// Central differences `[ρ(φ + h e_k) − ρ(φ − h e_k)] / 2h` for every phase.
pub fn finite_difference_derivatives<F>(
    state_at: F,
    point: &[f64],
    step: f64,
) -> Result<Vec<ComplexMatrix>>
where
    F: Fn(&[f64]) -> Result<ComplexMatrix>,
{
    let mut shifted = point.to_vec();
    (0..point.len())
        .map(|k| {
            shifted[k] = point[k] + step;
            let plus = state_at(&shifted)?;
            shifted[k] = point[k] - step;
            let minus = state_at(&shifted)?;
            shifted[k] = point[k];
            Ok((plus - minus).unscale(2.0 * step))
        })
        .collect()
}
