//! Symmetric logarithmic derivatives `L_k` solving `∂_k ρ = (ρ L_k + L_k ρ)/2`.
//!
//! Three routes are provided for the white-noise family:
//!
//! * [`sld_closed_form`]: `L_k = 2dη / (2 + (d−2)η) · Ṗ_k`, valid for `η ∈ [0, 1]`.
//! * [`sld_eigenbasis`]: the generic solve in the eigenbasis of `ρ`, usable for any
//!   density matrix (including the Lüders family).
//! * [`sld_series`]: the partial sums of `L = Σ_n f_n G^{×n}(Ġ)` for the exponential
//!   form `ρ = exp(G)`, `G = αP + β`, with `f(t) = tanh(t/2)/(t/2)`. The Taylor
//!   series of `f` has radius `π`, so this route is restricted to `α < π − 0.1`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_square, hermitian_eig, hermitian_part, hermiticity_defect, trace_of_product,
    validate_density_matrix, ComplexMatrix, HermitianEig,
};
use crate::states::WhiteNoiseState;

/// Largest Bernoulli index computed by [`bernoulli_numbers`].
pub const MAX_BERNOULLI_INDEX: usize = 128;
/// Largest number of even-order terms accepted by [`generating_coefficients`].
pub const MAX_SERIES_TERMS: usize = MAX_BERNOULLI_INDEX / 2;
/// The series route refuses `α` at or above this value.
pub const SERIES_ALPHA_LIMIT: f64 = std::f64::consts::PI - 0.1;
/// Weight of `∂ρ` allowed outside the support, relative to `max(1, ‖∂ρ‖_F)`.
pub const SUPPORT_LEAK_TOL: f64 = 1e-9;

/// How a set of SLDs was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SldMethod {
    ClosedForm,
    Eigenbasis,
    Series,
}

impl SldMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SldMethod::ClosedForm => "closed_form",
            SldMethod::Eigenbasis => "eigenbasis",
            SldMethod::Series => "series",
        }
    }
}

/// The `d − 1` SLD operators at one parameter point; `operators[k - 1]` is `L_k`.
#[derive(Debug, Clone)]
pub struct SldSet {
    pub method: SldMethod,
    pub operators: Vec<ComplexMatrix>,
}

impl SldSet {
    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.operators.first().map_or(0, |l| l.nrows())
    }

    pub fn max_hermiticity_defect(&self) -> f64 {
        self.operators
            .iter()
            .map(hermiticity_defect)
            .fold(0.0, f64::max)
    }

    /// Largest `|Tr(ρ L_k)|`.
    pub fn max_mean(&self, rho: &ComplexMatrix) -> f64 {
        self.operators
            .iter()
            .map(|l| trace_of_product(rho, l).norm())
            .fold(0.0, f64::max)
    }

    /// Largest [`verify_sld`] residual against the given derivatives.
    pub fn max_residual(&self, rho: &ComplexMatrix, drho: &[ComplexMatrix]) -> Result<f64> {
        if drho.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: drho.len(),
            });
        }
        self.operators
            .iter()
            .zip(drho)
            .try_fold(0.0_f64, |acc, (l, dr)| Ok(acc.max(verify_sld(rho, dr, l)?)))
    }
}

/// Exact Bernoulli numbers `B_0..=B_n` (convention `B_1 = −1/2`) from
/// `Σ_{k=0}^{m} C(m+1, k) B_k = 0`.
pub fn bernoulli_exact(n_max: usize) -> Result<Vec<BigRational>> {
    if n_max > MAX_BERNOULLI_INDEX {
        return Err(Error::NMaxTooLarge {
            requested: n_max,
            max: MAX_BERNOULLI_INDEX,
        });
    }
    let mut b: Vec<BigRational> = Vec::with_capacity(n_max + 1);
    b.push(BigRational::one());
    for m in 1..=n_max {
        if m > 1 && m % 2 == 1 {
            b.push(BigRational::zero());
            continue;
        }
        // binomial row C(m+1, k), built incrementally
        let mut binom = BigInt::one();
        let mut acc = BigRational::zero();
        for (k, bk) in b.iter().enumerate() {
            if !bk.is_zero() {
                acc += bk * BigRational::from_integer(binom.clone());
            }
            binom = binom * BigInt::from(m + 1 - k) / BigInt::from(k + 1);
        }
        b.push(-acc / BigRational::from_integer(BigInt::from(m + 1)));
    }
    Ok(b)
}

pub fn bernoulli_numbers(n_max: usize) -> Result<Vec<f64>> {
    Ok(bernoulli_exact(n_max)?
        .iter()
        .map(|x| x.to_f64().expect("Bernoulli numbers are finite"))
        .collect())
}

/// Even-order Taylor coefficients of `f(t) = tanh(t/2)/(t/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSpec {
    /// `f_0, f_2, f_4, …`
    pub even_coefficients: Vec<f64>,
}

impl SeriesSpec {
    /// Number of even-order terms.
    pub fn n_terms(&self) -> usize {
        self.even_coefficients.len()
    }

    /// Coefficient `f_n` of `t^n`; zero for odd `n` and beyond the truncation.
    pub fn coefficient(&self, order: usize) -> f64 {
        if order % 2 == 1 {
            return 0.0;
        }
        self.even_coefficients
            .get(order / 2)
            .copied()
            .unwrap_or(0.0)
    }

    /// Partial sum `t f(t)` through the stored terms.
    pub fn eval_scaled(&self, t: f64) -> f64 {
        let t2 = t * t;
        self.even_coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, &f| acc * t2 + f)
            * t
    }
}

/// `f_{2n} = 4(4^{n+1} − 1) B_{2n+2} / (2n+2)!` for `n < n_terms`.
pub fn generating_coefficients(n_terms: usize) -> Result<SeriesSpec> {
    if n_terms == 0 {
        return Err(Error::InvalidArgument(
            "at least one series term is required".into(),
        ));
    }
    if n_terms > MAX_SERIES_TERMS {
        return Err(Error::NMaxTooLarge {
            requested: n_terms,
            max: MAX_SERIES_TERMS,
        });
    }
    let b = bernoulli_exact(2 * n_terms)?;
    let mut factorial = BigInt::from(2);
    let mut even_coefficients = Vec::with_capacity(n_terms);
    for n in 0..n_terms {
        let m = 2 * n + 2;
        if n > 0 {
            factorial *= BigInt::from((m - 1) * m);
        }
        let four_pow = BigInt::from(4).pow((n + 1) as u32);
        let numerator = BigInt::from(4) * (four_pow - BigInt::one());
        let f = &b[m] * BigRational::new(numerator, factorial.clone());
        even_coefficients.push(f.to_f64().expect("series coefficients are finite"));
    }
    Ok(SeriesSpec { even_coefficients })
}

/// `2dη / (2 + (d−2)η)`, equal to `2 tanh(α/2)` on `η ∈ (0, 1)`.
pub fn sld_coefficient(eta: f64, d: usize) -> f64 {
    let d = d as f64;
    2.0 * d * eta / (2.0 + (d - 2.0) * eta)
}

pub fn sld_closed_form(state: &WhiteNoiseState) -> SldSet {
    let coefficient = sld_coefficient(state.eta(), state.dim());
    SldSet {
        method: SldMethod::ClosedForm,
        operators: state
            .model()
            .projector_derivatives()
            .into_iter()
            .map(|p| p.scale(coefficient))
            .collect(),
    }
}

/// Default support cutoff: `1e-12 × λ_max`.
pub fn default_support_tol(eig: &HermitianEig) -> f64 {
    1e-12 * eig.eigenvalues.last().copied().unwrap_or(0.0).max(0.0)
}

pub(crate) fn check_derivatives(rho: &ComplexMatrix, drho: &[ComplexMatrix]) -> Result<()> {
    let d = rho.nrows();
    for dr in drho {
        let n = ensure_square(dr)?;
        if n != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: n,
            });
        }
        let defect = hermiticity_defect(dr);
        if defect > crate::linalg::HERMITIAN_TOL * dr.norm().max(1.0) {
            return Err(Error::NonHermitian(defect));
        }
    }
    Ok(())
}

/// Rejects derivative weight on eigenvalue pairs outside the support.
pub(crate) fn check_support(
    eig: &HermitianEig,
    derivative_in_eigenbasis: &ComplexMatrix,
    support_tol: f64,
    scale: f64,
) -> Result<()> {
    let lambda = &eig.eigenvalues;
    let n = lambda.len();
    let mut leak = 0.0_f64;
    for m in 0..n {
        for k in 0..n {
            if lambda[m] + lambda[k] <= support_tol {
                leak += derivative_in_eigenbasis[(m, k)].norm_sqr();
            }
        }
    }
    let leak = leak.sqrt();
    if leak > SUPPORT_LEAK_TOL * scale.max(1.0) {
        return Err(Error::SupportViolation(leak));
    }
    Ok(())
}

/// Generic SLD solve: `(L_k)_{mn} = 2 (∂_k ρ)_{mn} / (λ_m + λ_n)` in the
/// eigenbasis of `ρ`, with pairs outside the support set to zero.
pub fn sld_eigenbasis(
    rho: &ComplexMatrix,
    drho: &[ComplexMatrix],
    support_tol: Option<f64>,
) -> Result<SldSet> {
    validate_density_matrix(rho)?;
    check_derivatives(rho, drho)?;
    let eig = hermitian_eig(rho)?;
    let tol = support_tol.unwrap_or_else(|| default_support_tol(&eig));
    let lambda = &eig.eigenvalues;
    let operators = drho
        .iter()
        .map(|dr| {
            let mut local = eig.to_eigenbasis(dr);
            check_support(&eig, &local, tol, dr.norm())?;
            for m in 0..lambda.len() {
                for k in 0..lambda.len() {
                    let sum = lambda[m] + lambda[k];
                    local[(m, k)] = if sum > tol {
                        local[(m, k)] * (2.0 / sum)
                    } else {
                        num_traits::Zero::zero()
                    };
                }
            }
            Ok(hermitian_part(&eig.from_eigenbasis(&local)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SldSet {
        method: SldMethod::Eigenbasis,
        operators,
    })
}

/// Partial sum of `Σ_n f_n G^{×n}(Ġ_k)` with `Ġ_k = α Ṗ_k`, built from literal
/// repeated commutators. Odd orders carry zero coefficients but are still
/// generated, since each even order is reached through them.
pub fn sld_series(state: &WhiteNoiseState, spec: &SeriesSpec) -> Result<SldSet> {
    let eta = state.eta();
    if eta <= 0.0 || eta >= 1.0 {
        return Err(Error::EtaEndpoint(eta));
    }
    let alpha = state.alpha();
    if alpha >= SERIES_ALPHA_LIMIT {
        return Err(Error::AlphaOutOfConvergenceDomain(alpha));
    }
    let g = state.generator()?;
    let orders = 2 * spec.n_terms();
    let operators = state
        .model()
        .projector_derivatives()
        .into_iter()
        .map(|pd| {
            let mut term = pd.scale(alpha);
            let mut sum = term.scale(spec.coefficient(0));
            for order in 1..orders {
                term = &g * &term - &term * &g;
                let f = spec.coefficient(order);
                if f != 0.0 {
                    sum += term.scale(f);
                }
            }
            hermitian_part(&sum)
        })
        .collect();
    Ok(SldSet {
        method: SldMethod::Series,
        operators,
    })
}

/// `‖∂_k ρ − (ρ L_k + L_k ρ)/2‖_F / max(1, ‖∂_k ρ‖_F)`.
pub fn verify_sld(rho: &ComplexMatrix, drho: &ComplexMatrix, l: &ComplexMatrix) -> Result<f64> {
    let n = ensure_square(rho)?;
    for m in [drho, l] {
        let k = ensure_square(m)?;
        if k != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: k,
            });
        }
    }
    let sym = (rho * l + l * rho).scale(0.5);
    Ok((drho - sym).norm() / drho.norm().max(1.0))
}
