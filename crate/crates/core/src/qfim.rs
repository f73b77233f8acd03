//! Quantum Fisher information matrix by four independent routes.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eig, trace_of_product, validate_density_matrix, ComplexMatrix, FidelityAnchor,
};
use crate::sld::{check_derivatives, check_support, default_support_tol, SldSet};
use crate::states::{PhaseModel, WhiteNoiseState};

/// Default finite-difference step for the fidelity route.
pub const DEFAULT_FD_STEP: f64 = 1e-3;
/// Relative disagreement between steps `h` and `h/2` that triggers Richardson refinement.
pub const RICHARDSON_TRIGGER: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QfimMethod {
    ClosedForm,
    FromSlds,
    Spectral,
    FidelityFd,
    Pure,
}

impl QfimMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            QfimMethod::ClosedForm => "closed_form",
            QfimMethod::FromSlds => "from_slds",
            QfimMethod::Spectral => "spectral",
            QfimMethod::FidelityFd => "fidelity_fd",
            QfimMethod::Pure => "pure",
        }
    }
}

/// Real symmetric `(d−1)×(d−1)` Fisher information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Qfim {
    pub method: QfimMethod,
    pub entries: DMatrix<f64>,
}

impl Qfim {
    fn symmetrized(method: QfimMethod, m: DMatrix<f64>) -> Self {
        let entries = (&m + m.transpose()) * 0.5;
        Self { method, entries }
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// `‖A − B‖_F / ‖B‖_F` (absolute when `B` vanishes).
    pub fn relative_deviation(&self, reference: &Qfim) -> f64 {
        let diff = (&self.entries - &reference.entries).norm();
        let scale = reference.entries.norm();
        if scale > 0.0 {
            diff / scale
        } else {
            diff
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

/// `F_jk = Re Tr(ρ L_j L_k)`.
pub fn qfim_from_slds(rho: &ComplexMatrix, slds: &SldSet) -> Result<Qfim> {
    if slds.dim() != rho.nrows() && !slds.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: rho.nrows(),
            found: slds.dim(),
        });
    }
    let rho_l: Vec<ComplexMatrix> = slds.operators.iter().map(|l| rho * l).collect();
    let n = slds.len();
    let m = DMatrix::from_fn(n, n, |j, k| {
        trace_of_product(&rho_l[j], &slds.operators[k]).re
    });
    Ok(Qfim::symmetrized(QfimMethod::FromSlds, m))
}

/// `ξ(η) = dη² / (2 + (d−2)η)`.
pub fn ratio_xi(eta: f64, d: usize) -> f64 {
    let d = d as f64;
    d * eta * eta / (2.0 + (d - 2.0) * eta)
}

/// `F_jk = 4dη²/(2 + (d−2)η) · (c_j² δ_jk − c_j² c_k²)`.
pub fn qfim_closed_form(state: &WhiteNoiseState) -> Qfim {
    let prefactor = 4.0 * ratio_xi(state.eta(), state.dim());
    let c2: Vec<f64> = state.model().amplitudes()[1..]
        .iter()
        .map(|x| x * x)
        .collect();
    let n = c2.len();
    let entries = DMatrix::from_fn(n, n, |j, k| {
        let delta = if j == k { c2[j] } else { 0.0 };
        prefactor * (delta - c2[j] * c2[k])
    });
    Qfim {
        method: QfimMethod::ClosedForm,
        entries,
    }
}

/// `F_jk = 4 Re(⟨∂_jΨ|∂_kΨ⟩ − ⟨∂_jΨ|Ψ⟩⟨Ψ|∂_kΨ⟩)` from the state vector.
pub fn qfim_pure(model: &PhaseModel) -> Qfim {
    let psi = model.state_vector();
    let dpsi: Vec<_> = (1..model.dim())
        .map(|k| model.state_derivative(k).expect("index in range"))
        .collect();
    let n = dpsi.len();
    let m = DMatrix::from_fn(n, n, |j, k| {
        let overlap = dpsi[j].dotc(&dpsi[k]);
        let berry = dpsi[j].dotc(&psi) * psi.dotc(&dpsi[k]);
        4.0 * (overlap - berry).re
    });
    Qfim::symmetrized(QfimMethod::Pure, m)
}

/// Pair sum `F_ab = Σ 2 Re[(∂_aρ)_{mn} (∂_bρ)_{nm}] / (λ_m + λ_n)` over pairs
/// with `λ_m + λ_n > support_tol` in the eigenbasis of `ρ`.
pub fn qfim_spectral(
    rho: &ComplexMatrix,
    drho: &[ComplexMatrix],
    support_tol: Option<f64>,
) -> Result<Qfim> {
    validate_density_matrix(rho)?;
    check_derivatives(rho, drho)?;
    let eig = hermitian_eig(rho)?;
    let tol = support_tol.unwrap_or_else(|| default_support_tol(&eig));
    let local: Vec<ComplexMatrix> = drho
        .iter()
        .map(|dr| {
            let l = eig.to_eigenbasis(dr);
            check_support(&eig, &l, tol, dr.norm())?;
            Ok(l)
        })
        .collect::<Result<_>>()?;
    let lambda = &eig.eigenvalues;
    let d = lambda.len();
    let n = drho.len();
    let mut f = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let mut acc = 0.0;
            for m in 0..d {
                for k in 0..d {
                    let sum = lambda[m] + lambda[k];
                    if sum > tol {
                        acc += 2.0 * (local[a][(m, k)] * local[b][(k, m)]).re / sum;
                    }
                }
            }
            f[(a, b)] = acc;
            f[(b, a)] = acc;
        }
    }
    Ok(Qfim {
        method: QfimMethod::Spectral,
        entries: f,
    })
}

fn fidelity_hessian<F>(anchor: &FidelityAnchor, state_at: &F, point: &[f64], h: f64) -> Result<Qfim>
where
    F: Fn(&[f64]) -> Result<ComplexMatrix>,
{
    let n = point.len();
    let fid = |offsets: &[(usize, f64)]| -> Result<f64> {
        let mut shifted = point.to_vec();
        for &(k, delta) in offsets {
            shifted[k] += delta;
        }
        anchor.fidelity(&state_at(&shifted)?)
    };
    let f0 = fid(&[])?;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let second = (fid(&[(j, h)])? - 2.0 * f0 + fid(&[(j, -h)])?) / (h * h);
        m[(j, j)] = -2.0 * second;
        for k in (j + 1)..n {
            let mixed =
                (fid(&[(j, h), (k, h)])? - fid(&[(j, h), (k, -h)])? - fid(&[(j, -h), (k, h)])?
                    + fid(&[(j, -h), (k, -h)])?)
                    / (4.0 * h * h);
            m[(j, k)] = -2.0 * mixed;
            m[(k, j)] = -2.0 * mixed;
        }
    }
    Ok(Qfim::symmetrized(QfimMethod::FidelityFd, m))
}

/// `F_jk = −2 ∂²F_U(ρ_φ, ρ_{φ+u}) / ∂u_j ∂u_k` at `u = 0` by central differences.
///
/// The estimate at `h` is compared with one at `h/2`; when they disagree by
/// more than [`RICHARDSON_TRIGGER`] (relative Frobenius) the Richardson
/// combination `(4 F_{h/2} − F_h) / 3` is returned.
pub fn qfim_fidelity_fd<F>(state_at: F, point: &[f64], step: f64) -> Result<Qfim>
where
    F: Fn(&[f64]) -> Result<ComplexMatrix>,
{
    if !(1e-4..=1e-1).contains(&step) {
        return Err(Error::StepOutOfRange(step));
    }
    let anchor = FidelityAnchor::new(&state_at(point)?)?;
    let coarse = fidelity_hessian(&anchor, &state_at, point, step)?;
    let fine = fidelity_hessian(&anchor, &state_at, point, step / 2.0)?;
    let scale = fine.entries.norm().max(f64::MIN_POSITIVE);
    let gap = (&coarse.entries - &fine.entries).norm() / scale;
    if gap > RICHARDSON_TRIGGER {
        let refined = (&fine.entries * 4.0 - &coarse.entries) / 3.0;
        return Ok(Qfim::symmetrized(QfimMethod::FidelityFd, refined));
    }
    Ok(fine)
}

/// Fidelity route for a white-noise state, perturbing its phases.
pub fn qfim_fidelity_fd_white_noise(state: &WhiteNoiseState, step: f64) -> Result<Qfim> {
    qfim_fidelity_fd(
        |ph| Ok(state.at_phases(ph.to_vec())?.rho().clone()),
        state.model().phases(),
        step,
    )
}

/// Smallest eigenvalue of `η F_pure − F_noisy`; nonnegative when the noisy
/// information never exceeds the scaled pure-state information.
pub fn monotonicity_gap(state: &WhiteNoiseState) -> f64 {
    let pure = qfim_pure(state.model());
    let noisy = qfim_closed_form(state);
    let gap = Qfim {
        method: QfimMethod::ClosedForm,
        entries: pure.entries * state.eta() - noisy.entries,
    };
    gap.eigenvalues().first().copied().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::sampling::{random_instance, random_orthonormal_basis, random_phase_model};
    use crate::sld::{sld_closed_form, sld_eigenbasis};
    use crate::states::{finite_difference_derivatives, LudersFamily, DERIVATIVE_STEP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_state(d: usize, eta: f64) -> WhiteNoiseState {
        let m = PhaseModel::new(vec![1.0 / (d as f64).sqrt(); d], vec![0.3; d - 1]).unwrap();
        WhiteNoiseState::new(m, eta).unwrap()
    }

    fn assert_matrix(q: &Qfim, expected: &[[f64; 2]; 2], tol: f64) {
        for j in 0..2 {
            for k in 0..2 {
                assert!(
                    (q.entries[(j, k)] - expected[j][k]).abs() <= tol,
                    "{:?} vs {expected:?}",
                    q.entries
                );
            }
        }
    }

    const GOLDEN: [[f64; 2]; 2] = [[4.0 / 15.0, -2.0 / 15.0], [-2.0 / 15.0, 4.0 / 15.0]];
    const GOLDEN_PURE: [[f64; 2]; 2] = [[8.0 / 9.0, -4.0 / 9.0], [-4.0 / 9.0, 8.0 / 9.0]];

    #[test]
    fn from_slds_examples() {
        let s = uniform_state(3, 0.0);
        let q = qfim_from_slds(s.rho(), &sld_closed_form(&s)).unwrap();
        assert_eq!(q.entries.norm(), 0.0);

        let s = uniform_state(2, 1.0);
        let q = qfim_from_slds(s.rho(), &sld_closed_form(&s)).unwrap();
        assert!((q.entries[(0, 0)] - 1.0).abs() < 1e-14);

        let s = uniform_state(3, 0.5);
        let q = qfim_from_slds(
            s.rho(),
            &sld_eigenbasis(s.rho(), &s.derivatives(), None).unwrap(),
        )
        .unwrap();
        assert_matrix(&q, &GOLDEN, 1e-12);
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(qfim_closed_form(&uniform_state(3, 0.0)).entries.norm(), 0.0);
        assert_matrix(
            &qfim_closed_form(&uniform_state(3, 1.0)),
            &GOLDEN_PURE,
            1e-15,
        );
        assert_matrix(&qfim_closed_form(&uniform_state(3, 0.5)), &GOLDEN, 1e-15);
    }

    #[test]
    fn pure_examples() {
        let m = PhaseModel::new(vec![1.0, 0.0, 0.0, 0.0], vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(qfim_pure(&m).entries.norm(), 0.0);
        let q = qfim_pure(uniform_state(2, 1.0).model());
        assert!((q.entries[(0, 0)] - 1.0).abs() < 1e-15);
        assert_matrix(
            &qfim_pure(uniform_state(3, 1.0).model()),
            &GOLDEN_PURE,
            1e-15,
        );
    }

    #[test]
    fn spectral_examples() {
        let s = uniform_state(3, 0.4);
        let zeros = vec![ComplexMatrix::zeros(3, 3); 2];
        assert_eq!(
            qfim_spectral(s.rho(), &zeros, None).unwrap().entries.norm(),
            0.0
        );
        let s = uniform_state(3, 0.5);
        assert_matrix(
            &qfim_spectral(s.rho(), &s.derivatives(), None).unwrap(),
            &GOLDEN,
            1e-12,
        );
    }

    #[test]
    fn spectral_rejects_support_violation() {
        let mut rho = ComplexMatrix::zeros(2, 2);
        rho[(0, 0)] = c(1.0, 0.0);
        let mut drho = ComplexMatrix::zeros(2, 2);
        drho[(1, 1)] = c(1.0, 0.0);
        drho[(0, 0)] = c(-1.0, 0.0);
        assert!(matches!(
            qfim_spectral(&rho, &[drho], None),
            Err(Error::SupportViolation(_))
        ));
    }

    #[test]
    fn fidelity_fd_examples() {
        let zero = uniform_state(3, 0.0);
        let q = qfim_fidelity_fd_white_noise(&zero, DEFAULT_FD_STEP).unwrap();
        assert!(q.entries.norm() < 1e-8);

        let pure = uniform_state(2, 1.0);
        let q = qfim_fidelity_fd_white_noise(&pure, 1e-3).unwrap();
        assert!((q.entries[(0, 0)] - 1.0).abs() <= 1e-6, "{}", q.entries);

        let half = uniform_state(3, 0.5);
        let q = qfim_fidelity_fd_white_noise(&half, 1e-3).unwrap();
        assert!(q.relative_deviation(&qfim_closed_form(&half)) <= 1e-4);

        assert_eq!(
            qfim_fidelity_fd_white_noise(&half, 1e-5).unwrap_err(),
            Error::StepOutOfRange(1e-5)
        );
        assert!(qfim_fidelity_fd_white_noise(&half, 0.5).is_err());
    }

    #[test]
    fn fidelity_fd_uses_richardson_for_coarse_steps() {
        let s = uniform_state(3, 0.5);
        let closed = qfim_closed_form(&s);
        let q = qfim_fidelity_fd_white_noise(&s, 0.1).unwrap();
        // a plain second difference at h = 0.05 is off by ~1e-3 relative
        assert!(
            q.relative_deviation(&closed) <= 1e-5,
            "{}",
            q.relative_deviation(&closed)
        );
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(ratio_xi(0.0, 5), 0.0);
        for d in [2, 3, 8, 64, 1000] {
            assert!((ratio_xi(1.0, d) - 1.0).abs() < 1e-15);
        }
        assert_eq!(ratio_xi(0.5, 3), 0.3);
    }

    #[test]
    fn ratio_is_strictly_increasing_and_bounded() {
        for d in [2, 3, 8, 64] {
            let xs: Vec<f64> = (0..1000).map(|i| ratio_xi(i as f64 / 999.0, d)).collect();
            assert!(xs.windows(2).all(|w| w[1] > w[0]));
            assert!(xs.iter().all(|&x| x <= 1.0 + 1e-15));
        }
    }

    #[test]
    fn monotonicity_examples() {
        assert!(monotonicity_gap(&uniform_state(3, 1.0)).abs() < 1e-15);
        assert_eq!(monotonicity_gap(&uniform_state(3, 0.0)), 0.0);
        let gap = monotonicity_gap(&uniform_state(3, 0.5));
        assert!((gap - 4.0 / 45.0).abs() < 1e-14);
    }

    #[test]
    fn methods_agree_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..100 {
            let (m, eta) = random_instance(&mut rng, 2..=12, 0.05..=0.95);
            let s = WhiteNoiseState::new(m, eta).unwrap();
            let closed = qfim_closed_form(&s);
            let slds = sld_eigenbasis(s.rho(), &s.derivatives(), None).unwrap();
            let from = qfim_from_slds(s.rho(), &slds).unwrap();
            let spectral = qfim_spectral(s.rho(), &s.derivatives(), None).unwrap();
            assert!(from.relative_deviation(&closed) <= 1e-9);
            assert!(spectral.relative_deviation(&closed) <= 1e-9);
            assert!(spectral.relative_deviation(&from) <= 1e-10);

            let pure = qfim_pure(s.model());
            let scaled = &pure.entries * ratio_xi(eta, s.dim());
            assert!((&closed.entries - scaled).norm() <= 1e-12);
            assert!(monotonicity_gap(&s) >= -1e-10);

            let ev = closed.eigenvalues();
            assert!(ev[0] >= -1e-9 * ev.last().unwrap());
        }
    }

    #[test]
    fn fidelity_agrees_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        for _ in 0..20 {
            let (m, eta) = random_instance(&mut rng, 2..=8, 0.05..=0.95);
            let s = WhiteNoiseState::new(m, eta).unwrap();
            let q = qfim_fidelity_fd_white_noise(&s, DEFAULT_FD_STEP).unwrap();
            assert!(q.relative_deviation(&qfim_closed_form(&s)) <= 1e-4);
        }
    }

    #[test]
    fn closed_form_is_parameter_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let s = WhiteNoiseState::new(random_phase_model(&mut rng, 6), 0.4).unwrap();
        let reference = qfim_closed_form(&s);
        for _ in 0..10 {
            let phases: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let moved = s.at_phases(phases).unwrap();
            assert!((qfim_closed_form(&moved).entries - &reference.entries).norm() <= 1e-12);
            let numeric = qfim_spectral(moved.rho(), &moved.derivatives(), None).unwrap();
            assert!(numeric.relative_deviation(&reference) <= 1e-9);
        }
    }

    #[test]
    fn row_sums_follow_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..50 {
            let (m, eta) = random_instance(&mut rng, 2..=12, 0.0..=1.0);
            let s = WhiteNoiseState::new(m, eta).unwrap();
            let q = qfim_closed_form(&s);
            let c = s.model().amplitudes();
            let prefactor = 4.0 * ratio_xi(eta, s.dim());
            for j in 0..q.size() {
                let row: f64 = q.entries.row(j).sum();
                let expected = prefactor * c[j + 1].powi(2) * c[0].powi(2);
                assert!((row - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn luders_spectral_matches_fidelity() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let family = LudersFamily::new(random_orthonormal_basis(&mut rng, 4, 2), 0.5).unwrap();
        let point = [0.4, -0.2, 1.0];
        let drho =
            finite_difference_derivatives(|p| family.rho_at(p), &point, DERIVATIVE_STEP).unwrap();
        let spectral = qfim_spectral(&family.rho_at(&point).unwrap(), &drho, None).unwrap();
        let fd = qfim_fidelity_fd(|p| family.rho_at(p), &point, DEFAULT_FD_STEP).unwrap();
        assert!(fd.relative_deviation(&spectral) <= 1e-4);
    }
}
