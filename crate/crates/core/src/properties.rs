use nalgebra::DMatrix;
use proptest::prelude::*;

use crate::crb::{min_total_variance, CrbReport};
use crate::linalg::{
    c, commutator, hermitian_eig, hermitian_exp, identity, trace, trace_of_product,
};
use crate::qfim::{
    monotonicity_gap, qfim_closed_form, qfim_fidelity_fd_white_noise, qfim_from_slds, qfim_pure,
    qfim_spectral, ratio_xi, Qfim, QfimMethod, DEFAULT_FD_STEP,
};
use crate::sld::{
    generating_coefficients, sld_closed_form, sld_eigenbasis, sld_series, SERIES_ALPHA_LIMIT,
};
use crate::states::{PhaseModel, WhiteNoiseState};

fn model(max_d: usize) -> impl Strategy<Value = PhaseModel> {
    (2..=max_d).prop_flat_map(|d| {
        (
            prop::collection::vec((0.1f64..1.0, any::<bool>()), d),
            prop::collection::vec(0.0..std::f64::consts::TAU, d - 1),
        )
            .prop_map(|(mags, phases)| {
                let raw: Vec<f64> = mags
                    .iter()
                    .map(|&(m, neg)| if neg { -m } else { m })
                    .collect();
                PhaseModel::normalized(raw, phases).unwrap().0
            })
    })
}

fn state(max_d: usize) -> impl Strategy<Value = WhiteNoiseState> {
    (model(max_d), 0.05f64..0.95).prop_map(|(m, eta)| WhiteNoiseState::new(m, eta).unwrap())
}

fn max_op_deviation(a: &[crate::linalg::ComplexMatrix], b: &[crate::linalg::ComplexMatrix]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exponential_form_reproduces_state(s in state(10)) {
        let g = s.generator().unwrap();
        let e = hermitian_exp(&g).unwrap();
        prop_assert!((e - s.rho()).norm() <= 1e-10);
    }

    #[test]
    fn commutation_relations(m in model(12)) {
        let p = m.projector();
        for k in 1..m.dim() {
            let a = m.derivative_operator(k).unwrap();
            let ad = a.adjoint();
            let ip = p.map(|z| z * c(0.0, m.amplitudes()[k].powi(2)));
            prop_assert!((commutator(&p, &a).unwrap() - (&ip - &a)).norm() <= 1e-12);
            prop_assert!((commutator(&p, &ad).unwrap() - (&ip + &ad)).norm() <= 1e-12);
            let pd = m.projector_derivative(k).unwrap();
            let nested = commutator(&p, &commutator(&p, &pd).unwrap()).unwrap();
            prop_assert!((nested - &pd).norm() <= 1e-12);
            prop_assert!(trace(&pd).norm() <= 1e-12);
            prop_assert!(trace_of_product(&p, &pd).norm() <= 1e-12);
        }
    }

    #[test]
    fn spectrum_is_two_level(s in state(12)) {
        let eig = hermitian_eig(s.rho()).unwrap();
        let (top, rest) = s.analytic_spectrum();
        let d = s.dim();
        for &x in &eig.eigenvalues[..d - 1] {
            prop_assert!((x - rest).abs() <= 1e-12);
        }
        prop_assert!((eig.eigenvalues[d - 1] - top).abs() <= 1e-12);
    }

    #[test]
    fn eigenbasis_slds_match_closed_form(s in state(12)) {
        let closed = sld_closed_form(&s);
        let eig = sld_eigenbasis(s.rho(), &s.derivatives(), None).unwrap();
        prop_assert!(max_op_deviation(&closed.operators, &eig.operators) <= 1e-9);
        for set in [&closed, &eig] {
            prop_assert!(set.max_hermiticity_defect() <= 1e-10);
            prop_assert!(set.max_mean(s.rho()) <= 1e-10);
            prop_assert!(set.max_residual(s.rho(), &s.derivatives()).unwrap() <= 1e-10);
        }
    }

    // Alternating series with shrinking terms: the error never grows and is
    // bounded by the first omitted term.
    #[test]
    fn series_error_is_monotone_and_bounded(s in state(6)) {
        let alpha = s.alpha();
        prop_assume!(alpha < SERIES_ALPHA_LIMIT);
        let closed = sld_closed_form(&s);
        let full = generating_coefficients(41).unwrap();
        let pd_norm = s.model().projector_derivatives().iter().map(|p| p.norm()).fold(0.0, f64::max);
        let mut previous = f64::INFINITY;
        for n in 2..=40 {
            let spec = generating_coefficients(n).unwrap();
            let series = sld_series(&s, &spec).unwrap();
            let err = max_op_deviation(&series.operators, &closed.operators);
            let omitted = full.even_coefficients[n].abs() * alpha.powi(2 * n as i32 + 1) * pd_norm;
            prop_assert!(err <= omitted + 1e-12, "n = {n}: error {err} above bound {omitted}");
            prop_assert!(err <= previous + 1e-12, "n = {n}: error rose from {previous} to {err}");
            previous = err;
        }
    }

    #[test]
    fn series_converges_well_inside_the_disk(m in model(6), eta in 0.05f64..0.95) {
        let s = WhiteNoiseState::new(m, eta).unwrap();
        prop_assume!(s.alpha() <= 2.3);
        let series = sld_series(&s, &generating_coefficients(40).unwrap()).unwrap();
        prop_assert!(max_op_deviation(&series.operators, &sld_closed_form(&s).operators) <= 1e-8);
    }

    #[test]
    fn qfim_methods_agree(s in state(8)) {
        let closed = qfim_closed_form(&s);
        let slds = sld_eigenbasis(s.rho(), &s.derivatives(), None).unwrap();
        prop_assert!(qfim_from_slds(s.rho(), &slds).unwrap().relative_deviation(&closed) <= 1e-9);
        prop_assert!(qfim_spectral(s.rho(), &s.derivatives(), None).unwrap().relative_deviation(&closed) <= 1e-9);
        prop_assert!(qfim_fidelity_fd_white_noise(&s, DEFAULT_FD_STEP).unwrap().relative_deviation(&closed) <= 1e-4);
    }

    #[test]
    fn qfim_is_scaled_pure_information(s in state(12)) {
        let closed = qfim_closed_form(&s);
        let scaled = qfim_pure(s.model()).entries * ratio_xi(s.eta(), s.dim());
        prop_assert!((&closed.entries - scaled).norm() <= 1e-12);
        prop_assert!((&closed.entries - closed.entries.transpose()).norm() == 0.0);
        prop_assert!(closed.eigenvalues()[0] >= -1e-12);
        prop_assert!(monotonicity_gap(&s) >= -1e-10);
    }

    #[test]
    fn qfim_ignores_phases(s in state(12), seed_phases in prop::collection::vec(0.0..std::f64::consts::TAU, 15)) {
        let n = s.model().num_params();
        let other = s.at_phases(seed_phases[..n].to_vec()).unwrap();
        prop_assert!((qfim_closed_form(&s).entries - qfim_closed_form(&other).entries).norm() <= 1e-12);
    }

    #[test]
    fn row_sums(s in state(12)) {
        let f = qfim_closed_form(&s);
        let (d, eta) = (s.dim(), s.eta());
        let c = s.model().amplitudes();
        for j in 0..d - 1 {
            let sum: f64 = f.entries.row(j).iter().sum();
            let expected = 4.0 * d as f64 * eta * eta / (2.0 + (d as f64 - 2.0) * eta) * c[j + 1].powi(2) * c[0].powi(2);
            prop_assert!((sum - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn estimators_saturate_the_bound(s in state(8)) {
        let slds = sld_closed_form(&s);
        let f = qfim_closed_form(&s);
        let report = CrbReport::build(s.rho(), &slds, &f, s.model().phases(), 1).unwrap();
        for j in 0..slds.len() {
            for k in 0..slds.len() {
                let t = trace_of_product(s.rho(), &(&slds.operators[j] * &slds.operators[k]));
                prop_assert!(t.im.abs() <= 1e-12);
            }
        }
        let cov = report.estimator_covariance.unwrap();
        let tv = report.min_total_variance.value;
        prop_assert!((cov.trace() - tv).abs() <= 1e-9 * tv.max(1.0));
    }

    #[test]
    fn total_variance_is_rotation_invariant(s in state(8), angles in prop::collection::vec(-3.0f64..3.0, 8)) {
        let f = qfim_closed_form(&s);
        let n = f.size();
        // orthogonal matrix from the QR factor of a seeded matrix
        let a = DMatrix::from_fn(n, n, |i, j| angles[(i * 3 + j) % angles.len()] + if i == j { 4.0 } else { 0.0 });
        let q = a.qr().q();
        let rotated = Qfim { method: QfimMethod::ClosedForm, entries: &q * &f.entries * q.transpose() };
        let before = min_total_variance(&f, 1).unwrap().value;
        let after = min_total_variance(&rotated, 1).unwrap().value;
        prop_assert!((before - after).abs() <= 1e-10 * before.max(1.0));
    }

    #[test]
    fn total_variance_scales_with_measurements(s in state(8)) {
        let f = qfim_closed_form(&s);
        let one = min_total_variance(&f, 1).unwrap().value;
        for m in [10u64, 100] {
            prop_assert_eq!(min_total_variance(&f, m).unwrap().value, one / m as f64);
        }
    }
}

#[test]
fn xi_strictly_increasing() {
    for d in [2usize, 3, 8, 64] {
        let xs: Vec<f64> = (0..1000).map(|i| ratio_xi(i as f64 / 999.0, d)).collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]), "d = {d}");
    }
}

#[test]
fn exponential_identity_shortcut() {
    let m = PhaseModel::new(vec![0.6, 0.8], vec![0.4]).unwrap();
    let s = WhiteNoiseState::new(m, 0.3).unwrap();
    let p = s.model().projector();
    let shortcut = (identity(2) + p.scale(s.alpha().exp() - 1.0)).scale(s.beta().exp());
    assert!((shortcut - s.rho()).norm() <= 1e-12);
}
