//! Seeded random instances for self-tests and property checks.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;

use crate::linalg::{c, hermitian_part, ComplexMatrix, ComplexVector};
use crate::states::PhaseModel;

/// Hermitian matrix with entries drawn uniformly from the unit box.
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| {
        c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    hermitian_part(&a)
}

/// Full-rank density matrix `A A† / Tr(A A†)`.
pub fn random_density_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| {
        c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let m = hermitian_part(&(&a * a.adjoint()));
    let tr = m.trace().re;
    m.unscale(tr)
}

/// Amplitudes with magnitudes in `[0.1, 1]` and random signs, normalized.
pub fn random_amplitudes<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..d)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    raw.into_iter().map(|x| x / norm).collect()
}

pub fn random_phases<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (1..d).map(|_| rng.gen_range(0.0..2.0 * PI)).collect()
}

pub fn random_phase_model<R: Rng + ?Sized>(rng: &mut R, d: usize) -> PhaseModel {
    let amplitudes = random_amplitudes(rng, d);
    let phases = random_phases(rng, d);
    PhaseModel::new(amplitudes, phases).expect("sampled amplitudes are normalized")
}

/// A white-noise problem instance: dimension in `dims`, eta in `etas`.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    dims: std::ops::RangeInclusive<usize>,
    etas: std::ops::RangeInclusive<f64>,
) -> (PhaseModel, f64) {
    let d = rng.gen_range(dims);
    let eta = rng.gen_range(etas);
    (random_phase_model(rng, d), eta)
}

/// `r` orthonormal vectors in `C^d` via Gram-Schmidt on random vectors.
pub fn random_orthonormal_basis<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    r: usize,
) -> Vec<ComplexVector> {
    assert!(
        r <= d,
        "cannot draw {r} orthonormal vectors in dimension {d}"
    );
    let mut basis: Vec<ComplexVector> = Vec::with_capacity(r);
    while basis.len() < r {
        let mut v = ComplexVector::from_fn(d, |_, _| {
            c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        for u in &basis {
            let overlap = u.dotc(&v);
            v -= u * overlap;
        }
        let norm = v.norm();
        if norm > 1e-6 {
            basis.push(v.unscale(norm));
        }
    }
    basis
}
