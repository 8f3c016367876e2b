//! Seeded generators for randomized audit scenarios.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::interconnect::{InputSignal, SineComponent};
use crate::system::QuadraticForm;

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// sign of `R`'s diagonal fixed).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n, n).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Symmetric positive definite matrix with eigenvalues uniform in `[lo, hi]`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let u = random_orthogonal(rng, n);
    let eig = DVector::from_fn(n, |_, _| rng.random_range(lo..=hi));
    let m = &u * DMatrix::from_diagonal(&eig) * u.transpose();
    (&m + m.transpose()) * 0.5
}

/// Skew-symmetric matrix scaled to spectral norm `norm`.
pub fn random_skew<R: Rng + ?Sized>(rng: &mut R, n: usize, norm: f64) -> DMatrix<f64> {
    let a = gaussian_matrix(rng, n, n);
    let s = &a - a.transpose();
    let sn = s.clone().svd(false, false).singular_values.max();
    if sn == 0.0 {
        return s;
    }
    s * (norm / sn)
}

/// Point on the level set `sigma = level` along a uniformly random direction.
pub fn random_point_on_level<R: Rng + ?Sized>(rng: &mut R, q: &QuadraticForm, level: f64) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, q.dim());
        if v.norm() > 1e-6 {
            return q
                .scale_to_level(&v, level)
                .expect("nonzero direction and admissible level");
        }
    }
}

/// Sum of `components` sinusoids per channel with amplitudes up to
/// `max_amplitude` and angular frequencies in `[0.5, 4 pi]`.
pub fn random_sines<R: Rng + ?Sized>(rng: &mut R, m: usize, components: usize, max_amplitude: f64) -> InputSignal {
    let components = (0..components)
        .map(|_| SineComponent {
            amplitude: DVector::from_fn(m, |_, _| rng.random_range(-max_amplitude..=max_amplitude)),
            omega: rng.random_range(0.5..=4.0 * std::f64::consts::PI),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    InputSignal::Sines { m, components }
}
