//! Generalized Bloch representation of N-level states.
//!
//! States are N×N density matrices; their Bloch vectors live in R^(N²−1) and
//! are expanded on the generalized Gell-Mann generators Λᵢ, normalized so that
//! `Tr(Λᵢ Λⱼ) = 2 δᵢⱼ`. Coordinates are scaled by `c_N = sqrt(N / (2(N−1)))`,
//! which puts every pure state on the unit sphere for all N.
//!
//! The inverse map is defined on the whole ball but only a convex subset of it
//! yields positive semidefinite matrices (for N ≥ 3). [`is_bona_fide`]
//! distinguishes the two.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{EbrError, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Tolerance for exact algebraic identities (hermiticity, trace).
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Tolerance for eigenvalue-based checks.
pub const EIGEN_TOL: f64 = 1e-10;
/// Tolerance on the norm of inputs that must be unit vectors.
pub const UNIT_NORM_TOL: f64 = 1e-8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Bloch coordinate scale `c_N`.
pub fn normalization(dim: usize) -> f64 {
    let n = dim as f64;
    (n / (2.0 * (n - 1.0))).sqrt()
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Largest entrywise deviation from hermiticity.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues (ascending) and column eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigen(m).0[0]
}

/// Rank-one projector `|v⟩⟨v|` for a normalized column.
pub fn projector(v: &DVector<Complex64>) -> CMatrix {
    v * v.adjoint()
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        Err(EbrError::DimensionTooSmall(dim))
    } else {
        Ok(())
    }
}

/// The N²−1 traceless Hermitian generators of su(N).
#[derive(Debug, Clone)]
pub struct GeneratorBasis {
    dim: usize,
    generators: Vec<CMatrix>,
}

impl GeneratorBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generators(&self) -> &[CMatrix] {
        &self.generators
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn normalization(&self) -> f64 {
        normalization(self.dim)
    }
}

/// Generalized Gell-Mann matrices, ordered as: symmetric `E_jk + E_kj`,
/// antisymmetric `−i E_jk + i E_kj` (both over `j < k` lexicographically),
/// then the N−1 diagonal generators.
///
/// For N = 2 this yields the Pauli matrices (σx, σy, σz).
pub fn build_generators(dim: usize) -> Result<GeneratorBasis> {
    check_dim(dim)?;
    let n = dim;
    let mut generators = Vec::with_capacity(n * n - 1);

    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| ((j + 1)..n).map(move |k| (j, k)))
        .collect();

    for &(j, k) in &pairs {
        let mut m = CMatrix::zeros(n, n);
        m[(j, k)] = ONE;
        m[(k, j)] = ONE;
        generators.push(m);
    }
    for &(j, k) in &pairs {
        let mut m = CMatrix::zeros(n, n);
        m[(j, k)] = -I;
        m[(k, j)] = I;
        generators.push(m);
    }
    for l in 1..n {
        let lf = l as f64;
        let scale = (2.0 / (lf * (lf + 1.0))).sqrt();
        let mut m = CMatrix::zeros(n, n);
        for d in 0..l {
            m[(d, d)] = Complex64::new(scale, 0.0);
        }
        m[(l, l)] = Complex64::new(-lf * scale, 0.0);
        generators.push(m);
    }

    Ok(GeneratorBasis { dim, generators })
}

/// A validated quantum state: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        if rows != cols {
            return Err(EbrError::NotSquare { rows, cols });
        }
        check_dim(rows)?;
        let defect = hermiticity_defect(&matrix);
        if defect > ALGEBRAIC_TOL {
            return Err(EbrError::NotHermitian(defect));
        }
        let trace = matrix.trace();
        if (trace.re - 1.0).abs() > ALGEBRAIC_TOL || trace.im.abs() > ALGEBRAIC_TOL {
            return Err(EbrError::TraceNotOne(trace.re));
        }
        let min = min_eigenvalue(&matrix);
        if min < -EIGEN_TOL {
            return Err(EbrError::NotPositive(min));
        }
        Ok(Self { matrix })
    }

    /// Pure state from (unnormalized) amplitudes.
    pub fn pure(amplitudes: &[Complex64]) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let v = DVector::from_column_slice(amplitudes);
        let norm = v.norm();
        if norm == 0.0 {
            return Err(EbrError::InvalidArgument("zero state vector".into()));
        }
        Ok(Self {
            matrix: projector(&(v / Complex64::new(norm, 0.0))),
        })
    }

    pub fn basis_state(dim: usize, k: usize) -> Result<Self> {
        check_dim(dim)?;
        if k >= dim {
            return Err(EbrError::InvalidArgument(format!(
                "basis index {k} out of range for dimension {dim}"
            )));
        }
        let mut m = CMatrix::zeros(dim, dim);
        m[(k, k)] = ONE;
        Ok(Self { matrix: m })
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            matrix: CMatrix::identity(dim, dim) / Complex64::new(dim as f64, 0.0),
        })
    }

    /// Haar-random pure state (normalized complex Gaussian amplitudes).
    pub fn random_pure<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        check_dim(dim)?;
        let amps: Vec<Complex64> = (0..dim)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        Self::pure(&amps)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    /// `Tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        trace_product(&self.matrix, &self.matrix).re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }
}

/// Real coordinates of a state in the (N²−1)-dimensional Bloch ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    dim: usize,
    coords: Vec<f64>,
}

impl BlochVector {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if coords.len() != dim * dim - 1 {
            return Err(EbrError::DimensionMismatch {
                expected: dim * dim - 1,
                actual: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(EbrError::InvalidArgument(
                "Bloch coordinates must be finite".into(),
            ));
        }
        Ok(Self { dim, coords })
    }

    pub fn zero(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            coords: vec![0.0; dim * dim - 1],
        })
    }

    /// Uniformly random direction on the unit sphere of R^(N²−1).
    pub fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        check_dim(dim)?;
        loop {
            let coords: Vec<f64> = (0..dim * dim - 1)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let norm = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 1e-300 {
                return Ok(Self {
                    dim,
                    coords: coords.into_iter().map(|c| c / norm).collect(),
                });
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &BlochVector) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn distance(&self, other: &BlochVector) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn from_raw(dim: usize, coords: Vec<f64>) -> Self {
        debug_assert_eq!(coords.len(), dim * dim - 1);
        Self { dim, coords }
    }

    pub(crate) fn ensure_dim(&self, dim: usize) -> Result<()> {
        if self.dim != dim {
            Err(EbrError::DimensionMismatch {
                expected: dim,
                actual: self.dim,
            })
        } else {
            Ok(())
        }
    }
}

fn ensure_same_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        Err(EbrError::DimensionMismatch { expected, actual })
    } else {
        Ok(())
    }
}

/// `rᵢ = c_N · Tr(ρ Λᵢ)`.
pub fn state_to_bloch(state: &DensityMatrix, basis: &GeneratorBasis) -> Result<BlochVector> {
    ensure_same_dim(basis.dim(), state.dim())?;
    Ok(matrix_to_bloch(state.matrix(), basis))
}

/// Same map applied to any Hermitian matrix of matching size (e.g. a projector).
pub(crate) fn matrix_to_bloch(m: &CMatrix, basis: &GeneratorBasis) -> BlochVector {
    let c = basis.normalization();
    let coords = basis
        .generators()
        .iter()
        .map(|g| c * trace_product(m, g).re)
        .collect();
    BlochVector::from_raw(basis.dim(), coords)
}

/// `M = I/N + (1/(2 c_N)) Σ rᵢ Λᵢ`.
///
/// The result is Hermitian with unit trace but need not be positive; wrap it
/// with [`DensityMatrix::new`] to validate.
pub fn bloch_to_state(vec: &BlochVector, basis: &GeneratorBasis) -> Result<CMatrix> {
    ensure_same_dim(basis.dim(), vec.dim())?;
    let n = basis.dim();
    let scale = 0.5 / basis.normalization();
    let mut m = CMatrix::identity(n, n) / Complex64::new(n as f64, 0.0);
    for (r, g) in vec.coords().iter().zip(basis.generators()) {
        if *r != 0.0 {
            m += g * Complex64::new(scale * r, 0.0);
        }
    }
    Ok(m)
}

/// Minimum eigenvalue of the matrix reconstructed from `vec`.
pub fn candidate_min_eigenvalue(vec: &BlochVector, basis: &GeneratorBasis) -> Result<f64> {
    Ok(min_eigenvalue(&bloch_to_state(vec, basis)?))
}

pub fn is_bona_fide(vec: &BlochVector, basis: &GeneratorBasis) -> Result<bool> {
    Ok(candidate_min_eigenvalue(vec, basis)? >= -EIGEN_TOL)
}

/// Angle between two unit Bloch vectors, in `[0, π]`.
pub fn bloch_angle(a: &BlochVector, b: &BlochVector) -> Result<f64> {
    ensure_same_dim(a.dim(), b.dim())?;
    for v in [a, b] {
        let norm = v.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(EbrError::NotUnitNorm(norm));
        }
    }
    Ok(a.dot(b).clamp(-1.0, 1.0).acos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_mixed(dim: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
        // Convex mixture of a few random pure states.
        let k = 3;
        let weights: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = weights.iter().sum();
        let mut m = CMatrix::zeros(dim, dim);
        for w in weights {
            let p = DensityMatrix::random_pure(dim, rng).unwrap();
            m += p.matrix() * c(w / total, 0.0);
        }
        DensityMatrix::new(m).unwrap()
    }

    #[test]
    fn pauli_matrices_for_qubit() {
        let basis = build_generators(2).unwrap();
        let g = basis.generators();
        assert_eq!(g.len(), 3);
        let sx = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]);
        let sy = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]);
        let sz = CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]);
        assert_eq!(g[0], sx);
        assert_eq!(g[1], sy);
        assert_eq!(g[2], sz);
    }

    #[test]
    fn generators_are_orthonormal_traceless_hermitian() {
        for n in 2..=6 {
            let basis = build_generators(n).unwrap();
            assert_eq!(basis.len(), n * n - 1);
            for (i, a) in basis.generators().iter().enumerate() {
                assert!(hermiticity_defect(a) <= ALGEBRAIC_TOL);
                assert!(a.trace().norm() <= ALGEBRAIC_TOL);
                for (j, b) in basis.generators().iter().enumerate() {
                    let expected = if i == j { 2.0 } else { 0.0 };
                    assert!((trace_product(a, b) - c(expected, 0.0)).norm() <= ALGEBRAIC_TOL);
                }
            }
        }
    }

    #[test]
    fn rejects_dimension_below_two() {
        assert_eq!(
            build_generators(1).unwrap_err(),
            EbrError::DimensionTooSmall(1)
        );
        assert!(build_generators(0).is_err());
    }

    #[test]
    fn qubit_ground_state_points_up() {
        let basis = build_generators(2).unwrap();
        let up = DensityMatrix::basis_state(2, 0).unwrap();
        let r = state_to_bloch(&up, &basis).unwrap();
        assert_eq!(r.coords(), &[0.0, 0.0, 1.0]);

        let mixed = DensityMatrix::maximally_mixed(2).unwrap();
        let r = state_to_bloch(&mixed, &basis).unwrap();
        assert!(r.norm() <= ALGEBRAIC_TOL);
    }

    #[test]
    fn inverse_map_examples() {
        let basis = build_generators(2).unwrap();
        let up = BlochVector::new(2, vec![0.0, 0.0, 1.0]).unwrap();
        let m = bloch_to_state(&up, &basis).unwrap();
        let expected = DensityMatrix::basis_state(2, 0).unwrap();
        assert!((m - expected.matrix()).norm() <= ALGEBRAIC_TOL);

        for n in 2..=5 {
            let basis = build_generators(n).unwrap();
            let m = bloch_to_state(&BlochVector::zero(n).unwrap(), &basis).unwrap();
            let mixed = DensityMatrix::maximally_mixed(n).unwrap();
            assert!((m - mixed.matrix()).norm() <= ALGEBRAIC_TOL);
        }
    }

    #[test]
    fn pure_states_land_on_unit_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..=6 {
            let basis = build_generators(n).unwrap();
            for _ in 0..20 {
                let psi = DensityMatrix::random_pure(n, &mut rng).unwrap();
                let r = state_to_bloch(&psi, &basis).unwrap();
                assert!((r.norm() - 1.0).abs() <= EIGEN_TOL);
            }
        }
    }

    #[test]
    fn purity_law_for_mixed_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=6 {
            let basis = build_generators(n).unwrap();
            let nf = n as f64;
            for _ in 0..20 {
                let rho = random_mixed(n, &mut rng);
                let r = state_to_bloch(&rho, &basis).unwrap();
                let expected = 1.0 / nf + (1.0 - 1.0 / nf) * r.norm().powi(2);
                assert!((rho.purity() - expected).abs() <= EIGEN_TOL);
                assert!(r.norm() <= 1.0 + EIGEN_TOL);
            }
        }
    }

    #[test]
    fn round_trip_on_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..=6 {
            let basis = build_generators(n).unwrap();
            for _ in 0..10 {
                let rho = random_mixed(n, &mut rng);
                let r = state_to_bloch(&rho, &basis).unwrap();
                let back = bloch_to_state(&r, &basis).unwrap();
                assert!((back - rho.matrix()).camax() <= ALGEBRAIC_TOL);
                let again = matrix_to_bloch(&bloch_to_state(&r, &basis).unwrap(), &basis);
                for (a, b) in again.coords().iter().zip(r.coords()) {
                    assert!((a - b).abs() <= ALGEBRAIC_TOL);
                }
            }
        }
    }

    #[test]
    fn orthogonal_pure_states_have_fixed_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=6 {
            let basis = build_generators(n).unwrap();
            // Columns of a random unitary: eigenvectors of a random Hermitian matrix.
            let h = CMatrix::from_fn(n, n, |_, _| {
                c(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            let h = &h + h.adjoint();
            let (_, vecs) = hermitian_eigen(&h);
            let a = matrix_to_bloch(&projector(&vecs.column(0).into_owned()), &basis);
            let b = matrix_to_bloch(&projector(&vecs.column(1).into_owned()), &basis);
            assert!((a.dot(&b) + 1.0 / (n as f64 - 1.0)).abs() <= EIGEN_TOL);
        }
    }

    #[test]
    fn qubit_sphere_is_all_states_qutrit_is_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let b2 = build_generators(2).unwrap();
        for _ in 0..200 {
            let v = BlochVector::random_unit(2, &mut rng).unwrap();
            assert!(is_bona_fide(&v, &b2).unwrap());
        }
        let b3 = build_generators(3).unwrap();
        // Along the last diagonal generator: M = diag(2/3, 2/3, -1/3).
        let mut coords = vec![0.0; 8];
        coords[7] = 1.0;
        let v = BlochVector::new(3, coords).unwrap();
        let m = bloch_to_state(&v, &b3).unwrap();
        assert!(hermiticity_defect(&m) <= ALGEBRAIC_TOL);
        assert!((m.trace() - ONE).norm() <= ALGEBRAIC_TOL);
        assert!(!is_bona_fide(&v, &b3).unwrap());
        assert!(DensityMatrix::new(m).is_err());

        for n in 2..=5 {
            let basis = build_generators(n).unwrap();
            assert!(is_bona_fide(&BlochVector::zero(n).unwrap(), &basis).unwrap());
        }
    }

    #[test]
    fn angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = BlochVector::random_unit(3, &mut rng).unwrap();
        assert!(bloch_angle(&a, &a).unwrap().abs() < 1e-7);

        let up = BlochVector::new(2, vec![0.0, 0.0, 1.0]).unwrap();
        let down = BlochVector::new(2, vec![0.0, 0.0, -1.0]).unwrap();
        assert!((bloch_angle(&up, &down).unwrap() - std::f64::consts::PI).abs() < 1e-12);

        let basis = build_generators(3).unwrap();
        let e0 = state_to_bloch(&DensityMatrix::basis_state(3, 0).unwrap(), &basis).unwrap();
        let e1 = state_to_bloch(&DensityMatrix::basis_state(3, 1).unwrap(), &basis).unwrap();
        let theta = bloch_angle(&e0, &e1).unwrap();
        assert!((theta - (-0.5_f64).acos()).abs() < 1e-10);

        let short = BlochVector::new(2, vec![0.0, 0.0, 0.5]).unwrap();
        assert!(matches!(
            bloch_angle(&short, &up),
            Err(EbrError::NotUnitNorm(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let b2 = build_generators(2).unwrap();
        let rho3 = DensityMatrix::maximally_mixed(3).unwrap();
        assert!(matches!(
            state_to_bloch(&rho3, &b2),
            Err(EbrError::DimensionMismatch { .. })
        ));
        assert!(BlochVector::new(3, vec![0.0; 3]).is_err());
    }

    #[test]
    fn density_matrix_validation() {
        let bad_trace = CMatrix::identity(2, 2);
        assert!(matches!(
            DensityMatrix::new(bad_trace),
            Err(EbrError::TraceNotOne(_))
        ));
        let mut non_herm = CMatrix::identity(2, 2) * c(0.5, 0.0);
        non_herm[(0, 1)] = c(0.1, 0.0);
        assert!(matches!(
            DensityMatrix::new(non_herm),
            Err(EbrError::NotHermitian(_))
        ));
    }
}
