//! Observables as simplex membranes inscribed in the Bloch sphere.
//!
//! The N eigenprojectors of a nondegenerate observable map to N unit Bloch
//! vectors forming a regular (N−1)-simplex centred at the origin. A state is
//! brought onto that simplex by orthogonal projection (the plunge); the
//! barycentric coordinates of the landing point, equivalently the relative
//! volumes of the N sub-simplices it cuts the membrane into, are the outcome
//! probabilities.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bloch::{
    bloch_to_state, candidate_min_eigenvalue, hermitian_eigen, hermiticity_defect, matrix_to_bloch,
    projector, trace_product, BlochVector, CMatrix, DensityMatrix, GeneratorBasis, ALGEBRAIC_TOL,
    EIGEN_TOL, UNIT_NORM_TOL,
};
use crate::error::{EbrError, Result};

/// Eigenvalues closer than this are treated as one degenerate value.
pub const DEGENERACY_GAP: f64 = 1e-9;

/// Negative barycentric coordinates down to this value are rounding noise.
pub const BARYCENTRIC_CLAMP: f64 = 1e-10;

/// A Hermitian observable with its spectral decomposition, eigenvalues in
/// descending order.
#[derive(Debug, Clone)]
pub struct Observable {
    matrix: CMatrix,
    eigenvalues: Vec<f64>,
    projectors: Vec<CMatrix>,
}

impl Observable {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        if rows != cols {
            return Err(EbrError::NotSquare { rows, cols });
        }
        if rows < 2 {
            return Err(EbrError::DimensionTooSmall(rows));
        }
        let defect = hermiticity_defect(&matrix);
        if defect > ALGEBRAIC_TOL {
            return Err(EbrError::NotHermitian(defect));
        }
        let (mut values, vectors) = hermitian_eigen(&matrix);
        values.reverse();
        let projectors = (0..rows)
            .rev()
            .map(|k| projector(&vectors.column(k).into_owned()))
            .collect();
        Ok(Self {
            matrix,
            eigenvalues: values,
            projectors,
        })
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        let n = values.len();
        let m = CMatrix::from_fn(n, n, |r, c| {
            if r == c {
                Complex64::new(values[r], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Self::new(m)
    }

    /// Spin component `J_z` for spin `j = (N−1)/2`, with ħ = 1.
    pub fn spin_z(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(EbrError::DimensionTooSmall(dim));
        }
        let j = (dim as f64 - 1.0) / 2.0;
        let values: Vec<f64> = (0..dim).map(|k| j - k as f64).collect();
        Self::diagonal(&values)
    }

    /// Spin component `J_x = (J₊ + J₋)/2` for spin `j = (N−1)/2`, with ħ = 1.
    pub fn spin_x(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(EbrError::DimensionTooSmall(dim));
        }
        let j = (dim as f64 - 1.0) / 2.0;
        let mut m = CMatrix::zeros(dim, dim);
        for k in 0..dim - 1 {
            // ⟨m+1| J₊ |m⟩ with m = j − k − 1
            let mval = j - k as f64 - 1.0;
            let amp = 0.5 * (j * (j + 1.0) - mval * (mval + 1.0)).sqrt();
            m[(k, k + 1)] = Complex64::new(amp, 0.0);
            m[(k + 1, k)] = Complex64::new(amp, 0.0);
        }
        Self::new(m)
    }

    /// Random nondegenerate observable drawn from the Gaussian unitary ensemble.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim < 2 {
            return Err(EbrError::DimensionTooSmall(dim));
        }
        loop {
            let g = CMatrix::from_fn(dim, dim, |_, _| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            let h = (&g + g.adjoint()) * Complex64::new(0.5, 0.0);
            let obs = Self::new(h)?;
            if obs.degeneracy().is_none() {
                return Ok(obs);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn projectors(&self) -> &[CMatrix] {
        &self.projectors
    }

    /// First pair of adjacent eigenvalues closer than [`DEGENERACY_GAP`].
    pub fn degeneracy(&self) -> Option<(f64, f64)> {
        self.eigenvalues
            .windows(2)
            .find(|w| (w[0] - w[1]).abs() <= DEGENERACY_GAP)
            .map(|w| (w[0], w[1]))
    }

    pub fn is_degenerate(&self) -> bool {
        self.degeneracy().is_some()
    }
}

/// The regular (N−1)-simplex spanned by the outcome states of an observable.
#[derive(Debug, Clone)]
pub struct MembraneSimplex {
    dim: usize,
    vertices: Vec<BlochVector>,
    centroid: BlochVector,
    plane_basis: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    basis: Arc<GeneratorBasis>,
}

impl MembraneSimplex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[BlochVector] {
        &self.vertices
    }

    pub fn centroid(&self) -> &BlochVector {
        &self.centroid
    }

    /// Orthonormal directions spanning the affine hull of the vertices.
    pub fn plane_basis(&self) -> &[Vec<f64>] {
        &self.plane_basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn generator_basis(&self) -> &GeneratorBasis {
        &self.basis
    }

    /// Point with the given barycentric coordinates.
    pub fn point_at(&self, barycentric: &[f64]) -> BlochVector {
        let len = self.vertices[0].coords().len();
        let mut coords = vec![0.0; len];
        for (b, v) in barycentric.iter().zip(&self.vertices) {
            for (c, x) in coords.iter_mut().zip(v.coords()) {
                *c += b * x;
            }
        }
        BlochVector::from_raw(self.dim, coords)
    }

    /// Volume of the simplex from its vertices, via the Gram determinant.
    pub fn gram_measure(&self) -> f64 {
        gram_volume(&self.vertices.iter().collect::<Vec<_>>())
    }

    /// In-plane coordinates of `p − centroid` and the residual distance to the hull.
    pub fn plane_decomposition(&self, p: &BlochVector) -> (Vec<f64>, f64) {
        let diff: Vec<f64> = p
            .coords()
            .iter()
            .zip(self.centroid.coords())
            .map(|(a, c)| a - c)
            .collect();
        let inplane: Vec<f64> = self
            .plane_basis
            .iter()
            .map(|e| e.iter().zip(&diff).map(|(a, b)| a * b).sum())
            .collect();
        let mut residual = diff;
        for (e, coef) in self.plane_basis.iter().zip(&inplane) {
            for (r, x) in residual.iter_mut().zip(e) {
                *r -= coef * x;
            }
        }
        let off = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
        (inplane, off)
    }

    /// Barycentric coordinates of the orthogonal projection of `p` onto the
    /// affine hull, from the normal equations of the edge matrix.
    pub fn affine_coordinates(&self, p: &BlochVector) -> Vec<f64> {
        let n = self.dim;
        let d = p.coords().len();
        let v0 = self.vertices[0].coords();
        let edges = DMatrix::from_fn(d, n - 1, |r, c| self.vertices[c + 1].coords()[r] - v0[r]);
        let rhs = DVector::from_iterator(d, p.coords().iter().zip(v0).map(|(a, b)| a - b));
        let gram = edges.transpose() * &edges;
        let proj = edges.transpose() * rhs;
        let lambda = gram
            .cholesky()
            .expect("simplex edges are linearly independent")
            .solve(&proj);
        let mut bary = Vec::with_capacity(n);
        bary.push(1.0 - lambda.iter().sum::<f64>());
        bary.extend(lambda.iter().copied());
        bary
    }
}

/// Volume of the simplex with the given vertices (any number ≥ 2 of points
/// in a common space): `sqrt(det(EᵀE)) / k!` with `E` the k edge vectors
/// from the first vertex.
pub fn gram_volume(points: &[&BlochVector]) -> f64 {
    let k = points.len() - 1;
    if k == 0 {
        return 0.0;
    }
    let d = points[0].coords().len();
    let p0 = points[0].coords();
    let edges = DMatrix::from_fn(d, k, |r, c| points[c + 1].coords()[r] - p0[r]);
    let det = (edges.transpose() * &edges).determinant();
    det.max(0.0).sqrt() / factorial(k)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Landing point of the plunge and its barycentric coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnMembranePoint {
    pub point: BlochVector,
    pub barycentric: Vec<f64>,
}

pub fn build_membrane(obs: &Observable, basis: &GeneratorBasis) -> Result<MembraneSimplex> {
    if obs.dim() != basis.dim() {
        return Err(EbrError::DimensionMismatch {
            expected: basis.dim(),
            actual: obs.dim(),
        });
    }
    if let Some((a, b)) = obs.degeneracy() {
        return Err(EbrError::DegenerateSpectrum(a, b));
    }
    let n = obs.dim();
    let vertices: Vec<BlochVector> = obs
        .projectors()
        .iter()
        .map(|p| matrix_to_bloch(p, basis))
        .collect();

    let len = vertices[0].coords().len();
    let mut centroid = vec![0.0; len];
    for v in &vertices {
        for (c, x) in centroid.iter_mut().zip(v.coords()) {
            *c += x / n as f64;
        }
    }

    // Gram-Schmidt on the edges from the first vertex.
    let mut plane_basis: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    for v in &vertices[1..] {
        let mut e: Vec<f64> = v
            .coords()
            .iter()
            .zip(vertices[0].coords())
            .map(|(a, b)| a - b)
            .collect();
        for _ in 0..2 {
            for q in &plane_basis {
                let proj: f64 = q.iter().zip(&e).map(|(a, b)| a * b).sum();
                for (x, qx) in e.iter_mut().zip(q) {
                    *x -= proj * qx;
                }
            }
        }
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        plane_basis.push(e.into_iter().map(|x| x / norm).collect());
    }

    Ok(MembraneSimplex {
        dim: n,
        vertices,
        centroid: BlochVector::from_raw(n, centroid),
        plane_basis,
        eigenvalues: obs.eigenvalues().to_vec(),
        basis: Arc::new(basis.clone()),
    })
}

/// Orthogonal projection of a state's Bloch vector onto the membrane.
///
/// Accepts any bona fide vector in the ball, not only pure states.
pub fn plunge(initial: &BlochVector, membrane: &MembraneSimplex) -> Result<OnMembranePoint> {
    initial.ensure_dim(membrane.dim())?;
    let norm = initial.norm();
    if norm > 1.0 + UNIT_NORM_TOL {
        return Err(EbrError::NotUnitNorm(norm));
    }
    let min = candidate_min_eigenvalue(initial, membrane.generator_basis())?;
    if min < -EIGEN_TOL {
        return Err(EbrError::NotBonaFide(min));
    }

    let (inplane, _) = membrane.plane_decomposition(initial);
    let mut coords = membrane.centroid().coords().to_vec();
    for (e, coef) in membrane.plane_basis().iter().zip(&inplane) {
        for (c, x) in coords.iter_mut().zip(e) {
            *c += coef * x;
        }
    }
    let point = BlochVector::from_raw(membrane.dim(), coords);
    let barycentric = clamp_barycentric(membrane.affine_coordinates(&point))?;
    Ok(OnMembranePoint { point, barycentric })
}

fn clamp_barycentric(mut bary: Vec<f64>) -> Result<Vec<f64>> {
    for (index, b) in bary.iter_mut().enumerate() {
        if *b < -BARYCENTRIC_CLAMP {
            return Err(EbrError::OutsideMembrane { index, value: *b });
        }
        if *b < 0.0 {
            *b = 0.0;
        }
    }
    let total: f64 = bary.iter().sum();
    for b in bary.iter_mut() {
        *b /= total;
    }
    Ok(bary)
}

/// Born probabilities `Tr(ρ Pₖ)`, in eigenvalue-descending order.
pub fn born_probabilities(state: &DensityMatrix, obs: &Observable) -> Result<Vec<f64>> {
    if state.dim() != obs.dim() {
        return Err(EbrError::DimensionMismatch {
            expected: obs.dim(),
            actual: state.dim(),
        });
    }
    Ok(obs
        .projectors()
        .iter()
        .map(|p| trace_product(state.matrix(), p).re.clamp(0.0, 1.0))
        .collect())
}

/// `(cos²(θ/2), sin²(θ/2))`: the two fragment lengths `1 ± cos θ` over the band length 2.
pub fn two_outcome_closed_form(theta: f64) -> Result<(f64, f64)> {
    if !(0.0..=std::f64::consts::PI).contains(&theta) {
        return Err(EbrError::AngleOutOfRange(theta));
    }
    let half = theta / 2.0;
    Ok((half.cos().powi(2), half.sin().powi(2)))
}

/// Volume of each sub-simplex `Aᵢ = conv({pt} ∪ {vⱼ : j ≠ i})`.
///
/// Computed from in-plane coordinates as `|det E| / (N−1)!`, which stays
/// accurate when `pt` sits on a face and a sub-simplex collapses.
pub fn subregion_measures(pt: &OnMembranePoint, membrane: &MembraneSimplex) -> Result<Vec<f64>> {
    pt.point.ensure_dim(membrane.dim())?;
    let (p, off) = membrane.plane_decomposition(&pt.point);
    if off > EIGEN_TOL {
        return Err(EbrError::InvalidArgument(format!(
            "point lies {off:e} away from the membrane"
        )));
    }
    let k = membrane.dim() - 1;
    let verts: Vec<Vec<f64>> = membrane
        .vertices()
        .iter()
        .map(|v| membrane.plane_decomposition(v).0)
        .collect();
    let scale = factorial(k);
    Ok((0..verts.len())
        .map(|i| {
            let others: Vec<&Vec<f64>> = verts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| v)
                .collect();
            let edges = DMatrix::from_fn(k, k, |r, c| others[c][r] - p[r]);
            edges.determinant().abs() / scale
        })
        .collect())
}

/// Closed-form volume of the regular (N−1)-simplex inscribed in the unit
/// sphere, side `sqrt(2N/(N−1))`.
pub fn regular_simplex_measure(dim: usize) -> f64 {
    let n = dim as f64;
    let k = dim - 1;
    let side = (2.0 * n / (n - 1.0)).sqrt();
    side.powi(k as i32) * n.sqrt() / (factorial(k) * 2f64.powf(k as f64 / 2.0))
}

pub fn total_measure(membrane: &MembraneSimplex) -> f64 {
    regular_simplex_measure(membrane.dim())
}

/// State of the particle once it has landed on the membrane.
///
/// Equals `Σ bᵢ Pᵢ`, the state fully decohered in the eigenbasis.
pub fn decohered_state(
    pt: &OnMembranePoint,
    obs: &Observable,
    basis: &GeneratorBasis,
) -> Result<DensityMatrix> {
    if obs.dim() != basis.dim() {
        return Err(EbrError::DimensionMismatch {
            expected: basis.dim(),
            actual: obs.dim(),
        });
    }
    DensityMatrix::new(bloch_to_state(&pt.point, basis)?)
}

/// Outcomes sharing one eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGroup {
    pub value: f64,
    pub indices: Vec<usize>,
    pub probability: f64,
}

/// Sum per-outcome probabilities over outcomes whose eigenvalues coincide.
pub fn degenerate_group(obs: &Observable, probabilities: &[f64]) -> Result<Vec<ValueGroup>> {
    if probabilities.len() != obs.dim() {
        return Err(EbrError::DimensionMismatch {
            expected: obs.dim(),
            actual: probabilities.len(),
        });
    }
    let mut groups: Vec<ValueGroup> = Vec::new();
    let mut last = f64::NAN;
    for (k, (&value, &p)) in obs.eigenvalues().iter().zip(probabilities).enumerate() {
        match groups.last_mut() {
            Some(g) if (last - value).abs() <= DEGENERACY_GAP => {
                g.indices.push(k);
                g.probability += p;
            }
            _ => groups.push(ValueGroup {
                value,
                indices: vec![k],
                probability: p,
            }),
        }
        last = value;
    }
    Ok(groups)
}

/// Projector onto the eigenspace of a group.
pub fn group_projector(obs: &Observable, group: &ValueGroup) -> CMatrix {
    let n = obs.dim();
    group
        .indices
        .iter()
        .fold(CMatrix::zeros(n, n), |acc, &k| acc + &obs.projectors()[k])
}

/// Projective update `P ρ P / Tr(P ρ)` for the value of `group`.
pub fn post_measurement_state(
    obs: &Observable,
    group: &ValueGroup,
    state: &DensityMatrix,
) -> Result<DensityMatrix> {
    if state.dim() != obs.dim() {
        return Err(EbrError::DimensionMismatch {
            expected: obs.dim(),
            actual: state.dim(),
        });
    }
    let p = group_projector(obs, group);
    let weight = trace_product(&p, state.matrix()).re;
    if weight <= EIGEN_TOL {
        return Err(EbrError::InvalidArgument(format!(
            "value {} has zero probability in this state",
            group.value
        )));
    }
    let updated = &p * state.matrix() * &p / Complex64::new(weight, 0.0);
    // Symmetrize away rounding before validation.
    let updated = (&updated + updated.adjoint()) * Complex64::new(0.5, 0.0);
    DensityMatrix::new(updated)
}
