//! Break-point densities on the membrane.
//!
//! All densities are expressed in barycentric coordinates. The piecewise
//! family lives on a depth-`d` grid of the simplex: in cumulative coordinates
//! `xₖ = b₁ + … + bₖ` the simplex is the order simplex
//! `0 ≤ x₁ ≤ … ≤ x_{N−1} ≤ 1`, and scaling by `d` and cutting each unit cube
//! along the Freudenthal triangulation splits it into `d^(N−1)` cells of equal
//! volume.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{EbrError, Result};

/// Default cap on rejection-sampling proposals per break point.
pub const DEFAULT_ATTEMPT_CAP: u64 = 1_000_000;

/// Uniform point of the standard simplex with `n` vertices (flat Dirichlet).
pub fn sample_uniform_barycentric<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut b: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = b.iter().sum();
    for x in b.iter_mut() {
        *x /= total;
    }
    b
}

/// One cell of the grid: the cube with lower corner `base` (in scaled
/// cumulative coordinates) and the order of fractional parts in `order`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridCell {
    pub base: Vec<u32>,
    pub order: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct SimplexGrid {
    dim: usize,
    depth: u32,
    cells: Vec<GridCell>,
    lookup: HashMap<GridCell, usize>,
}

impl SimplexGrid {
    pub fn new(dim: usize, depth: u32) -> Result<Self> {
        if dim < 2 {
            return Err(EbrError::DimensionTooSmall(dim));
        }
        if depth < 1 {
            return Err(EbrError::InvalidArgument("grid depth must be at least 1".into()));
        }
        let m = dim - 1;
        let mut bases = Vec::new();
        nondecreasing(m, depth, &mut Vec::with_capacity(m), &mut bases);
        let perms = permutations(m);
        let mut cells = Vec::new();
        for base in bases {
            for order in &perms {
                if order_is_valid(&base, order) {
                    cells.push(GridCell {
                        base: base.clone(),
                        order: order.clone(),
                    });
                }
            }
        }
        let lookup = cells
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        Ok(Self {
            dim,
            depth,
            cells,
            lookup,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Index of the cell containing a barycentric point.
    pub fn locate(&self, bary: &[f64]) -> usize {
        let d = self.depth as f64;
        let m = self.dim - 1;
        let mut base = Vec::with_capacity(m);
        let mut frac = Vec::with_capacity(m);
        let mut cum = 0.0;
        let mut prev_base = 0u32;
        for &b in &bary[..m] {
            cum += b;
            let y = (cum * d).clamp(0.0, d);
            let c = (y.floor() as u32).min(self.depth - 1).max(prev_base);
            base.push(c);
            frac.push((y - c as f64).clamp(0.0, 1.0));
            prev_base = c;
        }
        let mut order: Vec<u8> = (0..m as u8).collect();
        order.sort_by(|&a, &b| {
            frac[a as usize]
                .total_cmp(&frac[b as usize])
                .then(a.cmp(&b))
        });
        let cell = GridCell { base, order };
        match self.lookup.get(&cell) {
            Some(&i) => i,
            // Rounding can break the within-group order; fall back to the
            // index order inside equal-base runs.
            None => {
                let mut fixed = cell;
                fixed.order = repair_order(&fixed.base, &fixed.order);
                self.lookup[&fixed]
            }
        }
    }

    /// Uniform point inside cell `index`, in barycentric coordinates.
    pub fn sample_in_cell<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> Vec<f64> {
        let cell = &self.cells[index];
        let m = self.dim - 1;
        let mut s: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        s.sort_by(f64::total_cmp);
        let mut y = vec![0.0; m];
        for (rank, &coord) in cell.order.iter().enumerate() {
            y[coord as usize] = cell.base[coord as usize] as f64 + s[rank];
        }
        let d = self.depth as f64;
        let mut bary = Vec::with_capacity(self.dim);
        let mut prev = 0.0;
        for yk in y {
            let x = yk / d;
            bary.push((x - prev).max(0.0));
            prev = x;
        }
        bary.push((1.0 - prev).max(0.0));
        bary
    }
}

fn nondecreasing(m: usize, depth: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if current.len() == m {
        out.push(current.clone());
        return;
    }
    let start = current.last().copied().unwrap_or(0);
    for c in start..depth {
        current.push(c);
        nondecreasing(m, depth, current, out);
        current.pop();
    }
}

fn permutations(m: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut items: Vec<u8> = (0..m as u8).collect();
    permute(&mut items, 0, &mut out);
    out.sort();
    out
}

fn permute(items: &mut Vec<u8>, k: usize, out: &mut Vec<Vec<u8>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, out);
        items.swap(k, i);
    }
}

/// Coordinates sharing a base value must keep their fractional parts in
/// index order, otherwise the cell leaves the order simplex.
fn order_is_valid(base: &[u32], order: &[u8]) -> bool {
    let mut rank = vec![0usize; order.len()];
    for (r, &c) in order.iter().enumerate() {
        rank[c as usize] = r;
    }
    base.windows(2)
        .enumerate()
        .all(|(k, w)| w[0] < w[1] || rank[k] < rank[k + 1])
}

fn repair_order(base: &[u32], order: &[u8]) -> Vec<u8> {
    // Stable pass: within each run of equal base values, reassign the slots
    // those coordinates occupy to the coordinates in increasing index order.
    let mut result = order.to_vec();
    let mut k = 0;
    while k < base.len() {
        let mut end = k;
        while end + 1 < base.len() && base[end + 1] == base[k] {
            end += 1;
        }
        let members: Vec<u8> = (k as u8..=end as u8).collect();
        let slots: Vec<usize> = result
            .iter()
            .enumerate()
            .filter(|(_, c)| members.contains(c))
            .map(|(s, _)| s)
            .collect();
        for (slot, coord) in slots.into_iter().zip(members) {
            result[slot] = coord;
        }
        k = end + 1;
    }
    result
}

/// Piecewise-constant density on a [`SimplexGrid`].
#[derive(Debug, Clone)]
pub struct PiecewiseDensity {
    grid: Arc<SimplexGrid>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PiecewiseDensity {
    pub fn new(grid: Arc<SimplexGrid>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(EbrError::InvalidDensity(format!(
                "expected {} cell weights, got {}",
                grid.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(EbrError::InvalidDensity(
                "cell weights must be finite and nonnegative".into(),
            ));
        }
        let mut acc = 0.0;
        let cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        if acc <= 0.0 {
            return Err(EbrError::InvalidDensity("all cell weights are zero".into()));
        }
        Ok(Self {
            grid,
            weights,
            cumulative,
        })
    }

    /// I.i.d. uniform `[0, 1)` weights.
    pub fn random<R: Rng + ?Sized>(grid: Arc<SimplexGrid>, rng: &mut R) -> Result<Self> {
        let weights = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
        Self::new(grid, weights)
    }

    pub fn grid(&self) -> &SimplexGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn value(&self, bary: &[f64]) -> f64 {
        self.weights[self.grid.locate(bary)]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let total = *self.cumulative.last().expect("grid has cells");
        let u = rng.random::<f64>() * total;
        let mut cell = self.cumulative.partition_point(|&c| c <= u);
        // Skip zero-weight cells that share the cumulative value.
        cell = cell.min(self.cumulative.len() - 1);
        while self.weights[cell] == 0.0 {
            cell -= 1;
        }
        self.grid.sample_in_cell(cell, rng)
    }
}

pub type DensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Arbitrary nonnegative density with a known upper bound, sampled by rejection.
#[derive(Clone)]
pub struct CallableDensity {
    f: Arc<DensityFn>,
    bound: f64,
    attempt_cap: u64,
}

impl fmt::Debug for CallableDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CallableDensity")
            .field("bound", &self.bound)
            .field("attempt_cap", &self.attempt_cap)
            .finish_non_exhaustive()
    }
}

impl CallableDensity {
    pub fn new(f: Arc<DensityFn>, bound: f64) -> Result<Self> {
        if !bound.is_finite() || bound <= 0.0 {
            return Err(EbrError::InvalidDensity(format!(
                "bound must be positive and finite, got {bound}"
            )));
        }
        Ok(Self {
            f,
            bound,
            attempt_cap: DEFAULT_ATTEMPT_CAP,
        })
    }

    pub fn with_attempt_cap(mut self, cap: u64) -> Self {
        self.attempt_cap = cap.max(1);
        self
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn value(&self, bary: &[f64]) -> f64 {
        (self.f)(bary)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        for _ in 0..self.attempt_cap {
            let b = sample_uniform_barycentric(n, rng);
            let v = (self.f)(&b);
            if v.is_nan() || v < 0.0 {
                return Err(EbrError::InvalidDensity(format!(
                    "density returned {v} at {b:?}"
                )));
            }
            if v > self.bound {
                return Err(EbrError::DensityBoundViolated {
                    value: v,
                    bound: self.bound,
                });
            }
            if rng.random::<f64>() * self.bound < v {
                return Ok(b);
            }
        }
        Err(EbrError::RejectionCapExceeded {
            attempts: self.attempt_cap,
            bound: self.bound,
        })
    }
}

/// Law of the membrane's break point.
#[derive(Debug, Clone)]
pub enum MembraneDensity {
    Uniform,
    Piecewise(PiecewiseDensity),
    Callable(CallableDensity),
}

impl MembraneDensity {
    pub fn is_uniform(&self) -> bool {
        matches!(self, MembraneDensity::Uniform)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            MembraneDensity::Uniform => Ok(sample_uniform_barycentric(n, rng)),
            MembraneDensity::Piecewise(p) => {
                if p.grid().dim() != n {
                    return Err(EbrError::DimensionMismatch {
                        expected: n,
                        actual: p.grid().dim(),
                    });
                }
                Ok(p.sample(rng))
            }
            MembraneDensity::Callable(c) => c.sample(n, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_has_depth_power_cells() {
        for dim in 2..=5 {
            for depth in 1..=5u32 {
                let g = SimplexGrid::new(dim, depth).unwrap();
                assert_eq!(g.len(), (depth as usize).pow(dim as u32 - 1), "dim {dim} depth {depth}");
            }
        }
        assert!(SimplexGrid::new(3, 0).is_err());
    }

    #[test]
    fn samples_stay_in_their_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dim in 2..=4 {
            let g = SimplexGrid::new(dim, 4).unwrap();
            for cell in 0..g.len() {
                for _ in 0..20 {
                    let b = g.sample_in_cell(cell, &mut rng);
                    assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(b.iter().all(|&x| x >= 0.0));
                    assert_eq!(g.locate(&b), cell);
                }
            }
        }
    }

    #[test]
    fn uniform_points_fill_cells_evenly() {
        // Equal-volume cells: uniform samples land in each with probability 1/K.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = SimplexGrid::new(3, 3).unwrap();
        let n = 90_000;
        let mut counts = vec![0u32; g.len()];
        for _ in 0..n {
            counts[g.locate(&sample_uniform_barycentric(3, &mut rng))] += 1;
        }
        let p = 1.0 / g.len() as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - p).abs() < 5.0 * se);
        }
    }

    #[test]
    fn locate_handles_vertices_and_edges() {
        let g = SimplexGrid::new(3, 4).unwrap();
        for b in [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.5, 0.5, 0.0],
            [0.25, 0.25, 0.5],
        ] {
            assert!(g.locate(&b) < g.len());
        }
    }

    #[test]
    fn piecewise_sampling_follows_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Arc::new(SimplexGrid::new(3, 2).unwrap());
        let weights = vec![0.0, 1.0, 2.0, 1.0];
        let d = PiecewiseDensity::new(g.clone(), weights.clone()).unwrap();
        let n = 80_000;
        let mut counts = [0u32; 4];
        for _ in 0..n {
            counts[g.locate(&d.sample(&mut rng))] += 1;
        }
        assert_eq!(counts[0], 0);
        for (c, w) in counts.iter().zip(&weights) {
            let p = w / 4.0;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() <= 5.0 * se + 1e-12);
        }
    }

    #[test]
    fn piecewise_rejects_bad_weights() {
        let g = Arc::new(SimplexGrid::new(2, 3).unwrap());
        assert!(PiecewiseDensity::new(g.clone(), vec![1.0, 1.0]).is_err());
        assert!(PiecewiseDensity::new(g.clone(), vec![0.0, 0.0, 0.0]).is_err());
        assert!(PiecewiseDensity::new(g, vec![1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn uniform_barycentric_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [2usize, 3, 5] {
            let draws = 200_000;
            let nf = n as f64;
            let mean = 1.0 / nf;
            let var = (nf - 1.0) / (nf * nf * (nf + 1.0));
            let samples: Vec<Vec<f64>> = (0..draws)
                .map(|_| sample_uniform_barycentric(n, &mut rng))
                .collect();
            for k in 0..n {
                let xs: Vec<f64> = samples.iter().map(|b| b[k]).collect();
                let m = xs.iter().sum::<f64>() / draws as f64;
                let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / draws as f64;
                let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / draws as f64;
                assert!((m - mean).abs() < 5.0 * (var / draws as f64).sqrt());
                assert!((v - var).abs() < 5.0 * ((m4 - v * v) / draws as f64).sqrt());
            }
            assert!(samples.iter().all(|b| (b.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn callable_rejection_respects_bound_and_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let over = CallableDensity::new(Arc::new(|_: &[f64]| 2.0), 1.0).unwrap();
        assert!(matches!(
            over.sample(3, &mut rng),
            Err(EbrError::DensityBoundViolated { .. })
        ));
        let tiny = CallableDensity::new(Arc::new(|_: &[f64]| 0.0), 1.0)
            .unwrap()
            .with_attempt_cap(100);
        assert!(matches!(
            tiny.sample(3, &mut rng),
            Err(EbrError::RejectionCapExceeded { attempts: 100, .. })
        ));
        let corner = CallableDensity::new(
            Arc::new(|b: &[f64]| if b[0] > 0.5 { 1.0 } else { 0.0 }),
            1.0,
        )
        .unwrap();
        for _ in 0..200 {
            assert!(corner.sample(3, &mut rng).unwrap()[0] > 0.5);
        }
    }
}
