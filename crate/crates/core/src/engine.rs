//! Stochastic stage of a measurement: the membrane breaks at a random point,
//! the sub-simplex containing that point detaches every anchor but one, and
//! the particle is pulled to the remaining vertex.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{bloch_to_state, BlochVector, DensityMatrix};
use crate::density::{sample_uniform_barycentric, MembraneDensity, PiecewiseDensity, SimplexGrid};
use crate::error::{EbrError, Result};
use crate::rng::RngStream;
use crate::simplex::{born_probabilities, plunge, MembraneSimplex, Observable, OnMembranePoint};

/// Tolerance on sub-simplex barycentric coordinates when classifying a break.
pub const CLASSIFY_TOL: f64 = 1e-12;

/// Runs per parallel work unit. Fixed so that results never depend on the
/// worker count.
const CHUNK: u64 = 4096;

pub fn sample_uniform_simplex<R: Rng + ?Sized>(membrane: &MembraneSimplex, rng: &mut R) -> Vec<f64> {
    sample_uniform_barycentric(membrane.dim(), rng)
}

/// Outcome whose subregion `Aᵢ = conv({pt} ∪ {vⱼ : j ≠ i})` contains the break.
///
/// Writing the break as `λ·pt + Σ_{j≠i} μⱼ vⱼ` gives `λ = bᵢ / pᵢ` and
/// `μⱼ = bⱼ − λ pⱼ`; membership means every `μⱼ ≥ 0`. Regions with `pᵢ = 0`
/// are degenerate and skipped. Boundary points go to the smallest index.
pub fn classify_break(break_bary: &[f64], pt: &OnMembranePoint) -> Result<usize> {
    let p = &pt.barycentric;
    if break_bary.len() != p.len() {
        return Err(EbrError::DimensionMismatch {
            expected: p.len(),
            actual: break_bary.len(),
        });
    }
    if p.iter().sum::<f64>() <= 0.0 {
        return Err(EbrError::InvalidArgument(
            "landing point has no positive barycentric weight".into(),
        ));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, (&bi, &pi)) in break_bary.iter().zip(p).enumerate() {
        if pi <= 0.0 {
            continue;
        }
        let lambda = bi / pi;
        let inside = break_bary
            .iter()
            .zip(p)
            .enumerate()
            .all(|(j, (&bj, &pj))| j == i || bj - lambda * pj >= -CLASSIFY_TOL);
        if inside {
            return Ok(i);
        }
        if best.is_none_or(|(_, l)| lambda < l) {
            best = Some((i, lambda));
        }
    }
    // Only reachable through rounding: take the region with the smallest λ.
    Ok(best.expect("some coordinate is positive").0)
}

/// Inverse-CDF draw over the barycentric weights. Valid for the uniform
/// membrane only.
pub fn fast_sample_outcome<R: Rng + ?Sized>(pt: &OnMembranePoint, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &b) in pt.barycentric.iter().enumerate() {
        if b > 0.0 {
            acc += b;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Where a record's draws came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawProvenance {
    pub seed: u64,
    pub stream_id: u64,
    pub run_index: u64,
}

/// One simulated measurement.
#[derive(Debug, Clone)]
pub struct MeasurementRecord {
    pub initial: BlochVector,
    pub on_membrane: OnMembranePoint,
    pub break_point: Vec<f64>,
    pub outcome_index: usize,
    pub outcome_value: f64,
    pub final_state: DensityMatrix,
    pub rng: DrawProvenance,
}

fn check_inputs(membrane: &MembraneSimplex, obs: &Observable) -> Result<()> {
    if membrane.dim() != obs.dim() {
        return Err(EbrError::DimensionMismatch {
            expected: membrane.dim(),
            actual: obs.dim(),
        });
    }
    Ok(())
}

/// Plunge, break, classify, collapse. Draws come from substream `run_index`
/// of `stream`.
pub fn run_measurement(
    initial: &BlochVector,
    membrane: &MembraneSimplex,
    obs: &Observable,
    density: &MembraneDensity,
    stream: &RngStream,
    run_index: u64,
) -> Result<MeasurementRecord> {
    check_inputs(membrane, obs)?;
    let on_membrane = plunge(initial, membrane)?;
    let mut rng = stream.substream(run_index);
    let break_point = density.sample(membrane.dim(), &mut rng)?;
    let outcome_index = classify_break(&break_point, &on_membrane)?;
    let final_state = DensityMatrix::new(obs.projectors()[outcome_index].clone())?;
    Ok(MeasurementRecord {
        initial: initial.clone(),
        on_membrane,
        break_point,
        outcome_index,
        outcome_value: obs.eigenvalues()[outcome_index],
        final_state,
        rng: DrawProvenance {
            seed: stream.seed,
            stream_id: stream.stream_id,
            run_index,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    /// Sample a break point and classify it.
    Mechanistic,
    /// Draw the outcome straight from the barycentric weights.
    Fast,
}

#[derive(Debug, Clone, Copy)]
pub struct EnsembleOptions {
    pub sampler: Sampler,
    /// Worker threads; 0 uses the global rayon pool. Never affects results.
    pub workers: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            sampler: Sampler::Mechanistic,
            workers: 0,
        }
    }
}

/// Aggregate of many runs against the Born prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_runs: u64,
    pub counts: Vec<u64>,
    pub frequencies: Vec<f64>,
    pub born: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub max_abs_deviation: f64,
}

impl EnsembleStats {
    pub fn from_counts(counts: Vec<u64>, born: Vec<f64>) -> Self {
        let n_runs: u64 = counts.iter().sum();
        let n = n_runs as f64;
        let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let standard_errors = born.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect();
        let max_abs_deviation = frequencies
            .iter()
            .zip(&born)
            .map(|(f, p)| (f - p).abs())
            .fold(0.0, f64::max);
        Self {
            n_runs,
            counts,
            frequencies,
            born,
            standard_errors,
            max_abs_deviation,
        }
    }

    /// Every frequency within `k` standard errors of its Born value.
    pub fn within_sigma(&self, k: f64) -> bool {
        self.frequencies
            .iter()
            .zip(&self.born)
            .zip(&self.standard_errors)
            .all(|((f, p), se)| (f - p).abs() <= k * se + 1e-12)
    }
}

/// Largest per-outcome frequency gap between two ensembles, in units of the
/// combined standard error.
pub fn sampler_agreement(a: &EnsembleStats, b: &EnsembleStats) -> f64 {
    a.frequencies
        .iter()
        .zip(&b.frequencies)
        .zip(a.standard_errors.iter().zip(&b.standard_errors))
        .map(|((fa, fb), (sa, sb))| {
            let gap = (fa - fb).abs();
            let se = (sa * sa + sb * sb).sqrt();
            if se == 0.0 {
                if gap == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                gap / se
            }
        })
        .fold(0.0, f64::max)
}

pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EbrError::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn count_outcomes(
    pt: &OnMembranePoint,
    density: &MembraneDensity,
    sampler: Sampler,
    n: u64,
    stream: &RngStream,
) -> Result<Vec<u64>> {
    let dim = pt.barycentric.len();
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<Result<Vec<u64>>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut counts = vec![0u64; dim];
            let end = ((chunk + 1) * CHUNK).min(n);
            for run in chunk * CHUNK..end {
                let mut rng = stream.substream(run);
                let outcome = match sampler {
                    Sampler::Fast => fast_sample_outcome(pt, &mut rng),
                    Sampler::Mechanistic => {
                        let b = density.sample(dim, &mut rng)?;
                        classify_break(&b, pt)?
                    }
                };
                counts[outcome] += 1;
            }
            Ok(counts)
        })
        .collect();
    let mut total = vec![0u64; dim];
    for part in partials {
        for (t, c) in total.iter_mut().zip(part?) {
            *t += c;
        }
    }
    Ok(total)
}

fn initial_state(initial: &BlochVector, membrane: &MembraneSimplex) -> Result<DensityMatrix> {
    DensityMatrix::new(bloch_to_state(initial, membrane.generator_basis())?)
}

/// `n` independent runs; run `k` uses substream `k`, so the result depends on
/// `(seed, stream_id)` only.
pub fn run_ensemble(
    initial: &BlochVector,
    membrane: &MembraneSimplex,
    obs: &Observable,
    density: &MembraneDensity,
    n: u64,
    stream: &RngStream,
    options: EnsembleOptions,
) -> Result<EnsembleStats> {
    if n == 0 {
        return Err(EbrError::InvalidArgument("number of runs must be at least 1".into()));
    }
    check_inputs(membrane, obs)?;
    if options.sampler == Sampler::Fast && !density.is_uniform() {
        return Err(EbrError::InvalidArgument(
            "the fast sampler is only valid for the uniform membrane".into(),
        ));
    }
    let pt = plunge(initial, membrane)?;
    let born = born_probabilities(&initial_state(initial, membrane)?, obs)?;
    let counts = with_workers(options.workers, || {
        count_outcomes(&pt, density, options.sampler, n, stream)
    })??;
    Ok(EnsembleStats::from_counts(counts, born))
}

/// Outcome probabilities under a piecewise density on the 1-simplex, by exact
/// integration. Region 0 is the stretch `b₀ ∈ [0, p₀]`, region 1 the rest.
pub fn exact_segment_probabilities(
    density: &PiecewiseDensity,
    pt: &OnMembranePoint,
) -> Result<Vec<f64>> {
    if density.grid().dim() != 2 || pt.barycentric.len() != 2 {
        return Err(EbrError::InvalidArgument(
            "exact integration is only available for two outcomes".into(),
        ));
    }
    let d = density.grid().depth() as f64;
    let split = pt.barycentric[0];
    let mut first = 0.0;
    let mut total = 0.0;
    for (k, w) in density.weights().iter().enumerate() {
        // Cell k spans b₀ ∈ [k/d, (k+1)/d].
        let lo = k as f64 / d;
        let hi = (k + 1) as f64 / d;
        first += w * (split.min(hi) - lo).max(0.0);
        total += w * (hi - lo);
    }
    let p0 = first / total;
    Ok(vec![p0, 1.0 - p0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PerDensityEstimator {
    /// Monte Carlo with this many breaks per density.
    Sampled { runs: u64 },
    /// Closed-form integration (two outcomes only).
    ExactSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalAverage {
    /// Outcome probabilities under each sampled density, in draw order.
    pub per_density: Vec<Vec<f64>>,
    pub averaged: Vec<f64>,
    pub born: Vec<f64>,
    pub max_abs_deviation: f64,
}

impl UniversalAverage {
    /// Average over the first `count` densities.
    pub fn prefix_average(&self, count: usize) -> Vec<f64> {
        average(&self.per_density[..count.min(self.per_density.len())])
    }
}

fn average(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; dim];
    for row in rows {
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x;
        }
    }
    acc.iter().map(|a| a / rows.len() as f64).collect()
}

pub fn max_abs_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Monte Carlo outcome probabilities of one density, drawing sequentially
/// from `rng`.
pub fn estimate_outcome_probabilities<R: Rng + ?Sized>(
    pt: &OnMembranePoint,
    density: &MembraneDensity,
    runs: u64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if runs == 0 {
        return Err(EbrError::InvalidArgument("runs per density must be at least 1".into()));
    }
    let dim = pt.barycentric.len();
    let mut counts = vec![0u64; dim];
    for _ in 0..runs {
        let b = density.sample(dim, rng)?;
        counts[classify_break(&b, pt)?] += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / runs as f64).collect())
}

/// Average outcome probabilities over `n_densities` densities produced by
/// `make_density`. Density `t` is built from, and sampled with, substream `t`.
#[allow(clippy::too_many_arguments)]
pub fn average_over_densities<F>(
    initial: &BlochVector,
    membrane: &MembraneSimplex,
    obs: &Observable,
    n_densities: usize,
    make_density: F,
    estimator: PerDensityEstimator,
    stream: &RngStream,
    workers: usize,
) -> Result<UniversalAverage>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<MembraneDensity> + Sync,
{
    if n_densities == 0 {
        return Err(EbrError::InvalidArgument("need at least one density".into()));
    }
    check_inputs(membrane, obs)?;
    let pt = plunge(initial, membrane)?;
    let born = born_probabilities(&initial_state(initial, membrane)?, obs)?;
    let rows: Vec<Result<Vec<f64>>> = with_workers(workers, || {
        (0..n_densities as u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream.substream(t);
                let density = make_density(&mut rng)?;
                match (estimator, &density) {
                    (PerDensityEstimator::Sampled { runs }, _) => {
                        estimate_outcome_probabilities(&pt, &density, runs, &mut rng)
                    }
                    (PerDensityEstimator::ExactSegment, MembraneDensity::Piecewise(p)) => {
                        exact_segment_probabilities(p, &pt)
                    }
                    (PerDensityEstimator::ExactSegment, MembraneDensity::Uniform) => {
                        Ok(pt.barycentric.clone())
                    }
                    (PerDensityEstimator::ExactSegment, MembraneDensity::Callable(_)) => {
                        Err(EbrError::InvalidArgument(
                            "exact integration needs a piecewise density".into(),
                        ))
                    }
                }
            })
            .collect()
    })?;
    let per_density = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let averaged = average(&per_density);
    let max_abs_deviation = max_abs_deviation(&averaged, &born);
    Ok(UniversalAverage {
        per_density,
        averaged,
        born,
        max_abs_deviation,
    })
}

/// Average over random piecewise-constant densities with i.i.d. uniform cell
/// weights on a depth-`grid_depth` grid.
#[allow(clippy::too_many_arguments)]
pub fn universal_average(
    initial: &BlochVector,
    membrane: &MembraneSimplex,
    obs: &Observable,
    n_densities: usize,
    grid_depth: u32,
    estimator: PerDensityEstimator,
    stream: &RngStream,
    workers: usize,
) -> Result<UniversalAverage> {
    let grid = Arc::new(SimplexGrid::new(membrane.dim(), grid_depth)?);
    average_over_densities(
        initial,
        membrane,
        obs,
        n_densities,
        |rng| Ok(MembraneDensity::Piecewise(PiecewiseDensity::random(grid.clone(), rng)?)),
        estimator,
        stream,
        workers,
    )
}
