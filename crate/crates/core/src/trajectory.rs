//! Time-parametrized frames of a recorded measurement, for offline animation.
//!
//! Stage one moves the particle in a straight line from its initial point to
//! the landing point on the membrane. Stage two opens with the break marker
//! and then pulls the particle in a straight line to the winning vertex.

use serde::{Deserialize, Serialize};

use crate::bloch::BlochVector;
use crate::engine::MeasurementRecord;
use crate::error::{EbrError, Result};
use crate::simplex::MembraneSimplex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Plunge,
    Disintegration,
    Collapse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "break_point")]
pub enum MembraneState {
    Full,
    Breaking(Vec<f64>),
    Contracted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub stage: Stage,
    pub t: f64,
    pub particle: BlochVector,
    pub membrane_state: MembraneState,
    pub embedding: Option<Vec<f64>>,
}

/// `(1 − t)·a + t·b`, exact at both ends.
fn lerp(a: &BlochVector, b: &BlochVector, t: f64) -> BlochVector {
    let coords = a
        .coords()
        .iter()
        .zip(b.coords())
        .map(|(x, y)| (1.0 - t) * x + t * y)
        .collect();
    BlochVector::from_raw(a.dim(), coords)
}

/// `frames_per_stage` frames per stage, `t = k / (frames_per_stage − 1)`.
///
/// The first stage-two frame (`t = 0`) is tagged [`Stage::Disintegration`] and
/// carries the break point; the rest are [`Stage::Collapse`].
pub fn make_trajectory(
    record: &MeasurementRecord,
    membrane: &MembraneSimplex,
    frames_per_stage: usize,
) -> Result<Vec<Frame>> {
    if frames_per_stage < 2 {
        return Err(EbrError::InvalidArgument(
            "frames_per_stage must be at least 2".into(),
        ));
    }
    let dim = membrane.dim();
    record.initial.ensure_dim(dim)?;
    record.on_membrane.point.ensure_dim(dim)?;
    if record.outcome_index >= dim || record.break_point.len() != dim {
        return Err(EbrError::InvalidArgument(
            "record does not match the membrane".into(),
        ));
    }
    let vertex = &membrane.vertices()[record.outcome_index];
    let landing = &record.on_membrane.point;
    let steps = (frames_per_stage - 1) as f64;

    let mut frames = Vec::with_capacity(2 * frames_per_stage);
    for k in 0..frames_per_stage {
        let t = k as f64 / steps;
        frames.push(Frame {
            stage: Stage::Plunge,
            t,
            particle: lerp(&record.initial, landing, t),
            membrane_state: MembraneState::Full,
            embedding: None,
        });
    }
    for k in 0..frames_per_stage {
        let t = k as f64 / steps;
        let (stage, membrane_state) = if k == 0 {
            (
                Stage::Disintegration,
                MembraneState::Breaking(record.break_point.clone()),
            )
        } else if k + 1 == frames_per_stage {
            (Stage::Collapse, MembraneState::Contracted)
        } else {
            (
                Stage::Collapse,
                MembraneState::Breaking(record.break_point.clone()),
            )
        };
        frames.push(Frame {
            stage,
            t,
            particle: lerp(landing, vertex, t),
            membrane_state,
            embedding: None,
        });
    }
    for f in frames.iter_mut() {
        f.embedding = Some(embed(&f.particle, membrane)?);
    }
    Ok(frames)
}

/// Low-dimensional coordinates of a point.
///
/// For N = 2 these are the three Bloch coordinates. For N ≥ 3 they are the
/// N−1 coordinates of the point in the membrane's plane (origin at the
/// centroid) followed by its distance from that plane.
pub fn embed(point: &BlochVector, membrane: &MembraneSimplex) -> Result<Vec<f64>> {
    point.ensure_dim(membrane.dim())?;
    if membrane.dim() == 2 {
        return Ok(point.coords().to_vec());
    }
    let (mut coords, off) = membrane.plane_decomposition(point);
    coords.push(off);
    Ok(coords)
}

/// Distance from a point to the membrane's affine hull, for any N.
pub fn off_membrane_distance(point: &BlochVector, membrane: &MembraneSimplex) -> Result<f64> {
    point.ensure_dim(membrane.dim())?;
    Ok(membrane.plane_decomposition(point).1)
}
