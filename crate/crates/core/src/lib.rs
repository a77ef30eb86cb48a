//! Extended Bloch representation of quantum measurements.
//!
//! States are points of the generalized Bloch sphere, observables are elastic
//! simplex membranes spanned by their eigenstates, and a measurement is a
//! deterministic orthogonal plunge onto the membrane followed by a random
//! break of the membrane that pulls the state to one vertex.

pub mod bloch;
pub mod cli;
pub mod density;
pub mod engine;
pub mod error;
pub mod rng;
pub mod simplex;
pub mod trajectory;

pub use bloch::{
    bloch_angle, bloch_to_state, build_generators, is_bona_fide, state_to_bloch, BlochVector,
    DensityMatrix, GeneratorBasis,
};
pub use error::{EbrError, Result};
pub use simplex::{
    born_probabilities, build_membrane, decohered_state, degenerate_group, plunge,
    subregion_measures, total_measure, two_outcome_closed_form, MembraneSimplex, Observable,
    OnMembranePoint,
};
