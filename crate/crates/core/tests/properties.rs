use ebr_core::bloch::CMatrix;
use ebr_core::rng::RngStream;
use ebr_core::{
    bloch_to_state, build_generators, build_membrane, plunge, state_to_bloch, subregion_measures,
    total_measure, DensityMatrix, Observable,
};
use proptest::prelude::*;

/// `mix·ρ + (1 − mix)·I/N`.
fn depolarize(rho: &DensityMatrix, mix: f64) -> DensityMatrix {
    let dim = rho.dim();
    let id = CMatrix::identity(dim, dim).map(|z| z / dim as f64);
    DensityMatrix::new(rho.matrix().map(|z| z * mix) + id.map(|z| z * (1.0 - mix))).unwrap()
}

fn instance(dim: usize, seed: u64) -> (DensityMatrix, Observable) {
    let mut rng = RngStream::new(seed, 0).substream(0);
    (
        DensityMatrix::random_pure(dim, &mut rng).unwrap(),
        Observable::random(dim, &mut rng).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bloch_round_trip(dim in 2usize..=6, seed in any::<u64>(), mix in 0.0f64..=1.0) {
        let basis = build_generators(dim).unwrap();
        let (pure, _) = instance(dim, seed);
        let rho = depolarize(&pure, mix);
        let r = state_to_bloch(&rho, &basis).unwrap();
        let back = bloch_to_state(&r, &basis).unwrap();
        let err = (back - rho.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12);
        let purity_law = 1.0 / dim as f64 + (1.0 - 1.0 / dim as f64) * r.norm().powi(2);
        prop_assert!((rho.purity() - purity_law).abs() <= 1e-12);
    }

    #[test]
    fn landing_weights_match_born_and_measures(
        dim in 2usize..=5,
        seed in any::<u64>(),
        mix in prop_oneof![Just(1.0), 0.0f64..=1.0],
    ) {
        let basis = build_generators(dim).unwrap();
        let (pure, obs) = instance(dim, seed);
        let rho = depolarize(&pure, mix);
        let m = build_membrane(&obs, &basis).unwrap();
        let landing = plunge(&state_to_bloch(&rho, &basis).unwrap(), &m).unwrap();
        prop_assert!((landing.barycentric.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let total = total_measure(&m);
        let measures = subregion_measures(&landing, &m).unwrap();
        prop_assert!((measures.iter().sum::<f64>() - total).abs() <= 1e-9 * total);
        for ((p, b), a) in obs.projectors().iter().zip(&landing.barycentric).zip(&measures) {
            let born = (rho.matrix() * p).trace().re;
            prop_assert!(*b >= 0.0);
            prop_assert!((b - born).abs() <= 1e-8);
            prop_assert!((a / total - born).abs() <= 1e-8);
        }
    }
}
