//! Shared inputs for the criterion benchmarks in `benches/`.

use wardfair::harness::synth::{generate_fixture, FixtureConfig};
use wardfair::{encode_and_split, EncodedDataset, SplitSpec};

/// Encoded train/test halves of a synthetic fixture with `wards` wards over
/// seven years, split at random with a 20% test share.
pub fn fixture_split(wards: usize, seed: u64) -> (EncodedDataset, EncodedDataset) {
    let fixture = generate_fixture(&FixtureConfig {
        wards,
        seed,
        ..FixtureConfig::default()
    })
    .expect("valid fixture config");
    let rows = fixture.joined().expect("fixture joins");
    encode_and_split(&rows, &fixture.schema, &SplitSpec::random(0.2, seed)).expect("fixture splits")
}

/// `n` rows of `d` standard normal coordinates shifted by `shift`.
pub fn gaussian_rows(n: usize, d: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = wardfair::seed::rng(seed);
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + shift
                })
                .collect()
        })
        .collect()
}
