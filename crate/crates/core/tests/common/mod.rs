#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snlab_core::config::{Experiment, ExperimentConfig};
use snlab_core::noise_tree::{AdaptedField, Lattice};
use snlab_core::systems::{LeaderControls, Scenario};

pub fn config(name: &str) -> ExperimentConfig {
    let path = format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    ExperimentConfig::parse(&text).unwrap()
}

pub fn experiment(name: &str, scenario: Scenario) -> Experiment {
    let mut c = config(name);
    c.scenario = scenario;
    c.build().unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_field(rng: &mut ChaCha8Rng, lat: &Lattice, n_comp: usize) -> AdaptedField {
    let mut f = lat.zeros(n_comp);
    f.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    f
}

pub fn random_leaders(rng: &mut ChaCha8Rng, lat: &Lattice) -> LeaderControls {
    LeaderControls {
        u1: random_field(rng, lat, 1),
        u2: random_field(rng, lat, 1),
        u3: random_field(rng, lat, 1),
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn field_diff(a: &AdaptedField, b: &AdaptedField) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative sup-norm difference.
pub fn rel_field_diff(a: &AdaptedField, b: &AdaptedField) -> f64 {
    field_diff(a, b) / a.max_abs().max(b.max_abs()).max(f64::MIN_POSITIVE)
}
