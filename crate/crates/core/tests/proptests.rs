mod common;

use proptest::prelude::*;
use snlab_core::config::ExperimentConfig;
use snlab_core::lattice_weights::{ell_at, gamma_at, SpatialGrid};
use snlab_core::noise_tree::{conditional_expectation, martingale_coefficient, NoiseTree};
use snlab_core::parabolic_core::{DiffusionStencil, SourceSpec, N_COMP};
use snlab_core::systems::Scenario;

fn level(nodes: usize, block: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, nodes * block)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tower_property(values in level(8, 3)) {
        let up = conditional_expectation(&values, 3).unwrap();
        let twice = conditional_expectation(&up, 3).unwrap();
        for p in 0..2 {
            for b in 0..3 {
                let direct: f64 = (0..4).map(|c| values[(4 * p + c) * 3 + b]).sum::<f64>() / 4.0;
                prop_assert!((twice[p * 3 + b] - direct).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn children_split_into_mean_and_martingale(values in level(4, 2), dt in 1e-4..1.0f64) {
        let tree = NoiseTree::new(3, dt).unwrap();
        let mean = conditional_expectation(&values, 2).unwrap();
        let z = martingale_coefficient(&values, 2, &tree).unwrap();
        for child in 0..4 {
            for b in 0..2 {
                let k = (child / 2) * 2 + b;
                let rebuilt = mean[k] + tree.increment(child) * z[k];
                prop_assert!((rebuilt - values[child * 2 + b]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn stencil_never_grows_the_euclidean_norm(
        x in prop::collection::vec(-5.0..5.0f64, 12),
        dt in 1e-5..10.0f64,
        length in 0.1..10.0f64,
    ) {
        let grid = SpatialGrid::new(length, 12).unwrap();
        let s = DiffusionStencil::new(&grid, dt).unwrap();
        let mut y = x.clone();
        s.solve_in_place(&mut y);
        let nx: f64 = x.iter().map(|v| v * v).sum();
        let ny: f64 = y.iter().map(|v| v * v).sum();
        prop_assert!(ny <= nx * (1.0 + 1e-14));
    }

    #[test]
    fn bounds_between_ell_and_gamma(horizon in 0.01..100.0f64, frac in 0.001..0.999f64) {
        let t = frac * horizon;
        let (ell, gamma) = (ell_at(t, horizon), gamma_at(t, horizon));
        prop_assert!(ell * gamma >= 1.0 - 1e-12);
        prop_assert!(ell <= 0.25 * horizon * horizon * (1.0 + 1e-12));
        prop_assert!(gamma >= 4.0 / (horizon * horizon) * (1.0 - 1e-12));
        if t >= 0.5 * horizon {
            prop_assert!((ell * gamma - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn config_text_round_trips(
        n_x in 3usize..60,
        horizon in 0.01..5.0f64,
        k in 1usize..8,
        r in 1usize..5,
        a21 in -20.0..20.0f64,
        beta in prop::collection::vec(1.0..1e4f64, 2),
        second in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut c = ExperimentConfig::default();
        c.n_x = n_x;
        c.horizon = horizon;
        c.noise_steps = k;
        c.substeps = r;
        c.coupling[1][0] = a21;
        c.beta = beta;
        c.scenario = if second { Scenario::SecondComponent } else { Scenario::FullObservation };
        c.seed = seed;
        let back = ExperimentConfig::parse(&c.to_ini()).unwrap();
        prop_assert_eq!(back, c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_sweep_is_linear(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let e = common::experiment("tiny.ini", Scenario::FullObservation);
        let prop = e.spec.propagator();
        let n = N_COMP * prop.lattice().n_x();
        let mut r = common::rng(seed);
        let x = common::random_vec(&mut r, n);
        let y = common::random_vec(&mut r, n);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let zero = SourceSpec::zero();
        let mut expected = prop.forward_sweep(&x, &zero).unwrap();
        expected.scale(a);
        expected.axpy(b, &prop.forward_sweep(&y, &zero).unwrap());
        let got = prop.forward_sweep(&combo, &zero).unwrap();
        prop_assert!(common::field_diff(&got, &expected) <= 1e-12 * (1.0 + expected.max_abs()));
    }
}
