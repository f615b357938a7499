mod common;

use common::{experiment, random_field, random_leaders, random_vec, rel_field_diff, rng};
use snlab_core::lattice_weights::{SpatialGrid, TimeGrid};
use snlab_core::noise_tree::{expect_terminal_inner, level_inner, Lattice};
use snlab_core::oracle::DenseInstance;
use snlab_core::parabolic_core::{CouplingField, DiffusionStencil, Propagator, SourceSpec, N_COMP};
use snlab_core::systems::{solve_state, FollowerControls, Scenario};

fn uncoupled(n_x: usize, k: usize, r: usize, horizon: f64) -> Propagator {
    let grid = SpatialGrid::new(1.0, n_x).unwrap();
    let time = TimeGrid::new(horizon, k, r).unwrap();
    let coupling = CouplingField::constant([[0.0; 2]; 2], &time, &grid).unwrap();
    Propagator::new(Lattice::new(grid, time).unwrap(), coupling).unwrap()
}

#[test]
fn eigenmode_decays_by_discrete_factor() {
    let prop = uncoupled(15, 2, 3, 0.25);
    let lat = prop.lattice();
    let pi = std::f64::consts::PI;
    let h = lat.h();
    let mode: Vec<f64> = lat.grid.nodes().iter().map(|&x| (pi * x).sin()).collect();
    let y0: Vec<f64> = mode.iter().chain(&mode).copied().collect();
    let y = prop.forward_sweep(&y0, &SourceSpec::zero()).unwrap();
    let mu_h = 4.0 * (pi * h / 2.0).sin().powi(2) / (h * h);
    let factor = (1.0 / (1.0 + lat.dt() * mu_h)).powi(lat.steps() as i32);
    for node in 0..y.nodes(lat.steps()) {
        for c in 0..N_COMP {
            for (j, m) in mode.iter().enumerate() {
                assert!((y.get(lat.steps(), node, c, j) - factor * m).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn zero_data_stays_zero() {
    let e = experiment("tiny.ini", Scenario::FullObservation);
    let prop = e.spec.propagator();
    let n = N_COMP * prop.lattice().n_x();
    let y = prop.forward_sweep(&vec![0.0; n], &SourceSpec::zero()).unwrap();
    assert_eq!(y.max_abs(), 0.0);
    let z = prop.backward_sweep(&vec![0.0; y.terminal().len()], None).unwrap();
    assert_eq!(z.value.max_abs(), 0.0);
    assert_eq!(z.martingale.max_abs(), 0.0);
}

#[test]
fn backward_eigenmode_matches_forward_damping() {
    let prop = uncoupled(11, 1, 4, 0.5);
    let lat = prop.lattice();
    let pi = std::f64::consts::PI;
    let mode: Vec<f64> = lat.grid.nodes().iter().map(|&x| (2.0 * pi * x).sin()).collect();
    let y0: Vec<f64> = mode.iter().chain(&mode).copied().collect();
    let forward = prop.forward_sweep(&y0, &SourceSpec::zero()).unwrap();
    let terminal: Vec<f64> = (0..2).flat_map(|_| y0.iter().copied()).collect();
    let backward = prop.backward_sweep(&terminal, None).unwrap();
    let f_ratio = forward.get(lat.steps(), 0, 0, 2) / y0[2];
    let b_ratio = backward.value.get(0, 0, 0, 2) / y0[2];
    assert!((f_ratio - b_ratio).abs() < 1e-14);
}

#[test]
fn stencil_is_contractive_and_factorised() {
    let grid = SpatialGrid::new(2.0, 40).unwrap();
    let s = DiffusionStencil::new(&grid, 0.01).unwrap();
    assert!(s.factorization_residual(&random_vec(&mut rng(2), 40)) <= 1e-12);
    let mut r = rng(1);
    for _ in 0..20 {
        let x = random_vec(&mut r, 40);
        let mut y = x.clone();
        s.solve_in_place(&mut y);
        let nx: f64 = x.iter().map(|v| v * v).sum();
        let ny: f64 = y.iter().map(|v| v * v).sum();
        assert!(ny <= nx);
    }
}

#[test]
fn sweeps_match_dense_assembly() {
    for name in ["tiny.ini"] {
        for scenario in [Scenario::FullObservation, Scenario::SecondComponent] {
            let e = experiment(name, scenario);
            let spec = &e.spec;
            let lat = spec.lattice();
            let inst = DenseInstance::assemble(spec).unwrap();
            let mut r = rng(7);
            for _ in 0..20 {
                let y0 = random_vec(&mut r, N_COMP * lat.n_x());
                let leaders = random_leaders(&mut r, lat);
                let mut followers = FollowerControls {
                    v: (0..spec.follower_count()).map(|_| random_field(&mut r, lat, 1)).collect(),
                };
                // frozen follower unknowns are not part of the dense control space
                for v in &mut followers.v {
                    (0..=lat.steps()).filter(|&m| spec.is_frozen(m)).for_each(|m| v.clear_slice(m));
                }
                let iterative = solve_state(spec, &y0, &leaders, &followers).unwrap();
                let dense = inst.state(&y0, &leaders, &followers).unwrap();
                assert!(rel_field_diff(&iterative, &dense) <= 1e-12);
            }
        }
    }
}

#[test]
fn forward_matrix_columns_match_sweeps() {
    let mut c = common::config("tiny.ini");
    c.substeps = 1;
    c.horizon = 0.1;
    c.followers = vec![(0.1, 0.2)];
    c.alpha = vec![1.0];
    c.beta = vec![100.0];
    c.target_amplitude = vec![0.2];
    let e = c.build().unwrap();
    let inst = DenseInstance::assemble(&e.spec).unwrap();
    let f = inst.forward_matrix().unwrap();
    let n = N_COMP * e.spec.lattice().n_x();
    for k in 0..n {
        let mut y0 = vec![0.0; n];
        y0[k] = 1.0;
        let y = e.spec.propagator().forward_sweep(&y0, &SourceSpec::zero()).unwrap();
        let col = f.column(k);
        let flat = y.to_flat();
        let diff = flat.iter().zip(col.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-14, "column {k}: {diff}");
    }
}

#[test]
fn uncoupled_noiseless_map_is_identical_on_every_path() {
    let prop = uncoupled(7, 3, 2, 0.3);
    let lat = prop.lattice();
    let mut r = rng(3);
    let y0 = random_vec(&mut r, N_COMP * lat.n_x());
    let y = prop.forward_sweep(&y0, &SourceSpec::zero()).unwrap();
    let block = N_COMP * lat.n_x();
    let t = y.terminal();
    for node in 1..y.nodes(lat.steps()) {
        assert_eq!(&t[..block], &t[node * block..(node + 1) * block]);
    }
}

#[test]
fn energy_bound_does_not_explode_under_refinement() {
    let mut bounds = Vec::new();
    for r in [2, 4, 8, 16] {
        let mut c = common::config("desk.ini");
        c.substeps = r;
        let e = c.build().unwrap();
        let prop = e.spec.propagator();
        let lat = prop.lattice();
        let mut g = rng(11);
        let y0 = random_vec(&mut g, N_COMP * lat.n_x());
        let y = prop.forward_sweep(&y0, &SourceSpec::zero()).unwrap();
        let e0 = level_inner(&y0, &y0, 1, lat.h());
        let mut worst: f64 = 0.0;
        for m in 0..=lat.steps() {
            let s = y.slice(m);
            worst = worst.max(level_inner(s, s, y.nodes(m), lat.h()) / e0);
        }
        bounds.push(worst);
    }
    let a_norm = 10.0_f64;
    let horizon = common::config("desk.ini").horizon;
    for b in &bounds {
        assert!(b.is_finite() && *b <= (2.0 * a_norm * horizon).exp());
    }
    assert!(bounds[3] <= 1.5 * bounds[0]);
}

#[test]
fn terminal_inner_agrees_with_level_inner() {
    let e = experiment("tiny.ini", Scenario::FullObservation);
    let lat = e.spec.lattice();
    let mut r = rng(5);
    let a = random_field(&mut r, lat, N_COMP);
    let b = random_field(&mut r, lat, N_COMP);
    let direct = level_inner(a.terminal(), b.terminal(), a.nodes(lat.steps()), lat.h());
    assert!((expect_terminal_inner(&a, &b, &lat.grid).unwrap() - direct).abs() <= 1e-15);
}
