use odecausal::nalgebra::DMatrix;
use odecausal::ode::{matrix_exponential_solution, reduce_second_order, simulate, uniform_grid};
use odecausal::systems::spiral_field;
use odecausal::{solve_ivp, LinearField, SolverConfig, Trajectory};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random matrix rescaled to the given spectral norm.
fn random_matrix(n: usize, norm: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = a.clone().svd(false, false).singular_values[0];
    a * (norm / s)
}

/// Sup-norm error in units of the mixed tolerance `atol + rtol·‖x‖∞`.
fn tolerance_units(got: &Trajectory, want: &Trajectory, rtol: f64, atol: f64) -> f64 {
    got.sup_distance(want) / (atol + rtol * want.sup_norm())
}

#[test]
fn spiral_matches_fine_step_rk4() {
    let f = spiral_field(0.1, 2.0);
    let times = uniform_grid(0.0, 2.5, 26);
    let x0 = [1.0, 0.0];
    let fine = solve_ivp(&f, &x0, &times, &SolverConfig::rk4(1e-4)).unwrap();
    let d = solve_ivp(&f, &x0, &times, &SolverConfig::generation()).unwrap();
    assert!(d.sup_distance(&fine) < 1e-5, "{}", d.sup_distance(&fine));
}

#[test]
fn free_motion_is_a_straight_line() {
    let f = LinearField::second_order(&DMatrix::zeros(1, 1), &DMatrix::zeros(1, 1)).unwrap();
    let times = uniform_grid(0.0, 3.0, 7);
    let traj = simulate(&f, &[1.0], Some(&[2.0]), &times, &SolverConfig::generation()).unwrap();
    for (row, t) in traj.rows().zip(&times) {
        assert!((row[0] - (1.0 + 2.0 * t)).abs() < 1e-9);
        assert!((row[1] - 2.0).abs() < 1e-9);
    }
}

#[test]
fn harmonic_oscillator_reaches_cos_one() {
    let f = LinearField::second_order(&DMatrix::zeros(1, 1), &DMatrix::from_element(1, 1, -1.0)).unwrap();
    let traj = simulate(&f, &[1.0], Some(&[0.0]), &[0.0, 1.0], &SolverConfig::generation()).unwrap();
    assert!((traj.row(1)[0] - 0.540_302_3).abs() < 1e-6);
}

#[test]
fn second_order_reduction_equals_the_assembled_block_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w1 = random_matrix(3, 0.5, &mut rng);
    let w2 = random_matrix(3, 1.0, &mut rng);
    let (x0, v0) = ([0.3, -0.1, 0.8], [0.0, 0.5, -0.2]);
    let times = uniform_grid(0.0, 4.0, 41);
    let cfg = SolverConfig::generation();

    let field = LinearField::second_order(&w1, &w2).unwrap();
    let (reduced, u0) = reduce_second_order(field, &x0, &v0).unwrap();
    let via_reduction = solve_ivp(&reduced, &u0, &times, &cfg).unwrap();

    // d/dt (x, v) = [[0, I], [W2, W1]] (x, v)
    let mut block = DMatrix::zeros(6, 6);
    block.view_mut((0, 3), (3, 3)).fill_with_identity();
    block.view_mut((3, 0), (3, 3)).copy_from(&w2);
    block.view_mut((3, 3), (3, 3)).copy_from(&w1);
    let assembled = solve_ivp(&LinearField::first_order(block.clone()).unwrap(), &u0, &times, &cfg).unwrap();
    assert!(via_reduction.sup_distance(&assembled) < 1e-12);
    let exact = matrix_exponential_solution(&block, &u0, &times).unwrap();
    assert!(tolerance_units(&via_reduction, &exact, 1e-7, 1e-9) <= 10.0);
}

#[test]
fn rk4_converges_with_order_four() {
    let a = DMatrix::from_row_slice(2, 2, &[-0.2, 1.5, -1.5, -0.2]);
    let field = LinearField::first_order(a.clone()).unwrap();
    let times = [0.0, 5.0];
    let exact = matrix_exponential_solution(&a, &[1.0, 0.5], &times).unwrap();
    let err = |h: f64| solve_ivp(&field, &[1.0, 0.5], &times, &SolverConfig::rk4(h)).unwrap().sup_distance(&exact);
    for h in [0.2, 0.1, 0.05] {
        let order = (err(h) / err(h / 2.0)).log2();
        assert!(order >= 3.8, "h = {h}: order {order}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn dopri5_matches_the_matrix_exponential(seed in any::<u64>(), norm in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=4);
        let a = random_matrix(n, norm, &mut rng);
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let times = uniform_grid(0.0, 5.0, 21);
        let (rtol, atol) = (1e-8, 1e-10);
        let got = solve_ivp(&LinearField::first_order(a.clone()).unwrap(), &x0, &times, &SolverConfig::dopri5(rtol, atol)).unwrap();
        let want = matrix_exponential_solution(&a, &x0, &times).unwrap();
        let units = tolerance_units(&got, &want, rtol, atol);
        prop_assert!(units <= 10.0, "{} tolerance units", units);
    }

    #[test]
    fn extra_output_times_do_not_move_shared_points(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(3, 2.0, &mut rng);
        let field = LinearField::first_order(a).unwrap();
        let coarse = uniform_grid(0.0, 4.0, 5);
        let fine = uniform_grid(0.0, 4.0, 41);
        let cfg = SolverConfig::generation();
        let c = solve_ivp(&field, &[1.0, 0.0, -1.0], &coarse, &cfg).unwrap();
        let f = solve_ivp(&field, &[1.0, 0.0, -1.0], &fine, &cfg).unwrap();
        let shared = f.select_rows(&[0, 10, 20, 30, 40]).unwrap();
        prop_assert!(tolerance_units(&c, &shared, 1e-7, 1e-9) <= 10.0);
    }
}
