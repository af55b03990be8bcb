use std::sync::Arc;

use hyperstab::example;
use hyperstab::params::*;
use proptest::prelude::*;

fn two_speed(mu0: f64, mu1: f64) -> ContinuumParams {
    ContinuumParams::uncoupled(const2(1.0), vec![const1(mu0), const1(mu1)])
}

#[test]
fn benchmark_plant_passes_validation() {
    let r = validate(&example::continuum()).unwrap();
    assert!(r.pass, "{:?}", r.violations);
    assert!(r.violations.is_empty());
    for n in [1, 2, 10] {
        assert!(validate(&example::discrete(n)).unwrap().pass);
    }
}

#[test]
fn equal_speeds_break_ordering() {
    let r = validate(&two_speed(1.0, 1.0)).unwrap();
    assert!(!r.pass);
    assert!(r.violations.iter().any(|v| v.assumption.starts_with("mu-ordering")));
}

#[test]
fn sign_changing_lambda_is_reported_at_y_zero() {
    let mut p = two_speed(2.0, 1.0);
    p.lambda = Arc::new(|_, y| y - 0.5);
    let r = validate(&p).unwrap();
    assert!(!r.pass);
    let v = r.violations.iter().find(|v| v.assumption == "lambda-positive").unwrap();
    assert_eq!(v.location[1], 0.0);
    assert!((v.value + 0.5).abs() < 1e-12);
}

#[test]
fn non_finite_function_is_a_config_error() {
    let mut p = two_speed(2.0, 1.0);
    p.q[0] = Arc::new(|y| 1.0 / (y - 0.5));
    assert!(matches!(validate(&p), Err(hyperstab::Error::Config(_))));
}

#[test]
fn incompatible_artificial_data_is_flagged() {
    let mut p = two_speed(2.0, 1.0);
    p.l1[1][0] = Some(const1(3.0));
    let r = validate(&p).unwrap();
    assert!(r.violations.iter().any(|v| v.assumption.starts_with("l1-compatibility")));
}

#[test]
fn single_node_lift_is_constant_in_y() {
    let d = example::discrete(1);
    let p = lift_discrete(&d, Interpolation::PiecewiseLinear).unwrap();
    for y in [0.0, 0.3, 1.0] {
        assert_eq!((p.theta[0])(0.4, y), (d.theta[0][0])(0.4));
        assert_eq!((p.q[1])(y), d.q[0][1]);
    }
}

#[test]
fn alternating_speeds_lift_to_their_average() {
    let n = 6;
    let lam: Vec<Fn1> = (0..n).map(|i| const1(if i % 2 == 0 { 1.0 } else { 2.0 })).collect();
    let d = DiscreteParams::uncoupled(lam, vec![const1(2.0), const1(1.0)]);
    let p = lift_discrete(&d, Interpolation::PiecewiseLinear).unwrap();
    for i in 1..n {
        let mid = (i as f64 + 0.5) / n as f64;
        assert!(((p.lambda)(0.3, mid) - 1.5).abs() < 1e-12);
    }
}

#[test]
fn lift_of_benchmark_arrays_matches_the_continuum_at_nodes() {
    let c = example::continuum();
    for mode in [Interpolation::PiecewiseLinear, Interpolation::Spline] {
        let n = 5;
        let p = lift_discrete(&example::discrete(n), mode).unwrap();
        for i in 0..n {
            let y = (i + 1) as f64 / n as f64;
            for x in [0.0, 0.35, 1.0] {
                assert!(((p.theta[1])(x, y) - (c.theta[1])(x, y)).abs() < 1e-12);
                assert!(((p.w[0])(x, y) - (c.w[0])(x, y)).abs() < 1e-12);
                let e = (i % 3 + 1) as f64 / n as f64;
                assert!(((p.sigma)(x, y, e) - (c.sigma)(x, y, e)).abs() < 1e-12);
            }
            assert!(((p.q[0])(y) - (c.q[0])(y)).abs() < 1e-12);
        }
    }
}

#[test]
fn step_params_use_half_open_cells() {
    let d = DiscreteParams::uncoupled(vec![const1(1.0), const1(3.0)], vec![const1(2.0), const1(1.0)]);
    let p = make_step_params(&d).unwrap();
    assert_eq!((p.lambda)(0.2, 0.25), 1.0);
    assert_eq!((p.lambda)(0.2, 0.75), 3.0);
    assert_eq!((p.lambda)(0.2, 0.5), 1.0);
    assert_eq!((p.lambda)(0.2, 0.5 + 1e-9), 3.0);
    assert_eq!((p.lambda)(0.2, 0.0), 1.0);
}

#[test]
fn step_sigma_picks_the_cell_pair() {
    let n = 4;
    let mut d = DiscreteParams::uncoupled((0..n).map(|_| const1(1.0)).collect(), vec![const1(1.0)]);
    for i in 0..n {
        for l in 0..n {
            d.sigma[i][l] = const1((10 * i + l) as f64);
        }
    }
    let p = make_step_params(&d).unwrap();
    assert_eq!((p.sigma)(0.6, 0.3, 0.8), 13.0);
}

#[test]
fn shape_errors_are_caught() {
    let mut d = example::discrete(3);
    d.q.pop();
    assert!(make_step_params(&d).is_err());
    assert!(lift_discrete(&d, Interpolation::PiecewiseLinear).is_err());
}

proptest! {
    #[test]
    fn step_params_reproduce_nodal_arrays(n in 1usize..12, x in 0.0f64..1.0) {
        let d = example::discrete(n);
        let p = make_step_params(&d).unwrap();
        for i in 0..n {
            let y = (i + 1) as f64 / n as f64;
            prop_assert_eq!((p.lambda)(x, y), (d.lambda[i])(x));
            for j in 0..2 {
                prop_assert_eq!((p.theta[j])(x, y), (d.theta[j][i])(x));
                prop_assert_eq!((p.w[j])(x, y), (d.w[i][j])(x));
                prop_assert_eq!((p.q[j])(y), d.q[i][j]);
            }
            for l in 0..n {
                prop_assert_eq!((p.sigma)(x, y, (l + 1) as f64 / n as f64), (d.sigma[i][l])(x));
            }
        }
    }

    #[test]
    fn linear_lift_of_positive_speeds_stays_valid(speeds in prop::collection::vec(0.1f64..5.0, 1..8)) {
        let lam: Vec<Fn1> = speeds.iter().map(|&c| const1(c)).collect();
        let d = DiscreteParams::uncoupled(lam, vec![const1(2.0), const1(1.0)]);
        prop_assert!(validate(&d).unwrap().pass);
        let p = lift_discrete(&d, Interpolation::PiecewiseLinear).unwrap();
        prop_assert!(validate(&p).unwrap().pass);
    }
}
