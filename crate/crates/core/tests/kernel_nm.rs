use hyperstab::example;
use hyperstab::kernel::{solve_continuum_kernels, KernelGrid};
use hyperstab::kernel_nm::*;
use hyperstab::params::{const1, DiscreteParams};
use hyperstab::quadrature::{cell_index, sq_distance};
use proptest::prelude::*;

#[test]
fn uncoupled_plant_has_zero_kernels() {
    let d = DiscreteParams::uncoupled(vec![const1(1.0); 3], vec![const1(2.0), const1(1.0)]);
    let nm = solve_nm_kernels(&d, 9, 9, 1e-8, 20).unwrap();
    assert!(nm.k.iter().flatten().flatten().flatten().all(|&v| v == 0.0));
    assert!(nm.lifted.l.iter().flatten().flatten().flatten().all(|&v| v == 0.0));
}

#[test]
fn two_cell_benchmark_satisfies_its_boundary_conditions() {
    let d = example::discrete(2);
    let nm = solve_nm_kernels(&d, 33, 33, 1e-8, 200).unwrap();
    let r = nm_boundary_residuals(&nm, &d);
    assert!(r.max() <= 1e-6, "{r:?}");
    assert_eq!(nm.k[0][0].len(), 2);
    let means = nm.lifted.cell_means(2);
    assert_eq!(means, nm.k);
}

#[test]
fn single_leftward_state() {
    let mut d = DiscreteParams::uncoupled(vec![const1(1.0), const1(1.5)], vec![const1(1.0)]);
    d.theta[0] = vec![const1(0.5), const1(-0.25)];
    d.q = vec![vec![0.5], vec![1.0]];
    let nm = solve_nm_kernels(&d, 17, 17, 1e-8, 200).unwrap();
    assert_eq!(nm.lifted.l[0][0].len(), 1);
    let r = nm_boundary_residuals(&nm, &d);
    assert_eq!(r.l_diagonal, 0.0);
    assert!(r.max() <= 1e-6, "{r:?}");
}

#[test]
fn identical_inputs_are_at_zero_distance() {
    let n = 3;
    let nm = solve_nm_kernels(&example::discrete(n), 17, 17, 1e-8, 200).unwrap();
    let r = kernel_distance(&nm.lifted, &nm, n);
    assert!(r.k < 1e-12 && r.l == 0.0, "{r:?}");
    assert!(!r.resampled);
}

#[test]
fn distance_report_aggregates() {
    let cont = solve_continuum_kernels(&example::continuum(), KernelGrid::new(17, 17, 17), 1e-8, 200).unwrap();
    let nm = solve_nm_kernels(&example::discrete(4), 17, 17, 1e-8, 200).unwrap();
    let r = kernel_distance(&cont, &nm, 4);
    assert!(r.k > 0.0);
    assert!(r.l_vector <= r.l_vector_bound + 1e-15);
    assert_eq!(r.l_vector_bound, 2f64.sqrt() * r.l);
    let pair_max = r.l_pair.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    assert_eq!(pair_max, r.l);
    assert_eq!(r.sample_grid, (17, 17));
}

#[test]
fn isometry_holds_on_the_benchmark() {
    let nm = solve_nm_kernels(&example::discrete(5), 17, 17, 1e-8, 200).unwrap();
    assert!(isometry_gap(&nm) <= 1e-12);
}

proptest! {
    #[test]
    fn step_extension_is_an_isometry(k in prop::collection::vec(-10.0f64..10.0, 1..40)) {
        let n = k.len();
        let breaks: Vec<f64> = (0..=n).map(|l| l as f64 / n as f64).collect();
        let lhs = k.iter().map(|v| v * v).sum::<f64>().sqrt() / (n as f64).sqrt();
        let rhs = sq_distance(&breaks, |y| k[cell_index(n, y)], |_| 0.0).sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs));
    }
}
