use std::f64::consts::E;

use hyperstab::controller::*;
use hyperstab::example;
use hyperstab::kernel::{example_closed_form, solve_continuum_kernels, KernelGrid};
use hyperstab::kernel_nm::solve_nm_kernels;
use hyperstab::quadrature::YGrid;
use hyperstab::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

const NX: usize = 129;

fn closed() -> hyperstab::kernel::ContinuumKernelSet {
    example_closed_form(&KernelGrid::new(33, 33, 65))
}

fn ones(n: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0; NX]; n]
}

fn zeros(n: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; NX]; n]
}

#[test]
fn mean_value_gains_of_the_quadratic_profile() {
    let ks = closed();
    for n in [1, 2] {
        let g = sample_gains(&ks, n, GainMode::MeanValue).unwrap();
        for l in 0..n {
            for v in &g.k[0][0][l] {
                assert!((v + 1.0 / 6.0).abs() < 1e-4, "n={n} l={l}: {v}");
            }
        }
    }
}

#[test]
fn pointwise_gains_sample_cell_ends() {
    let g = sample_gains(&closed(), 2, GainMode::Pointwise).unwrap();
    assert!(g.k[0][0][1].iter().all(|v| v.abs() < 1e-12));
    assert!(g.k[0][0][0].iter().all(|v| (v + 0.25).abs() < 1e-12));
    assert!(g.warnings.is_empty());
}

#[test]
fn default_mode_follows_y_continuity() {
    assert_eq!(default_mode(&closed()), GainMode::Pointwise);
    let nm = solve_nm_kernels(&example::discrete(2), 9, 9, 1e-8, 200).unwrap();
    assert_eq!(default_mode(&nm.lifted), GainMode::MeanValue);
    let g = sample_gains(&nm.lifted, 2, GainMode::Pointwise).unwrap();
    assert!(!g.warnings.is_empty());
}

#[test]
fn segment_supports_at_x_one() {
    let g = sample_gains(&closed(), 3, GainMode::Pointwise).unwrap();
    let s = &g.xi[0][0];
    assert!((s[0] - 0.5).abs() < 1e-9 && (s[s.len() - 1] - 1.0).abs() < 1e-12);
    let s = &g.xi[0][1];
    assert!(s[0] == 0.0 && (s[s.len() - 1] - 0.5).abs() < 1e-9);
}

#[test]
fn continuum_law_on_a_unit_state() {
    let ks = closed();
    let y = YGrid::trapezoid(65);
    let state = ContinuumState { u: vec![vec![1.0; NX]; y.len()], v: zeros(2), y };
    let u = eval_control_continuum(&ks, &state).unwrap();
    assert!((u[0] + E / 12.0).abs() < 1e-3, "{}", u[0]);
}

#[test]
fn zero_state_gives_zero_control() {
    let ks = closed();
    let y = YGrid::trapezoid(9);
    let state = ContinuumState { u: vec![vec![0.0; NX]; 9], v: zeros(2), y };
    assert_eq!(eval_control_continuum(&ks, &state).unwrap(), vec![0.0, 0.0]);
    let g = sample_gains(&ks, 4, GainMode::Pointwise).unwrap();
    assert_eq!(eval_control_sampled(&g, &zeros(4), &zeros(2)).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn sampled_law_matches_the_continuum_law_on_step_states() {
    let ks = closed();
    let g = sample_gains(&ks, 2, GainMode::MeanValue).unwrap();
    let sampled = eval_control_sampled(&g, &ones(2), &zeros(2)).unwrap();
    let y = YGrid::trapezoid(65);
    let state = ContinuumState { u: vec![vec![1.0; NX]; y.len()], v: zeros(2), y };
    let cont = eval_control_continuum(&ks, &state).unwrap();
    for (a, b) in sampled.iter().zip(&cont) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn first_state_feedback_of_the_leading_row_vanishes() {
    let g = sample_gains(&closed(), 2, GainMode::Pointwise).unwrap();
    let mut v = zeros(2);
    v[0] = vec![1.0; NX];
    let u = eval_control_sampled(&g, &zeros(2), &v).unwrap();
    assert!(u[0].abs() < 1e-12);
}

#[test]
fn exact_law_is_the_sampled_law_with_exact_gains() {
    let d = example::discrete(3);
    let nm = solve_nm_kernels(&d, 17, 17, 1e-8, 200).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let u: Vec<Vec<f64>> = (0..3).map(|_| (0..NX).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let v: Vec<Vec<f64>> = (0..2).map(|_| (0..NX).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let exact = SampledGains::exact(&nm);
    assert_eq!(eval_control_exact(&nm, &u, &v).unwrap(), eval_control_sampled(&exact, &u, &v).unwrap());
    let gap = control_gap(&exact, &nm).unwrap();
    assert!(gap.coefficient < 1e-12, "{gap:?}");
}

#[test]
fn gain_gap_shrinks_along_the_ladder() {
    let ks = solve_continuum_kernels(&example::continuum(), KernelGrid::new(33, 33, 33), 1e-8, 200).unwrap();
    let mut last = f64::INFINITY;
    for n in [2, 6, 10] {
        let nm = solve_nm_kernels(&example::discrete(n), 33, 33, 1e-8, 200).unwrap();
        let g = sample_gains(&ks, n, GainMode::Pointwise).unwrap();
        let r = control_gap(&g, &nm).unwrap();
        assert_eq!(r.k_gap.len(), 2);
        assert!(r.coefficient < last, "n={n}: {r:?}");
        last = r.coefficient;
    }
}

#[test]
fn closed_form_and_solved_gains_agree() {
    let grid = KernelGrid::new(65, 65, 33);
    let solved = solve_continuum_kernels(&example::continuum(), grid.clone(), 1e-8, 200).unwrap();
    let exact = example_closed_form(&grid);
    let table = hyperstab::kernel::table_errors(&solved, &exact).unwrap().iter().map(|e| e.sup).fold(0.0, f64::max);
    let a = sample_gains(&solved, 4, GainMode::Pointwise).unwrap();
    let b = sample_gains(&exact, 4, GainMode::Pointwise).unwrap();
    let diff = a.k.iter().flatten().flatten().flatten().zip(b.k.iter().flatten().flatten().flatten())
        .chain(a.l.iter().flatten().flatten().flatten().zip(b.l.iter().flatten().flatten().flatten()))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff <= table, "{diff} > {table}");
}

#[test]
fn dimension_mismatch_is_rejected() {
    let g = sample_gains(&closed(), 3, GainMode::Pointwise).unwrap();
    assert!(matches!(eval_control_sampled(&g, &ones(2), &zeros(2)), Err(Error::Dimension { .. })));
}

#[test]
fn gains_export_csv() {
    let g = sample_gains(&closed(), 2, GainMode::MeanValue).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("gains.csv");
    g.write_csv(&f).unwrap();
    let text = std::fs::read_to_string(f).unwrap();
    assert_eq!(text.lines().next().unwrap(), "i,p,kind,index,xi,value");
    let rows = text.lines().count() - 1;
    assert_eq!(rows, 3 * 33 * (2 + 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn control_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = sample_gains(&closed(), 3, GainMode::Pointwise).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rand_rows = |k: usize| -> Vec<Vec<f64>> { (0..k).map(|_| (0..NX).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect() };
        let (u1, v1, u2, v2) = (rand_rows(3), rand_rows(2), rand_rows(3), rand_rows(2));
        let mix = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Vec<Vec<f64>> {
            x.iter().zip(y).map(|(r, s)| r.iter().zip(s).map(|(p, q)| a * p + b * q).collect()).collect()
        };
        let lhs = eval_control_sampled(&g, &mix(&u1, &u2), &mix(&v1, &v2)).unwrap();
        let r1 = eval_control_sampled(&g, &u1, &v1).unwrap();
        let r2 = eval_control_sampled(&g, &u2, &v2).unwrap();
        for j in 0..2 {
            prop_assert!((lhs[j] - (a * r1[j] + b * r2[j])).abs() < 1e-10);
        }
    }

    #[test]
    fn mean_value_sampling_is_contractive(n in 1usize..16) {
        let ks = closed();
        let g = sample_gains(&ks, n, GainMode::MeanValue).unwrap();
        for (i, p) in [(0usize, 0usize), (0, 1), (1, 1)] {
            for (b, &xi) in g.xi[i][p - i].iter().enumerate() {
                let lhs = (0..n).map(|l| g.k[i][p - i][l][b].powi(2)).sum::<f64>().sqrt() / (n as f64).sqrt();
                let prof = ks.k_profile(i, p, 1.0, xi);
                let rhs = ks.grid.y.norm_sq(&prof).sqrt();
                prop_assert!(lhs <= rhs * (1.0 + 1e-3) + 1e-12, "{} > {}", lhs, rhs);
            }
        }
    }
}
