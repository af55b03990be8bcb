use hyperstab::controller::{sample_gains, FeedbackOperator, GainMode};
use hyperstab::example;
use hyperstab::kernel::{example_closed_form, solve_continuum_kernels, KernelBounds, KernelGrid};
use hyperstab::params::{const1, const2, ContinuumParams, DiscreteParams};
use hyperstab::simulator::*;
use hyperstab::Error;
use proptest::prelude::*;
use rand::SeedableRng;

fn transport() -> DiscreteParams {
    DiscreteParams::uncoupled(vec![const1(1.0); 2], vec![const1(2.0), const1(1.0)])
}

fn bump(n: usize, m: usize, nx: usize) -> PlantState {
    let mut s = PlantState::zeros(n, m, nx);
    let h = 1.0 / (nx - 1) as f64;
    for r in s.u.iter_mut().chain(s.v.iter_mut()) {
        for (k, v) in r.iter_mut().enumerate() {
            *v = (std::f64::consts::PI * k as f64 * h).sin().powi(2);
        }
    }
    s
}

#[test]
fn zero_initial_data_stays_zero() {
    let d = example::discrete(3);
    let ks = example_closed_form(&KernelGrid::new(17, 17, 17));
    let op = FeedbackOperator::from_gains(&sample_gains(&ks, 3, GainMode::Pointwise).unwrap(), 64);
    let tr = simulate(&d, &op, &PlantState::zeros(3, 2, 64), &SimOptions { t_end: 1.0, nx: 64, ..Default::default() }).unwrap();
    assert!(tr.snapshots.iter().all(|s| s.u.iter().chain(&s.v).flatten().all(|&v| v == 0.0)));
    assert!(tr.norms.iter().all(|&e| e == 0.0));
}

#[test]
fn pure_transport_clears_the_domain() {
    let nx = 257;
    let init = bump(2, 2, nx);
    let opts = SimOptions { t_end: 3.0, nx, save_dt: Some(0.5), ..Default::default() };
    let tr = simulate(&transport(), &ZeroController { m: 2 }, &init, &opts).unwrap();
    let last = *tr.norms.last().unwrap();
    assert!(last <= 1e-3 * tr.norms[0], "{last} vs {}", tr.norms[0]);
}

#[test]
fn e_norm_weights_the_distributed_part() {
    let mut s = PlantState::zeros(1, 1, 33);
    s.u[0].fill(1.0);
    assert!((e_norm(&s) - 1.0).abs() < 1e-14);
    let mut s = PlantState::zeros(3, 1, 33);
    s.u.iter_mut().for_each(|r| r.fill(1.0));
    assert!((e_norm(&s) - 1.0).abs() < 1e-14);
    let mut s = PlantState::zeros(2, 1, 33);
    s.u[0].fill(1.0);
    assert!((e_norm(&s) - 0.5f64.sqrt()).abs() < 1e-14);
    let mut s = PlantState::zeros(2, 1, 33);
    s.v[0].fill(1.0);
    assert!((e_norm(&s) - 1.0).abs() < 1e-14);
}

#[test]
fn zero_kernels_give_the_identity_transform() {
    let p = ContinuumParams::uncoupled(const2(1.0), vec![const1(2.0), const1(1.0)]);
    let ks = solve_continuum_kernels(&p, KernelGrid::new(17, 17, 17), 1e-10, 50).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let s = random_smooth_state(3, 2, 65, &mut rng);
    let t = apply_transform(&ks, &s);
    assert_eq!(t.alpha, s.u);
    for (b, v) in t.beta.iter().zip(&s.v) {
        for (x, y) in b.iter().zip(v) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}

#[test]
fn transform_leaves_the_left_boundary_alone() {
    let ks = example_closed_form(&KernelGrid::new(33, 33, 33));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let s = random_smooth_state(4, 2, 65, &mut rng);
    let t = apply_transform(&ks, &s);
    for (b, v) in t.beta.iter().zip(&s.v) {
        assert!((b[0] - v[0]).abs() < 1e-12);
    }
}

fn bounds(q: f64, g: f64) -> KernelBounds {
    let ks = example_closed_form(&KernelGrid::new(9, 9, 9));
    let mut b = hyperstab::kernel::compute_bounds(&example::continuum(), Some(&ks));
    b.q = q;
    b.g = g;
    b
}

#[test]
fn lyapunov_weights() {
    let lp = choose_lyapunov_params(&bounds(0.5, 0.0), 3);
    assert!(lp.d.iter().all(|&d| (d - 1.01).abs() < 1e-12));
    assert_eq!(lp.f[2], 0.0);
    assert!((lp.f[0] - 2.0 * 1.01).abs() < 1e-12);
    assert!(lp.delta > lp.delta_min && lp.c_v > 0.0 && lp.rate > 0.0);
    let lp = choose_lyapunov_params(&bounds(0.5, 1.0), 3);
    assert!(lp.d_min[0] > lp.d_min[1] && lp.d_min[1] > lp.d_min[2]);
}

#[test]
fn lyapunov_value_of_a_flat_target() {
    let p = ContinuumParams::uncoupled(const2(1.0), vec![const1(2.0)]);
    let lp = LyapunovParams { delta: 0.0, d: vec![1.0], c_v: 0.0, f: vec![0.0], delta_min: 0.0, d_min: vec![1.0], rate: 0.0 };
    let t = TargetSnapshot { t: 0.0, alpha: vec![vec![0.0; 33]], beta: vec![vec![1.0; 33]] };
    assert!((lyapunov_value(&t, &lp, &p) - 0.5).abs() < 1e-14);
    let t = TargetSnapshot { t: 0.0, alpha: vec![vec![1.0; 33]; 4], beta: vec![vec![0.0; 33]] };
    assert!((lyapunov_value(&t, &lp, &p) - 1.0).abs() < 1e-14);
    let z = TargetSnapshot { t: 0.0, alpha: vec![vec![0.0; 33]; 2], beta: vec![vec![0.0; 33]] };
    assert_eq!(lyapunov_value(&z, &lp, &p), 0.0);
}

#[test]
fn fit_of_an_exponential() {
    let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.25).collect();
    let values: Vec<f64> = times.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
    let fit = fit_lyapunov(&times, &values, 1.0);
    assert!(fit.non_increasing);
    assert!((fit.rate + 0.7).abs() < 1e-12);
    assert!((fit.envelope - 1.0).abs() < 1e-12);
    let mut bumped = values.clone();
    bumped[10] *= 2.0;
    let fit = fit_lyapunov(&times, &bumped, 1.0);
    assert_eq!(fit.increases, vec![2.5]);
    assert!(fit.envelope > 1.0);
}

#[test]
fn open_loop_grows_and_closed_loop_decays() {
    let n = 4;
    let nx = 128;
    let d = example::discrete(n);
    let (u0, v0) = example::initial_values(n);
    let mut init = PlantState::zeros(n, 2, nx);
    init.u.iter_mut().zip(&u0).for_each(|(r, c)| r.fill(*c));
    init.v.iter_mut().zip(&v0).for_each(|(r, c)| r.fill(*c));
    let opts = SimOptions { t_end: 4.0, nx, ..Default::default() };
    let open = simulate(&d, &ZeroController { m: 2 }, &init, &opts).unwrap();
    assert!(open.norms.last().unwrap() > &open.norms[0]);
    let ks = solve_continuum_kernels(&example::continuum(), KernelGrid::new(33, 33, 33), 1e-8, 200).unwrap();
    let op = FeedbackOperator::from_gains(&sample_gains(&ks, n, GainMode::Pointwise).unwrap(), nx);
    let closed = simulate(&d, &op, &init, &opts).unwrap();
    assert!(*closed.norms.last().unwrap() < 0.1 * closed.norms[0], "{:?}", closed.norms.last());
}

#[test]
fn zero_horizon_gives_one_snapshot() {
    let init = bump(2, 2, 32);
    let tr = simulate(&transport(), &ZeroController { m: 2 }, &init, &SimOptions { t_end: 0.0, nx: 32, ..Default::default() }).unwrap();
    assert_eq!(tr.snapshots.len(), 1);
    assert_eq!(tr.steps, 0);
    assert_eq!(tr.snapshots[0].u, init.u);
}

#[test]
fn blow_up_is_reported() {
    let d = example::discrete(2);
    let (u0, _) = example::initial_values(2);
    let mut init = PlantState::zeros(2, 2, 64);
    init.u.iter_mut().zip(&u0).for_each(|(r, c)| r.fill(*c));
    init.v.iter_mut().for_each(|r| r.fill(1.0));
    let r = simulate(&d, &ZeroController { m: 2 }, &init, &SimOptions { t_end: 5.0, nx: 64, blow_up: 1.5, ..Default::default() });
    assert!(matches!(r, Err(Error::BlowUp { .. })), "{r:?}");
}

#[test]
fn shape_mismatch_is_rejected() {
    let r = simulate(&transport(), &ZeroController { m: 2 }, &PlantState::zeros(3, 2, 32), &SimOptions { nx: 32, ..Default::default() });
    assert!(matches!(r, Err(Error::Dimension { .. })));
    let r = simulate(&transport(), &ZeroController { m: 2 }, &PlantState::zeros(2, 2, 4), &SimOptions { nx: 4, ..Default::default() });
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn trajectory_files() {
    let init = bump(2, 2, 32);
    let tr = simulate(&transport(), &ZeroController { m: 2 }, &init, &SimOptions { t_end: 0.5, nx: 32, save_dt: Some(0.25), ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let man = write_trajectory(&tr, dir.path(), None).unwrap();
    for f in man.files.iter().chain(std::iter::once(&"manifest.json".to_string())) {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let norms = std::fs::read_to_string(dir.path().join("norms.csv")).unwrap();
    assert_eq!(norms.lines().count(), 1 + tr.snapshots.len());
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + tr.snapshots.len() * 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn transform_round_trip(seed in any::<u64>(), n in 1usize..8) {
        let ks = example_closed_form(&KernelGrid::new(33, 33, 33));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = random_smooth_state(n, 2, 65, &mut rng);
        let op = TransformOperator::new(&ks, n, 65);
        let back = op.invert(&op.apply(&s));
        let diff = PlantState {
            t: 0.0,
            u: s.u.iter().zip(&back.u).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect(),
            v: s.v.iter().zip(&back.v).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect(),
        };
        prop_assert!(e_norm(&diff) <= 1e-3 * e_norm(&s).max(1e-300));
    }
}
