use hyperstab::example;
use hyperstab::geometry::*;
use hyperstab::params::{const1, const2, ContinuumParams};
use proptest::prelude::*;

const STEP: f64 = 1e-3;

fn map() -> SegmentMap {
    build_segment_map(&example::continuum(), DEFAULT_RESOLUTION).unwrap()
}

#[test]
fn benchmark_boundary_is_half_the_diagonal() {
    let m = map();
    for x in [0.0, 0.1, 0.5, 0.77, 1.0] {
        assert!((m.rho(0, 1, x) - x / 2.0).abs() < 1e-9);
        assert!((m.rho(0, 0, x) - x).abs() < 1e-12);
        assert!((m.rho(1, 1, x) - x).abs() < 1e-12);
        assert_eq!(m.rho(0, 2, x), 0.0);
    }
    assert!((m.phi(0, 1.0) - 0.5).abs() < 1e-12);
    assert!((m.phi(1, 1.0) - 1.0).abs() < 1e-12);
    assert!((m.phi_inv(0, 0.25) - 0.5).abs() < 1e-9);
}

#[test]
fn variable_speed_phi_matches_its_integral() {
    let p = ContinuumParams::uncoupled(const2(1.0), vec![std::sync::Arc::new(|x: f64| 1.0 + x), const1(0.5)]);
    let m = build_segment_map(&p, DEFAULT_RESOLUTION).unwrap();
    assert!((m.phi(0, 1.0) - 2f64.ln()).abs() < 1e-8);
    let x = 0.6;
    let expected = 0.5 * (1.0 + x as f64).ln();
    assert!((m.rho(0, 1, x) - expected).abs() < 1e-7);
}

#[test]
fn negative_speed_is_rejected() {
    let p = ContinuumParams::uncoupled(const2(1.0), vec![const1(-1.0)]);
    assert!(matches!(build_segment_map(&p, 64), Err(hyperstab::Error::Geometry(_))));
}

#[test]
fn segment_lookup() {
    let m = map();
    assert_eq!(m.segment_of(0, 0.8, 0.5).unwrap(), 0);
    assert_eq!(m.segment_of(0, 0.8, 0.2).unwrap(), 1);
    assert_eq!(m.segment_of(0, 0.8, 0.8).unwrap(), 0);
    assert_eq!(m.segment_of(1, 0.8, 0.8).unwrap(), 1);
    assert_eq!(m.segment_of(0, 0.8, 0.4).unwrap(), 0);
    assert!(matches!(m.segment_of(0, 0.5, 0.6), Err(hyperstab::Error::Domain(_))));
}

#[test]
fn k_path_to_the_diagonal() {
    let p = example::continuum();
    let path = trace_k_characteristic(&p, &map(), 0, 0, 0.9, 0.6, 0.3, STEP).unwrap();
    assert!((path.s_f - 0.1).abs() < 1e-9);
    assert!((path.terminal.0 - 0.7).abs() < 1e-9 && (path.terminal.1 - 0.7).abs() < 1e-9);
    assert_eq!(path.terminal_bc, TerminalBc::KDiagonal);
    for w in path.samples.windows(2) {
        assert!(w[1][1] < w[0][1] && w[1][2] > w[0][2]);
    }
}

#[test]
fn k_path_on_its_boundary_has_zero_length() {
    let p = example::continuum();
    let path = trace_k_characteristic(&p, &map(), 0, 0, 0.6, 0.6, 0.5, STEP).unwrap();
    assert_eq!(path.s_f, 0.0);
    assert_eq!(path.terminal, (0.6, 0.6));
}

#[test]
fn k_path_to_the_interior_curve() {
    let p = example::continuum();
    let path = trace_k_characteristic(&p, &map(), 0, 1, 0.8, 0.1, 0.5, STEP).unwrap();
    assert!((path.s_f - 0.15).abs() < 1e-8);
    assert!((path.terminal.0 - 0.5).abs() < 1e-8 && (path.terminal.1 - 0.25).abs() < 1e-8);
    assert_eq!(path.terminal_bc, TerminalBc::KUpperEdge);
}

#[test]
fn l_path_below_the_diagonal_runs_forward() {
    let p = example::continuum();
    let path = trace_l_characteristic(&p, &map(), 1, 0, 1, 0.5, 0.2, STEP).unwrap();
    assert!((path.s_f - 0.3).abs() < 1e-8);
    assert!((path.terminal.0 - 0.8).abs() < 1e-8 && (path.terminal.1 - 0.8).abs() < 1e-8);
    assert_eq!(path.terminal_bc, TerminalBc::LDiagonal);
    assert_eq!(l_direction(1, 0), 1.0);
}

#[test]
fn l_paths_starting_on_their_terminal() {
    let p = example::continuum();
    let m = map();
    let a = trace_l_characteristic(&p, &m, 1, 1, 1, 0.5, 0.0, STEP).unwrap();
    assert_eq!(a.s_f, 0.0);
    assert_eq!(a.terminal_bc, TerminalBc::LXiZero);
    let b = trace_l_characteristic(&p, &m, 0, 1, 0, 0.5, 0.5, STEP).unwrap();
    assert_eq!(b.s_f, 0.0);
    assert_eq!(b.terminal_bc, TerminalBc::LDiagonal);
    assert_eq!(l_direction(0, 1), -1.0);
}

#[test]
fn path_outside_its_segment_is_a_domain_error() {
    let p = example::continuum();
    assert!(trace_k_characteristic(&p, &map(), 0, 0, 0.8, 0.1, 0.5, STEP).is_err());
}

#[test]
fn path_exports_csv() {
    let p = example::continuum();
    let path = trace_k_characteristic(&p, &map(), 0, 0, 0.9, 0.6, 0.3, STEP).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("path.csv");
    path.write_csv(&f).unwrap();
    let text = std::fs::read_to_string(f).unwrap();
    assert!(text.starts_with("s,x,xi\n"));
    assert_eq!(text.lines().count(), path.samples.len() + 1);
}

proptest! {
    #[test]
    fn segment_boundaries_are_ordered(x in 1e-3f64..1.0, a in 1.05f64..4.0, b in 0.2f64..1.0) {
        let p = ContinuumParams::uncoupled(const2(1.0), vec![const1(a * 1.5), const1(a), const1(b.min(a / 1.05))]);
        let m = build_segment_map(&p, 2048).unwrap();
        for i in 0..3 {
            prop_assert!((m.rho(i, i, x) - x).abs() < 1e-12);
            for q in i..3 {
                prop_assert!(m.rho(i, q + 1, x) < m.rho(i, q, x));
            }
        }
    }

    #[test]
    fn k_terminals_lie_on_their_boundary(x in 0.05f64..1.0, r in 0.0f64..1.0, y in 0.0f64..1.0) {
        let p = example::continuum();
        let m = map();
        for (i, seg) in [(0, 0), (0, 1), (1, 1)] {
            let xi = m.lower(i, seg, x) + r * (m.upper(i, seg, x) - m.lower(i, seg, x));
            let path = trace_k_characteristic(&p, &m, i, seg, x, xi, y, STEP).unwrap();
            let (xf, zf) = path.terminal;
            prop_assert!((zf - m.upper(i, seg, xf)).abs() <= 2.0 * STEP);
        }
    }

    #[test]
    fn paths_depend_continuously_on_the_start(x in 0.3f64..0.9, r in 0.1f64..0.9) {
        let p = example::continuum();
        let m = map();
        let xi = r * x / 2.0;
        let base = trace_k_characteristic(&p, &m, 0, 1, x, xi, 0.5, STEP).unwrap().terminal;
        for h in [1e-3, 1e-4] {
            let t = trace_k_characteristic(&p, &m, 0, 1, x, xi + h, 0.5, STEP).unwrap().terminal;
            let d = ((t.0 - base.0).powi(2) + (t.1 - base.1).powi(2)).sqrt();
            prop_assert!(d <= 5.0 * h);
        }
    }
}
