use std::path::PathBuf;

use hyperstab::controller::GainMode;
use hyperstab_cli::config::{ControllerKind, PlantKind};
use hyperstab_cli::{parse_config, Command, ConfigError};

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn minimal_config_gets_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&write(&dir, "c.toml", "command = \"validate\"\n[plant]\nkind = \"example\"\n")).unwrap();
    assert_eq!(cfg.command, Command::Validate);
    assert_eq!(cfg.plant().kind, PlantKind::Example);
    assert_eq!(cfg.plant().n, 10);
    assert_eq!(cfg.kernel_grid, [65, 65, 33]);
    assert_eq!(cfg.tol, 1e-8);
    assert_eq!(cfg.max_iter, 200);
    assert_eq!(cfg.n_list, vec![2, 6, 10]);
    assert_eq!(cfg.sim.nx, 256);
    assert_eq!(cfg.sim.controller, ControllerKind::Sampled);
    assert_eq!(cfg.sim.gain_mode, GainMode::Pointwise);
}

#[test]
fn n_list_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let body = "command = \"convergence-study\"\nn_list = [4, 8, 16]\n[plant]\nkind = \"example\"\n";
    assert_eq!(parse_config(&write(&dir, "c.toml", body)).unwrap().n_list, vec![4, 8, 16]);
}

#[test]
fn negative_tolerance_is_rejected_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let body = "command = \"solve-kernels\"\ntol = -1e-8\n[plant]\nkind = \"example\"\n";
    match parse_config(&write(&dir, "c.toml", body)) {
        Err(ConfigError::Invalid { field, line, .. }) => {
            assert_eq!(field, "tol");
            assert_eq!(line, Some(2));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_and_malformed_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let typo = "command = \"validate\"\ntoll = 1e-8\n[plant]\nkind = \"example\"\n";
    assert!(matches!(parse_config(&write(&dir, "a.toml", typo)), Err(ConfigError::Syntax { .. })));
    let bad = "command = \"validate\"\ntol = 1e-8x\n[plant]\nkind = \"example\"\n";
    let err = parse_config(&write(&dir, "b.toml", bad)).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn json_and_plant_file() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "plant.toml", "[plant]\nkind = \"parametric\"\nn = 4\nmu = [2.0]\n");
    let cfg = parse_config(&write(&dir, "c.json", r#"{"command": "simulate", "plant_file": "plant.toml"}"#)).unwrap();
    assert_eq!(cfg.plant().kind, PlantKind::Parametric);
    assert_eq!(cfg.plant().n, 4);
    assert!(matches!(parse_config(&dir.path().join("missing.toml")), Err(ConfigError::Io { .. })));
}

#[test]
fn hash_ignores_output_location() {
    let dir = tempfile::tempdir().unwrap();
    let a = parse_config(&write(&dir, "a.toml", "command = \"validate\"\nout = \"x\"\n[plant]\nkind = \"example\"\n")).unwrap();
    let b = parse_config(&write(&dir, "b.toml", "command = \"validate\"\nout = \"y\"\n[plant]\nkind = \"example\"\n")).unwrap();
    let c = parse_config(&write(&dir, "c.toml", "command = \"validate\"\ntol = 1e-9\n[plant]\nkind = \"example\"\n")).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
}
