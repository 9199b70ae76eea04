use anyon_noise::cli::{self, Command, Preset, ResultEnvelope, EXIT_ASSERTION, EXIT_CONFIG, EXIT_OK, EXIT_RESOURCE};
use serde_json::Value;
use std::f64::consts::PI;
use std::path::Path;

fn run(dir: &Path, args: &[&str]) -> i32 {
    let mut full = vec!["anyon-sim".to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    full.push("--output-dir".into());
    full.push(dir.display().to_string());
    cli::main_with_args(full)
}

fn envelope(dir: &Path, command: &str) -> ResultEnvelope {
    let text = std::fs::read_to_string(dir.join(format!("{command}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn payload(dir: &Path, command: &str) -> Value {
    envelope(dir, command).payload
}

#[test]
fn algebra_check_passes_on_hardcore_and_flags_soft_core() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["algebra-check"]), EXIT_OK);
    assert!(payload(dir.path(), "algebra-check")["max_residual"].as_f64().unwrap() < 1e-10);

    assert_eq!(run(dir.path(), &["algebra-check", "--set", "system.kind=lattice", "--set", "system.n_sites=3"]), EXIT_OK);
    let p = payload(dir.path(), "algebra-check");
    assert_eq!(p["dim"], 8);
    assert_eq!(p["per_theta"].as_array().unwrap().len(), 8);

    let code = run(dir.path(), &["algebra-check", "--set", "system.kind=lattice", "--set", "system.cutoff=2"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(payload(dir.path(), "algebra-check")["soft_core_warning"], true);
}

#[test]
fn sweep_reports_the_universal_minimum() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["sweep", "--preset", "fig2"]), EXIT_OK);
    let p = payload(dir.path(), "sweep");
    let curves = p["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 3);
    for c in curves {
        assert!((c["argmin_theta"].as_f64().unwrap() - PI / 2.0).abs() <= PI / 720.0 + 1e-12);
    }
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("xi,theta,gamma_over_J\n"));
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().count(), 1 + 3 * 721);
    // 17 significant digits round-trip
    let first: Vec<f64> = csv.lines().nth(2).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first[1], PI / 720.0);

    assert_eq!(run(dir.path(), &["sweep", "--set", "sweep.values=[0.0]"]), EXIT_OK);
    assert_eq!(payload(dir.path(), "sweep")["curves"].as_array().unwrap().len(), 1);

    assert_eq!(run(dir.path(), &["sweep", "--set", "protection.theta_points=0"]), EXIT_CONFIG);
}

#[test]
fn config_errors_name_the_offending_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"noise": {"d_phi": 1.0, "dphi": 2.0}}"#).unwrap();
    assert_eq!(run(dir.path(), &["lifetime", "--config", cfg.to_str().unwrap()]), EXIT_CONFIG);
    let err = cli::load_config(Preset::Default, Some(&cfg), &[], None).unwrap_err();
    assert!(err.message.contains("noise"), "{}", err.message);
    assert!(err.message.contains("dphi"), "{}", err.message);

    let err = cli::load_config(Preset::Default, None, &["grid.dt=\"fast\"".into()], None).unwrap_err();
    assert!(err.message.contains("grid.dt"), "{}", err.message);
    assert_eq!(run(dir.path(), &["lifetime", "--set", "nonsense"]), EXIT_CONFIG);
    assert_eq!(run(dir.path(), &["lifetime", "--set", "system.links.0.i=7"]), EXIT_OK);
    assert_eq!(run(dir.path(), &["converge", "--set", "system.links.0.i=7"]), EXIT_CONFIG);
    assert_eq!(run(dir.path(), &["frobnicate"]), EXIT_CONFIG);
}

#[test]
fn config_file_merges_over_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"noise": {"d_phi": 2.5}, "system": {"gamma_res": 0.1}}"#).unwrap();
    let loaded = cli::load_config(Preset::Fig2, Some(&cfg), &["grid.dt=0.01".into()], Some(9)).unwrap();
    assert_eq!(loaded.noise.d_phi, 2.5);
    assert_eq!(loaded.system.gamma_res, 0.1);
    assert_eq!(loaded.system.links.len(), 2);
    assert_eq!(loaded.grid.dt, 0.01);
    assert_eq!(loaded.ensemble.master_seed, 9);
}

#[test]
fn converge_scales_its_threshold_and_handles_zero_noise() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(dir.path(), &["converge", "--set", "ensemble.n_traj=100", "--set", "grid.t_final=50"]);
    assert_eq!(code, EXIT_OK);
    let p = payload(dir.path(), "converge");
    assert!((p["threshold"].as_f64().unwrap() - 0.2).abs() < 1e-15);
    assert_eq!(p["schemes"].as_array().unwrap().len(), 2);

    let code = run(
        dir.path(),
        &[
            "converge",
            "--set",
            "system.links.0.amplitude=0.0",
            "--set",
            "ensemble.n_traj=4",
            "--set",
            "ensemble.schemes=[\"exact_unitary\"]",
            "--set",
            "grid.t_final=20",
            "--set",
            "ensemble.threshold=1e-8",
        ],
    );
    assert_eq!(code, EXIT_OK);
    let p = payload(dir.path(), "converge");
    assert!(p["schemes"][0]["max_trace_distance"].as_f64().unwrap() < 1e-8);

    let code = run(dir.path(), &["converge", "--set", "ensemble.n_traj=20", "--set", "grid.t_final=50", "--set", "ensemble.threshold=1e-6"]);
    assert_eq!(code, EXIT_ASSERTION);
}

#[test]
fn echoed_config_reproduces_the_payload() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["converge", "--set", "ensemble.n_traj=50", "--set", "grid.t_final=20", "--seed", "17"];
    assert_eq!(run(dir.path(), &args), EXIT_OK);
    let first = envelope(dir.path(), "converge");
    let echo = dir.path().join("echo.json");
    std::fs::write(&echo, serde_json::to_string(&first.config_echo).unwrap()).unwrap();
    let again = tempfile::tempdir().unwrap();
    assert_eq!(run(again.path(), &["converge", "--config", echo.to_str().unwrap(), "--workers", "3"]), EXIT_OK);
    let second = envelope(again.path(), "converge");
    assert_eq!(first.payload, second.payload);
    assert_eq!(first.config_echo, second.config_echo);
    assert_eq!(first.command, "converge");
    assert!(!first.tool_version.is_empty());
}

#[test]
fn spectrum_separates_dephasing_from_collective_loss() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["spectrum", "--preset", "ep-sweep"]), EXIT_OK);
    let p = payload(dir.path(), "spectrum");
    let cands = p["sweep"]["candidates"].as_array().unwrap();
    assert!(!cands.is_empty());
    assert!(cands.iter().all(|c| c["max_condition_number"].as_f64().unwrap() > 1e3));
    assert!(dir.path().join("spectrum.csv").exists());

    let code = run(dir.path(), &["spectrum", "--preset", "ep-sweep", "--set", "spectrum.model=\"two_link_dephasing\""]);
    assert_eq!(code, EXIT_OK);
    let p = payload(dir.path(), "spectrum");
    assert!(p["sweep"]["candidates"].as_array().unwrap().is_empty());
    assert!(p["sweep"]["max_normality_defect"].as_f64().unwrap() < 1e-12);

    let single = tempfile::tempdir().unwrap();
    assert_eq!(run(single.path(), &["spectrum", "--set", "sweep=null"]), EXIT_OK);
    let p = payload(single.path(), "spectrum");
    assert!(p.get("sweep").is_none());
    assert!(!single.path().join("spectrum.csv").exists());
}

#[test]
fn oversized_liouvillians_exit_with_the_resource_code() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(
        dir.path(),
        &[
            "spectrum",
            "--set",
            "sweep=null",
            "--set",
            "noise.xi=null",
            "--set",
            "spectrum.model=\"system\"",
            "--set",
            "system.kind=\"lattice\"",
            "--set",
            "system.n_sites=6",
            "--set",
            "system.site_energies=[]",
        ],
    );
    assert_eq!(code, EXIT_RESOURCE);
    assert!(!dir.path().join("spectrum.json").exists());
}

#[test]
fn lifetime_reports_the_optimal_angle() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["lifetime", "--set", "initial_state.r=[1,0,0]"]), EXIT_OK);
    let p = payload(dir.path(), "lifetime");
    assert!((p["theta_star"].as_f64().unwrap() - PI / 2.0).abs() < 1e-12);
    assert_eq!(p["lifetime_at_theta_star"]["infinite"], true);

    assert_eq!(run(dir.path(), &["lifetime", "--set", "initial_state.r=[1,0,0]", "--set", "system.gamma_res=0.1"]), EXIT_OK);
    let p = payload(dir.path(), "lifetime");
    assert!((p["lifetime_at_theta_star"]["value"].as_f64().unwrap() - 10.0).abs() < 1e-12);

    assert_eq!(run(dir.path(), &["lifetime", "--set", "initial_state.r=[0,0,1]", "--set", "system.gamma_res=0.1"]), EXIT_OK);
    let p = payload(dir.path(), "lifetime");
    assert!(p["theta_star"].is_null());
    assert_eq!(p["theta_star_undefined"], true);
    let expected = 1.0 / (0.1 + 0.02);
    assert!((p["lifetime_at_theta_star"]["value"].as_f64().unwrap() - expected).abs() < 1e-12);
}

#[test]
fn dfs_lists_the_noiseless_mode() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["dfs"]), EXIT_OK);
    let p = payload(dir.path(), "dfs");
    assert_eq!(p["kernel_dimension"], 1);
    let v = &p["kernel_modes"][0]["coefficients"];
    assert!((v[0][0].as_f64().unwrap() + v[1][0].as_f64().unwrap()).abs() < 1e-12);
    assert!(p["protected_state"]["max_state_change"].as_f64().unwrap() < 1e-8);

    assert_eq!(run(dir.path(), &["dfs", "--set", "noise.xi=0.9"]), EXIT_OK);
    assert_eq!(payload(dir.path(), "dfs")["kernel_dimension"], 0);

    assert_eq!(run(dir.path(), &["dfs", "--set", "noise.xi=-1"]), EXIT_OK);
    let p = payload(dir.path(), "dfs");
    assert_eq!(p["kernel_dimension"], 1);
    let v = &p["kernel_modes"][0]["coefficients"];
    assert!((v[0][0].as_f64().unwrap() - v[1][0].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn execute_is_independent_of_worker_count() {
    let mut cfg = Preset::Default.config();
    cfg.ensemble.n_traj = 40;
    cfg.grid.t_final = 10.0;
    let a = cli::execute(Command::Converge, &cfg, 1).unwrap();
    let b = cli::execute(Command::Converge, &cfg, 4).unwrap();
    assert_eq!(a.payload, b.payload);
    assert_eq!(a.csv, b.csv);
}

#[test]
fn outputs_stay_inside_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested").join("out");
    assert_eq!(run(&out, &["dfs"]), EXIT_OK);
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec![std::ffi::OsString::from("nested")]);
    assert!(out.join("dfs.json").exists());
}
