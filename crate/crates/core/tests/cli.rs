use std::path::Path;
use std::process::{Command, Output};

fn boltzlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boltzlab"))
        .args(args)
        .env_remove("BOLTZLAB_JOBS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn out_dir(tmp: &Path, name: &str) -> String {
    tmp.join(name).to_string_lossy().into_owned()
}

const KINETIC: [&str; 8] = ["--d", "2", "--gamma", "-2", "--s", "0.3", "--preset", "fast"];

#[test]
fn missing_s_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let o = boltzlab(&["dissipate", "--d", "2", "--gamma", "-2", "--out", &out_dir(tmp.path(), "a")]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("kinetic.s"));
}

#[test]
fn config_file_is_merged_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        "preset = \"fast\"\n[kinetic]\nd = 2\ngamma = -1.0\ns = 0.9\n[quadrature]\nvelocity_nodes = 24\n[density]\nkind = \"maxwellian\"\n",
    )
    .unwrap();
    let dir = out_dir(tmp.path(), "b");
    let o = boltzlab(&["norms", "--config", cfg.to_str().unwrap(), "--s", "0.4", "--out", &dir]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resolved: toml::Table = std::fs::read_to_string(Path::new(&dir).join("config.toml")).unwrap().parse().unwrap();
    assert_eq!(resolved["kinetic"]["s"].as_float(), Some(0.4));
    assert_eq!(resolved["kinetic"]["gamma"].as_float(), Some(-1.0));
    assert_eq!(resolved["quadrature"]["velocity_nodes"].as_integer(), Some(24));
    // the fast preset fills in what the file leaves out
    assert!(resolved["quadrature"].get("radial_order").is_some());
    let csv = std::fs::read_to_string(Path::new(&dir).join("norms.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().contains("e-1"));
}

#[test]
fn unknown_keys_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[kinetic]\nd = 2\ngamma = -1\ns = 0.5\n[quadrature]\nvelocity_nodez = 3\n").unwrap();
    let o = boltzlab(&["norms", "--config", cfg.to_str().unwrap(), "--out", &out_dir(tmp.path(), "c")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn monte_carlo_dissipation_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, jobs) in ["1", "2"].iter().enumerate() {
        let dir = out_dir(tmp.path(), &format!("mc{i}"));
        let mut args = KINETIC.to_vec();
        args.extend(["--method", "mc", "--samples", "2e5", "--seed", "7", "--jobs", jobs, "--out", &dir]);
        let mut full = vec!["dissipate"];
        full.extend(args);
        let o = boltzlab(&full);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read_to_string(Path::new(&dir).join("dissipation.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(outputs[0].contains("montecarlo"));
}

#[test]
fn cone_special_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(tmp.path(), "cone");
    let mut args = vec!["cone"];
    args.extend(KINETIC);
    args.extend(["--family", "maxwellian", "--v", "0,0", "--out", &dir]);
    assert_eq!(code(&boltzlab(&args)), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(&dir).join("cone.json")).unwrap()).unwrap();
    let measure = report["measure_hat"].as_f64().unwrap();
    assert!((measure - 2.0 * std::f64::consts::PI).abs() < 0.05, "measure {measure}");

    let zdir = out_dir(tmp.path(), "zero");
    let mut args = vec!["cone"];
    args.extend(KINETIC);
    args.extend(["--family", "zero", "--v", "1,0", "--out", &zdir]);
    assert_eq!(code(&boltzlab(&args)), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(&zdir).join("cone.json")).unwrap()).unwrap();
    assert_eq!(report["measure_hat"].as_f64(), Some(0.0));

    for bad in ["0,0,0", "nan,0", "x,1"] {
        let mut args = vec!["cone"];
        args.extend(KINETIC);
        args.extend(["--v", bad, "--out", &zdir]);
        assert_eq!(code(&boltzlab(&args)), 1, "v = {bad}");
    }
}

#[test]
fn solve_writes_trajectory_and_rejects_zero_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(tmp.path(), "solve");
    let mut args = vec!["solve"];
    args.extend(KINETIC);
    args.extend(["--particles", "2000", "--t-end", "0.5", "--snapshots", "2", "--out", &dir]);
    let o = boltzlab(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["trajectory.csv", "trajectory.json", "velocities.csv", "config.toml"] {
        assert!(Path::new(&dir).join(name).exists(), "{name}");
    }
    let traj = std::fs::read_to_string(Path::new(&dir).join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 4);

    let mut args = vec!["solve"];
    args.extend(KINETIC);
    args.extend(["--snapshots", "0", "--out", &dir]);
    assert_eq!(code(&boltzlab(&args)), 1);
}

#[test]
fn verify_predicate_table_and_empty_family() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(tmp.path(), "pred");
    let o = boltzlab(&["verify", "--predicate-only", "--d", "3", "--pairs=-3:0.3,-3:0.6", "--out", &dir]);
    assert_eq!(code(&o), 0);
    let table = std::fs::read_to_string(Path::new(&dir).join("predicate.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert!(rows[0].contains("false") && rows[0].ends_with("true"));
    assert!(rows[1].contains("true") && rows[1].ends_with("false"));

    let cfg = tmp.path().join("empty.toml");
    std::fs::write(&cfg, "[kinetic]\nd = 2\ngamma = -2\ns = 0.3\n[verify]\nfamily = \"custom\"\n").unwrap();
    let o = boltzlab(&["verify", "--config", cfg.to_str().unwrap(), "--out", &dir]);
    assert_eq!(code(&o), 1);
}

#[test]
fn seminorm_claim_is_refused_for_hard_potentials() {
    let tmp = tempfile::tempdir().unwrap();
    let o = boltzlab(&[
        "verify", "--d", "2", "--gamma", "0.5", "--s", "0.3", "--preset", "fast", "--family", "bimaxwellian", "--claim",
        "prop12", "--out", &out_dir(tmp.path(), "h"),
    ]);
    assert_ne!(code(&o), 0);
}

#[test]
fn help_and_bad_usage_exit_codes() {
    assert_eq!(code(&boltzlab(&["--help"])), 0);
    assert_eq!(code(&boltzlab(&["frobnicate"])), 1);
    assert_eq!(code(&boltzlab(&["dissipate", "--method"])), 1);
}
