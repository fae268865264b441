use std::path::Path;
use std::process::{Command, Output};

fn willow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_willow")).args(args).env_remove("WILLOW_THREADS").output().expect("spawn willow")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn fast_verify_on_reference_model_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.toml");
    let o = willow(&["verify", "--suite", "fast", "--model", "ref2type", "--seed", "7", "--out", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("# willow verification report"));
    assert!(text.contains("seed = 7"));
    let table = stdout(&o);
    assert!(table.contains("many-to-one") && table.contains("skipped"));
    let parsed: toml::Table = toml::from_str(&text).unwrap();
    assert_eq!(parsed["check"].as_array().unwrap().len(), willow::verify::CHECKS.len());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = willow(&["particles", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = willow(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oversized_epsilon_names_the_precondition() {
    let o = willow(&["particles", "--model", "ref2type", "--epsilon", "3", "--reps", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("simulate_particles"), "{}", stderr(&o));
}

#[test]
fn model_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "K = 2\nQ = [[-1.0, 1.0], [1.0, -1.0]]\nbeta = [0.2, 0.8]\n").unwrap();
    let o = willow(&["eigen", "--model", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("alpha"));
    let o = willow(&["eigen", "--model", "/nonexistent/model.toml"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn short_extinction_grid_exits_with_budget_code() {
    let o = willow(&["decompose-pnu", "--model", "critical2type", "--field-horizon", "0.1", "--reps", "1", "--budget", "1"]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("too short"));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_willow")).args(["eigen"]).env("WILLOW_THREADS", "many").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn csv_output_is_bitwise_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let args = ["--threads", threads, "particles", "--model", "ref2type", "--epsilon", "0.05", "--reps", "8", "--seed", "3", "--out", out.to_str().unwrap()];
        assert_eq!(willow(&args).status.code(), Some(0));
        std::fs::read(out).unwrap()
    };
    let a = run("1", "a.csv");
    let b = run("3", "b.csv");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# willow particles\n# model = ref2type\n"));
    assert!(text.contains("# seed = 3\n") && text.contains("# epsilon = 0.05\n"));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "rep,t,mass_1,mass_2");
    assert_eq!(rows.len(), 1 + 8 * 21);
    assert_eq!(rows[1], "0,0,1,0");
}

#[test]
fn every_sampler_subcommand_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["solve-v", "--model", "ref2type", "--T", "5", "--grid", "10"],
        &["homogenize", "--model", "ref2type"],
        &["spine", "--law", "h", "--h", "3", "--reps", "3"],
        &["spine", "--law", "qprocess", "--T", "3", "--reps", "3"],
        &["spine", "--law", "bismut", "--T", "1.5", "--reps", "3"],
        &["williams", "--h", "2", "--reps", "3", "--epsilon", "0.1", "--grid-steps", "4"],
        &["qprocess", "--T", "1", "--reps", "3", "--epsilon", "0.1", "--grid-steps", "4"],
        &["decompose-pnu", "--nu", "0.5,0.5", "--reps", "3", "--epsilon", "0.1", "--T", "2", "--grid-steps", "4"],
        &["backward", "--h", "10", "--reps", "2", "--epsilon", "0.1"],
    ];
    for (i, args) in cases.iter().enumerate() {
        let out = dir.path().join(format!("{i}.csv"));
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--out", out.to_str().unwrap()]);
        let o = willow(&full);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("# willow "), "{args:?}");
    }
}

#[test]
fn williams_skeleton_and_lineage_exports() {
    let dir = tempfile::tempdir().unwrap();
    let sk = dir.path().join("skeleton.txt");
    let o = willow(&["williams", "--h", "2", "--reps", "2", "--epsilon", "0.1", "--skeleton", sk.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&sk).unwrap();
    assert!(text.contains("[rep 0]") && text.contains("[rep 1]"));
    let lin = dir.path().join("lineage.csv");
    let o = willow(&["particles", "--model", "ref1", "--reps", "4", "--epsilon", "0.1", "--T", "20", "--lineage", lin.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(std::fs::read_to_string(&lin).unwrap().contains("rep,t,type"));
}

#[test]
fn model_file_and_builtin_agree() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.toml");
    let builtin = Path::new(env!("CARGO_MANIFEST_DIR")).join("models/ref2type.toml");
    std::fs::copy(builtin, &path).unwrap();
    let a = stdout(&willow(&["eigen", "--model", "ref2type"]));
    let b = stdout(&willow(&["eigen", "--model", path.to_str().unwrap()]));
    assert_eq!(a, b);
}
