use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qaserve(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qaserve"));
    cmd.args(args).env_remove("QASERVE_OUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
name = "small"
seeds = [4, 9]
policies = ["quality-aware", "static-fastest"]

[workload]
kind = "poisson"
qpm = 60.0
duration_min = 5.0

[sim]
workers = 4
"#;

#[test]
fn run_writes_one_csv_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = qaserve(&["run", "-c", &cfg, "-o", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for seed in [4, 9] {
        let csv = fs::read_to_string(out.join(format!("small-quality-aware-seed{seed}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "minute,throughput_qpm,slo_violation_ratio,effective_quality,relative_quality_pct,utilization_pct"
        );
        assert!(csv.lines().last().unwrap().starts_with("all,"));
        assert!(out.join(format!("small-quality-aware-seed{seed}.pasm.txt")).exists());
        assert!(out.join(format!("small-quality-aware-seed{seed}.plans.txt")).exists());
    }
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("quality-aware")).count(), 2);
}

#[test]
fn flags_override_config_scalars() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = qaserve(&["run", "-c", &cfg, "-o", out.to_str().unwrap(), "--seed", "11", "--policy", "static-slowest", "--workers", "2"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(names.contains(&"small-static-slowest-seed11.csv".to_string()), "{names:?}");
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 1);
}

#[test]
fn env_var_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("output_dir = \"from-config\"\n{SMALL}"));
    let env_out = dir.path().join("from-env");
    let o = qaserve(&["run", "-c", &cfg, "--seed", "1"], &[("QASERVE_OUT_DIR", &env_out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_out.join("small-quality-aware-seed1.csv").exists());
    assert!(!dir.path().join("from-config").exists());
    // without the variable the config's directory, relative to the config file, is used
    let o = qaserve(&["run", "-c", &cfg, "--seed", "1"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("from-config/small-quality-aware-seed1.csv").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(qaserve(&["run", "-c", &cfg, "-o", a.to_str().unwrap()], &[]).status.success());
    assert!(qaserve(&["run", "-c", &cfg, "-o", b.to_str().unwrap()], &[]).status.success());
    for seed in [4, 9] {
        let name = format!("small-quality-aware-seed{seed}.csv");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn missing_trace_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[workload]\nkind = \"trace\"\npath = \"nope.trace\"\n");
    let o = qaserve(&["run", "-c", &cfg, "-o", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.trace"), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[workload]\nkind = \"poisson\"\nqpm = \"fast\"\n");
    let o = qaserve(&["run", "-c", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = qaserve(&["run", "-c", dir.path().join("absent.toml").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), &SMALL.replace("workers = 4", "workers = 0"));
    let o = qaserve(&["run", "-c", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = qaserve(&["run", "-c", &cfg, "-o", blocker.join("out").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn compare_shares_arrivals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = qaserve(&["compare", "-c", &cfg, "-o", out.to_str().unwrap(), "--seed", "4"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let sum = text.lines().next().unwrap().rsplit(' ').next().unwrap().to_string();
    assert_eq!(sum.len(), 64, "{text}");
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("quality-aware") || l.starts_with("static-fastest")).collect();
    assert_eq!(rows.len(), 2, "{text}");
    for r in rows {
        assert!(r.contains(&sum[..12]) && r.ends_with("match"), "{r}");
    }
    assert!(out.join("small-quality-aware-seed4.csv").exists());
    assert!(out.join("small-static-fastest-seed4.csv").exists());
}

#[test]
fn compare_rejects_single_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = qaserve(&["compare", "-c", &cfg, "--policies", "quality-aware"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least two"));
}

#[test]
fn validate_filters_suites() {
    let o = qaserve(&["validate", "--suites", "oda,eq3"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("oda  pass 11000/11000"), "{text}");
    assert!(text.contains("eq3  pass 10000/10000"), "{text}");
    assert!(!text.contains("ilp"));
    let o = qaserve(&["validate", "--suites", "bogus"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generated_trace_feeds_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("burst.trace");
    let o = qaserve(
        &["gen-trace", "bursty", "--low-qpm", "20", "--high-qpm", "80", "--period-min", "2", "--duty", "0.5", "--duration-min", "4", "--seed", "3", "-o", trace.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&trace).unwrap();
    assert!(text.contains("# duration_s=240"));
    let cfg = write_config(dir.path(), "name = \"replay\"\n[workload]\nkind = \"trace\"\npath = \"burst.trace\"\n[sim]\nworkers = 2\n");
    let o = qaserve(&["run", "-c", &cfg, "-o", dir.path().join("out").to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/replay-quality-aware-seed0.csv")).unwrap();
    // four minutes of rows plus any drain, then the aggregate
    assert!(csv.lines().count() >= 6, "{csv}");
}
