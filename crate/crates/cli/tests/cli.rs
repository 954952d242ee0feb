use std::path::PathBuf;
use std::process::{Command, Output};

fn redistill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redistill"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn synth_prints_the_plan_and_verifies() {
    let o = redistill(&[
        "synth",
        "--mesh",
        "{x:4, y:2, z:4}",
        "--from",
        "[1{y,x}8, 8, 8, 4]",
        "--to",
        "[8, 4{y}8, 2{x}8, 4]",
        "--verify",
    ]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}");
    assert!(out.contains("cost 384  height 256  bound 256  permute"), "{out}");
    assert!(out.contains("bytes per device 1536"), "{out}");
    assert!(out.contains("verification: ok"), "{out}");
}

#[test]
fn synth_json_reports_costs() {
    let o = redistill(&[
        "synth",
        "--mesh",
        "{x:4, y:2, z:4}",
        "--from",
        "[1{y,x}8, 8, 8, 4]",
        "--to",
        "[8, 4{y}8, 2{x}8, 4]",
        "--no-over-partition",
        "--json",
        "--verify",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["plan"]["cost"]["total"], 512);
    assert_eq!(v["verification"]["correct"], true);
    assert!(v["naive_cost"].as_u64().unwrap() >= 512);
}

#[test]
fn mismatched_global_shapes_exit_with_two() {
    let o = redistill(&["synth", "--mesh", "{x:4}", "--from", "[1{x}4, 8]", "--to", "[8, 1{x}4]"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[1{x}4, 8]") && err.contains("[8, 1{x}4]"), "{err}");

    let o = redistill(&["synth", "--mesh", "{x:4", "--from", "[4]", "--to", "[4]"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_is_deterministic_and_bench_reads_it() {
    let a = redistill(&["gen", "--seed", "3", "--count", "25"]);
    let b = redistill(&["gen", "--seed", "3", "--count", "25"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&a).lines().count(), 25);
    assert_ne!(redistill(&["gen", "--seed", "4", "--count", "25"]).stdout, a.stdout);

    let path: PathBuf = [env!("CARGO_TARGET_TMPDIR"), "suite-3.jsonl"].iter().collect();
    std::fs::write(&path, &a.stdout).unwrap();
    let o = redistill(&["bench", path.to_str().unwrap(), "--verify"]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}");
    assert_eq!(out.matches("verified").count(), 25, "{out}");
    assert!(out.contains("problems 25  failed 0"), "{out}");

    let o = redistill(&["bench", path.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    for line in stdout(&o).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["cost"].as_u64().unwrap() <= v["naive_cost"].as_u64().unwrap());
    }
}

#[test]
fn bench_reports_bad_lines() {
    let path: PathBuf = [env!("CARGO_TARGET_TMPDIR"), "bad.jsonl"].iter().collect();
    std::fs::write(
        &path,
        "{\"mesh\":\"{x:2}\",\"from\":\"[1{x}2]\",\"to\":\"[2]\"}\n\nnot json\n",
    )
    .unwrap();
    let o = redistill(&["bench", path.to_str().unwrap()]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(1), "{out}");
    assert!(out.contains("    3 error:"), "{out}");
    assert!(out.contains("problems 2  failed 1"), "{out}");
}
