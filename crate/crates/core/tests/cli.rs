use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flagdoe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flagdoe"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SIM: &str = r#"
[benchmark]
name = "fdct"
platform = "sim-m3"

[factors]
flags = ["f01", "f02", "f03", "f04", "f05", "f06", "f07", "f08", "f09", "f10", "f11", "f12"]
resolution = "IV"
max_runs = 32

[backend]
kind = "simulated"
base_duration = 0.02

[backend.model]
base_power = 0.8
noise = 0.01
effects = { f03 = 0.02, f08 = -0.03 }

[campaign]
replicates = 4
seed = 3
"#;

#[test]
fn design_prints_half_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let o = flagdoe(dir.path(), &["design", "--factors", "3", "--resolution", "III", "--max-runs", "4", "--out", "d"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("d/design.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows, ["A,B,C", "-1,-1,+1", "+1,-1,-1", "-1,+1,-1", "+1,+1,+1"]);
    assert!(csv.contains("# generator: C = AB"));
    let aliases = fs::read_to_string(dir.path().join("d/aliases.txt")).unwrap();
    for pair in ["A <-> BC", "B <-> AC", "C <-> AB"] {
        assert!(aliases.contains(pair), "{aliases}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("d/manifest-design.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "design");
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["config_digest"].as_str().unwrap().len() == 64);
}

#[test]
fn simulate_then_analyze_finds_planted_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sim.toml"), SIM).unwrap();
    let o = flagdoe(dir.path(), &["simulate", "--config", "sim.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sig = fs::read_to_string(dir.path().join("out/significant_flags.txt")).unwrap();
    assert_eq!(sig.lines().collect::<Vec<_>>(), ["f08", "f03"]);
    let effects = fs::read_to_string(dir.path().join("out/effects.csv")).unwrap();
    assert!(effects.starts_with("term,effect,percent_effect,u,p,significant"));
    assert_eq!(effects.lines().count(), 13);

    // analyze re-derives the same result from the store alone
    fs::remove_file(dir.path().join("out/significant_flags.txt")).unwrap();
    let o = flagdoe(dir.path(), &["analyze", "--config", "sim.toml", "--out", "out", "--set", "compiler.kind=\"simulated\""]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(dir.path().join("out/significant_flags.txt")).unwrap(), sig);

    let o = flagdoe(
        dir.path(),
        &["report", "--config", "sim.toml", "--out", "out", "--set", "compiler.kind=\"simulated\""],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let top = fs::read_to_string(dir.path().join("out/report/top_flags.txt")).unwrap();
    assert!(top.contains("fdct"), "{top}");
    let legend = fs::read_to_string(dir.path().join("out/report/top_flags_legend.txt")).unwrap();
    // equal counts, so letters follow flag names
    let rows: Vec<Vec<&str>> = legend.lines().skip(3).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows, [["A", "1", "f03"], ["B", "1", "f08"]], "{legend}");
}

#[test]
fn rerunning_a_complete_campaign_measures_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("[compiler]\nkind = \"simulated\"\n{SIM}");
    fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let first = flagdoe(dir.path(), &["run", "--config", "c.toml", "--out", "o"]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let before = fs::read(dir.path().join("o/results.jsonl")).unwrap();
    let second = flagdoe(dir.path(), &["run", "--config", "c.toml", "--out", "o"]);
    assert_eq!(second.status.code(), Some(0));
    assert!(stdout(&second).contains("compilations: 0 (0 cached); measurements: 0"), "{}", stdout(&second));
    assert_eq!(fs::read(dir.path().join("o/results.jsonl")).unwrap(), before);
}

#[test]
fn paused_campaign_exits_2_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("[compiler]\nkind = \"simulated\"\n{SIM}");
    fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let o = flagdoe(dir.path(), &["run", "--config", "c.toml", "--out", "o", "--stop-after", "10"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(dir.path().join("o/manifest-run.json").exists());
    let o = flagdoe(dir.path(), &["run", "--config", "c.toml", "--out", "o"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("118 new, 10 already stored"), "{}", stdout(&o));
}

#[test]
fn malformed_config_names_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[campaign]\nreplicates = 4\nreplicatse = 2\n").unwrap();
    let o = flagdoe(dir.path(), &["run", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("replicatse") && err.contains("line 3"), "{err}");

    let o = flagdoe(dir.path(), &["design", "--set", "factors.resolution=\"VI\""]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("factors.resolution"), "{}", stderr(&o));

    let o = flagdoe(dir.path(), &["design", "--factors", "20", "--resolution", "IV", "--max-runs", "16"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("64"), "{}", stderr(&o));
}

#[test]
fn unreachable_device_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[compiler]
kind = "simulated"
[factors]
flags = ["a", "b", "c"]
resolution = "III"
max_runs = 4
[backend]
kind = "external"
command = "echo energy_j=1; echo time_s=1"
probe = "test -e device-online"
"#;
    fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let o = flagdoe(dir.path(), &["run", "--config", "c.toml", "--out", "o", "--set", "campaign.replicates=2"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    fs::write(dir.path().join("device-online"), "").unwrap();
    let o = flagdoe(dir.path(), &["run", "--config", "c.toml", "--out", "o", "--set", "campaign.replicates=2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("8 new"), "{}", stdout(&o));
}

/// A shell "compiler" that emits a runnable script, timed on the wall clock.
#[test]
fn shell_compiler_and_wall_clock_backend() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("prog.sh"), "i=0\nwhile [ $i -lt 200 ]; do i=$((i+1)); done\n").unwrap();
    let cfg = r#"
[compiler]
kind = "command"
template = "{ echo '#!/bin/sh'; echo '# {flags}'; cat {src}; } > {out} && chmod +x {out}"

[benchmark]
name = "loop"
sources = ["prog.sh"]

[factors]
flags = ["a", "b", "c"]
levels = ["O0", "O2"]
exhaustive = ["a", "b"]

[backend]
kind = "wall-clock"
nominal_power_w = 2.0

[campaign]
replicates = 2
jobs = 2
"#;
    fs::write(dir.path().join("c.toml"), cfg).unwrap();
    for sub in ["sweep", "oneshot", "exhaustive"] {
        let o = flagdoe(dir.path(), &[sub, "--config", "c.toml", "--out", "o"]);
        assert_eq!(o.status.code(), Some(0), "{sub}: {}", stderr(&o));
        assert!(dir.path().join(format!("o/{sub}.txt")).exists());
    }
    let sweep = fs::read_to_string(dir.path().join("o/sweep.csv")).unwrap();
    assert!(sweep.lines().nth(1).unwrap().starts_with("O0,"), "{sweep}");
    let ex = fs::read_to_string(dir.path().join("o/exhaustive.txt")).unwrap();
    assert_eq!(ex.lines().filter(|l| l.starts_with('✓') || l.starts_with('×')).count(), 4, "{ex}");
    let built = fs::read_dir(dir.path().join("o/cache")).unwrap().count();
    // sweep: O0, O2; oneshot: O1 base + 2 per flag; exhaustive: 4 combinations (its base is the oneshot base)
    assert_eq!(built, 2 + 7 + 4);
}
