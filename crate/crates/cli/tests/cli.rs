use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_guardian");

fn guardian(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env("GUARDIAN_STORAGE_KEY", "correct horse battery staple")
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

#[test]
fn bundled_scenario_writes_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = guardian(dir.path(), &["run-scenario", "transfer", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("result: pass"));
    let report = std::fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert!(report.starts_with("scenario transfer seed=8"));
    let trace = std::fs::read_to_string(dir.path().join("out/trace.tsv")).unwrap();
    assert!(trace.lines().count() > 20);
    assert!(dir.path().join("out/registry-home.json").exists());
    assert!(dir.path().join("out/registry-new-home.json").exists());
    assert!(dir.path().join("out/vendor-acme.json").exists());
}

#[test]
fn same_seed_same_files() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = guardian(dir.path(), &["run-scenario", "rotation", "--seed", "77", "--out", out]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["trace.tsv", "report.txt", "registry-home.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad-ref.scn"), "name x\nprovision SP-100-0001\nonboard SP-100-0002\n").unwrap();
    let o = guardian(dir.path(), &["run-scenario", "bad-ref.scn"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    std::fs::write(dir.path().join("unknown.scn"), "name x\nteleport SP-100-0001\n").unwrap();
    let o = guardian(dir.path(), &["run-scenario", "unknown.scn"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2: unknown directive"));

    std::fs::write(
        dir.path().join("fails.scn"),
        "name x\ntrust acme\nprovision SP-100-0001\nroster SP-100-0001\nexpect state SP-100-0001 onboarded\n",
    )
    .unwrap();
    let o = guardian(dir.path(), &["run-scenario", "fails.scn"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL L5"));

    // replaying before any chain password exists cannot be carried out
    std::fs::write(dir.path().join("internal.scn"), "name x\nprovision SP-100-0001\nreplay-transfer SP-100-0001\n").unwrap();
    let o = guardian(dir.path(), &["run-scenario", "internal.scn"]);
    assert_eq!(o.status.code(), Some(3));

    let o = guardian(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(BIN).current_dir(dir.path()).env_remove("GUARDIAN_STORAGE_KEY").args(["registry", "show"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("GUARDIAN_STORAGE_KEY"));
}

#[test]
fn operator_session() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |args: &[&str]| {
        let o = guardian(d, args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}{}", stdout(&o), stderr(&o));
        stdout(&o)
    };
    let qr1 = ok(&["provision", "TH-1-0001"]).trim().to_string();
    let qr2 = ok(&["provision", "TH-1-0002"]).trim().to_string();
    ok(&["trust"]);
    ok(&["roster", &qr1, &qr2]);
    assert!(ok(&["onboard", "--all"]).contains("TH-1-0002 onboarded"));

    ok(&["publish", "U1", "--model", "TH-1", "--version", "1.1", "--reason", "functionality", "--feed", "feed"]);
    assert!(ok(&["updates", "discover", "--feed", "feed"]).contains("TH-1-0001\tU1\t1.1"));
    let o = guardian(d, &["updates", "push", "--device", "TH-1-0001", "--update", "U1", "--feed", "feed"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("policy-denied"));
    ok(&["updates", "approve", "--device", "TH-1-0001", "--update", "U1"]);
    assert!(ok(&["updates", "push", "--device", "TH-1-0001", "--update", "U1", "--feed", "feed"]).contains("now runs 1.1"));

    assert!(ok(&["rotate", "TH-1-0002"]).contains("epoch 1"));
    let show = ok(&["registry", "show"]);
    assert!(show.contains("history        1.0 -> 1.1"), "{show}");
    assert!(show.contains("held, epoch 1"));
    let registry = std::fs::read_to_string(d.join("registry.json")).unwrap();
    assert!(registry.contains("guardian-registry/1"));

    let note = ok(&["decommission", "TH-1-0001", "--mode", "transfer"]);
    assert!(note.contains("\"serial\": \"TH-1-0001\"") && note.contains("\"mac\""), "{note}");
    assert_eq!(ok(&["transfer-info", "TH-1-0001"]), note);
    std::fs::write(d.join("note.json"), &note).unwrap();

    ok(&["reset", "TH-1-0001"]);
    let other = ["--registry", "other.json", "--name", "next-home"];
    ok(&[&other[..], &["trust"]].concat());
    assert!(ok(&[&other[..], &["transfer", "note.json", "--owner", "bob"]].concat()).contains("onboarded via transfer"));
    let o = guardian(d, &[&other[..], &["transfer", "note.json"]].concat());
    assert_eq!(o.status.code(), Some(1), "second take-over must fail");

    let o = Command::new(BIN)
        .current_dir(d)
        .env("GUARDIAN_STORAGE_KEY", "wrong")
        .args(["registry", "show"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn vectors_match_forward_hashing() {
    use sha2::{Digest as _, Sha256};
    let dir = tempfile::tempdir().unwrap();
    let seed = [7u8; 32];
    let o = guardian(dir.path(), &["vectors", "chain", &hex::encode(seed), "--t", "5"]);
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 6);
    let mut cur = seed;
    for i in (0..=5).rev() {
        assert_eq!(lines[i], format!("{i}\t{}", hex::encode(cur)));
        cur = Sha256::digest(cur).into();
    }
}
