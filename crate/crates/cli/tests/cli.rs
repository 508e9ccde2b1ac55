use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_classleak"))
}

const SMALL_WORLD: &str = r#"{"n_member_classes": 8, "n_nonmember_classes": 8, "images_per_class": 6}"#;

fn write_config(dir: &Path, world: &str, extra: &str) -> std::path::PathBuf {
    let text = format!(
        r#"{{"world": {world}, "attacks": [{{"family": "class_summary", "surface": "feature"}}, {{"family": "class_summary", "surface": "recognition"}}]{extra}}}"#
    );
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn oracle() -> String {
    format!(r#"{{"kind": "oracle", "config": {SMALL_WORLD}}}"#)
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![("summary.csv".to_string(), fs::read(dir.join("summary.csv")).unwrap())];
    let mut names: Vec<_> = fs::read_dir(dir.join("roc")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in names {
        out.push((n.to_string_lossy().into_owned(), fs::read(dir.join("roc").join(&n)).unwrap()));
    }
    out
}

#[test]
fn run_writes_summary_roc_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &oracle(), r#", "defenses": [{"kind": "round", "sig_figs": 1}], "plots": true"#);
    let out = tmp.path().join("out");
    let st = bin().args(["run", "--config"]).arg(&cfg).arg("--out-dir").arg(&out).args(["--jobs", "2"]).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next().unwrap(), "attack,surface,mode,defense,param,fold,auc,precision,recall,f1,seed");
    assert_eq!(lines.count(), 4);
    assert!(out.join("defenses.csv").exists());
    assert!(out.join("manifest.json").exists());
    assert_eq!(fs::read_dir(out.join("plots")).unwrap().count(), 4);
}

#[test]
fn reruns_are_byte_identical_and_report_rerenders() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &oracle(), "");
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for d in [&a, &b] {
        let st = bin().args(["run", "--config"]).arg(&cfg).arg("--out-dir").arg(d).status().unwrap();
        assert_eq!(st.code(), Some(0));
    }
    assert_eq!(read_tree(&a), read_tree(&b));
    let st = bin().args(["report", "--manifest"]).arg(&a).arg("--out-dir").arg(&c).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert_eq!(read_tree(&a), read_tree(&c));
}

#[test]
fn exported_world_reproduces_the_in_memory_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &oracle(), r#", "evaluation": {"seeds": [3]}"#);
    let st = bin().args(["gen-world", "--config"]).arg(&cfg).arg("--out-dir").arg(tmp.path()).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let mem = tmp.path().join("mem");
    let st = bin().args(["run", "--config"]).arg(&cfg).arg("--out-dir").arg(&mem).status().unwrap();
    assert_eq!(st.code(), Some(0));

    let sub = tmp.path().join("sub");
    fs::create_dir(&sub).unwrap();
    let cfg_file = write_config(&sub, r#"{"kind": "file", "path": "../world.csv"}"#, r#", "evaluation": {"seeds": [3]}"#);
    let file = tmp.path().join("file");
    let st = bin().args(["run", "--config"]).arg(&cfg_file).arg("--out-dir").arg(&file).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert_eq!(read_tree(&mem), read_tree(&file));
}

#[test]
fn exit_codes_separate_config_and_stage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"world": {"kind": "oracle"}, "attacks": [], "evaluation": {"seeds": [0]}}"#).unwrap();
    let out = bin().args(["run", "--config"]).arg(&bad).arg("--out-dir").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("attacks"));

    let missing = write_config(tmp.path(), r#"{"kind": "file", "path": "nowhere.csv"}"#, "");
    let st = bin().args(["run", "--config"]).arg(&missing).arg("--out-dir").arg(tmp.path().join("o")).status().unwrap();
    assert_eq!(st.code(), Some(2));

    let st = bin().args(["run", "--config"]).arg(tmp.path().join("absent.json")).arg("--out-dir").arg(tmp.path()).status().unwrap();
    assert_eq!(st.code(), Some(1));
}

#[test]
fn seed_flag_overrides_the_seed_list() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &oracle(), r#", "evaluation": {"seeds": [1, 2, 3]}"#);
    let out = tmp.path().join("o");
    let st = bin().args(["run", "--seed", "9", "--config"]).arg(&cfg).arg("--out-dir").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().skip(1).all(|l| l.ends_with(",9")));
}
