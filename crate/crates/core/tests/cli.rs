use std::path::Path;
use std::process::{Command, Output};

use petl_sv::datagen::{make_corpus, make_trials, CorpusSpec, Domain};
use petl_sv::numcore::load_checkpoint;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_petl-sv"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn petl-sv")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_corpus(dir: &Path, name: &str, seed: u64, domain: Domain, n_spk: usize, first: usize) -> std::path::PathBuf {
    let spec = CorpusSpec {
        duration_s: (0.5, 0.5),
        first_speaker: first,
        ..CorpusSpec::new(name, seed, domain, n_spk, 3)
    };
    let (m, _) = make_corpus(&spec, None).unwrap();
    let d = dir.join(name);
    std::fs::create_dir_all(&d).unwrap();
    m.save(&d.join("manifest.jsonl")).unwrap();
    make_trials(&m, seed).unwrap().save(&d.join("trials.txt")).unwrap();
    d.join("manifest.jsonl")
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = bin(&["count-params", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_error_exits_two() {
    let o = bin(&["evaluate", "--ckpt", "/nonexistent/c.psvc", "--trials", "/nonexistent/t.txt"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn count_params_prints_table_and_json() {
    let o = bin(&["count-params", "--backbone", "base", "--petl", "bottleneck", "--dim", "128"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("PETL 4.7M, backend 2.3M"), "{text}");
    let json: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(json["trainable_petl"], 4_740_096);
}

#[test]
fn dump_presets_lists_all_three() {
    let o = bin(&["dump-presets"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["base"]["backbone"]["d_hidden"], 768);
    assert_eq!(v["large"]["backbone"]["n_layers"], 24);
    assert_eq!(v["desk"]["backbone"]["n_heads"], 4);
}

#[test]
fn synth_data_inline_writes_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = bin(&["synth-data", "--inline", "--seed", "3", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["intermediate_a", "target_b", "eval_b", "eval_a"] {
        assert!(dir.path().join(name).join("manifest.jsonl").exists());
    }
    assert!(dir.path().join("eval_b/trials.txt").exists());
}

#[test]
fn deterministic_train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_corpus(dir.path(), "b", 5, Domain::B, 4, 0);
    let m = m.to_str().unwrap();
    let run = |out: &str| {
        let o = bin(&[
            "train", "--manifest", m, "--epochs", "1", "--crop", "0.1", "--batch-size", "4", "--petl", "mam", "--dim", "8",
            "--l", "2", "--seed", "7", "--deterministic", "--out", out,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let (o1, o2) = (dir.path().join("r1"), dir.path().join("r2"));
    run(o1.to_str().unwrap());
    run(o2.to_str().unwrap());
    let log = |p: &Path| std::fs::read(p.join("metrics.jsonl")).unwrap();
    assert_eq!(log(&o1), log(&o2));
    assert!(o1.join("run.json").exists());

    let ckpt = o1.join("checkpoint.psvc");
    let trials = dir.path().join("b/trials.txt");
    let o = bin(&["evaluate", "--ckpt", ckpt.to_str().unwrap(), "--trials", trials.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let eer = v["eer"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&eer));
    assert!(v["n_target"].as_u64().unwrap() > 0);
}

#[test]
fn separate_stages_match_two_stage() {
    let dir = tempfile::tempdir().unwrap();
    let inter = small_corpus(dir.path(), "a", 8, Domain::A, 4, 0);
    let target = small_corpus(dir.path(), "b", 8, Domain::B, 3, 4);
    let (inter, target) = (inter.to_str().unwrap(), target.to_str().unwrap());
    let ts = dir.path().join("ts");
    // the run config supplies crop and batch size for both paths
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"train": {"crop_s": 0.1, "batch_size": 4}}"#).unwrap();
    let o = bin(&["two-stage", "--config", cfg.to_str().unwrap(), "--intermediate", inter, "--target", target, "--petl", "mam", "--dim", "8", "--l", "2", "--epochs", "1", "--seed", "2", "--out", ts.join("cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let s1 = dir.path().join("s1");
    let s2 = dir.path().join("s2");
    let o = bin(&["train", "--config", cfg.to_str().unwrap(), "--manifest", inter, "--petl", "full", "--epochs", "1", "--seed", "2", "--out", s1.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let init = s1.join("checkpoint.psvc");
    let o = bin(&[
        "train", "--config", cfg.to_str().unwrap(), "--manifest", target, "--petl", "mam", "--dim", "8", "--l", "2", "--epochs", "1",
        "--seed", "2", "--init-from", init.to_str().unwrap(), "--out", s2.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let a = load_checkpoint(ts.join("cfg/stage2/checkpoint.psvc")).unwrap();
    let b = load_checkpoint(s2.join("checkpoint.psvc")).unwrap();
    assert_eq!(a.groups, b.groups);
    let a1 = load_checkpoint(ts.join("cfg/stage1/checkpoint.psvc")).unwrap();
    let b1 = load_checkpoint(s1.join("checkpoint.psvc")).unwrap();
    assert_eq!(a1.groups, b1.groups);
}

#[test]
fn shipped_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk_two_stage.json");
    let cfg = petl_sv::cli::RunConfig::load(&path).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.stage2_config().petl, petl_sv::petl::PetlConfig::mam(16, 4));
    assert_eq!(cfg.train_config().epochs, 8);
}
