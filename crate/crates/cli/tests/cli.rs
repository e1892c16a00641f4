use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_vqarank");

const SMALL: &str = r#"
seed = 3

[world]
n_train = 120
n_val = 40
n_test = 40

[image_head]
iterations = 150
log_every = 50

[caption_head]
iterations = 150
log_every = 50

[bank]
num_images = 10

[ranker]
iterations = 120
eval_every = 40

[select]
n_samples = 200
top_k = 5
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("VQARANK_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn kv(path: &Path) -> BTreeMap<String, String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

/// Every subcommand on a small world, in `dir` with `config.toml`.
fn small_pipeline(dir: &Path) {
    std::fs::write(dir.join("config.toml"), SMALL).unwrap();
    let c = ["--config", "config.toml", "--data-dir", "data"];
    let with = |extra: &[&str]| -> Vec<String> { extra.iter().chain(c.iter()).map(|s| s.to_string()).collect() };
    let go = |extra: &[&str]| {
        let args = with(extra);
        ok(dir, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    go(&["gen-synth"]);
    go(&["train-vqa"]);
    go(&["train-vqacap"]);
    go(&["extract-grounding"]);
    go(&["train-ranker", "--mode", "agnostic"]);
    go(&["train-ranker", "--mode", "score"]);
    go(&["fit-alphabeta"]);
    go(&["train-ranker", "--mode", "rep"]);
    go(&["train-ranker", "--mode", "rep", "--fusion-mode", "caption_only"]);
    for r in [
        "ranker_agnostic",
        "ranker_score_fusion",
        "ranker_rep_fusion_full",
        "ranker_rep_fusion_caption_only",
    ] {
        go(&["evaluate", "--ranker", &format!("data/{r}.ckpt")]);
    }
    go(&["evaluate", "--ranker", "oracle", "--split", "val"]);
    go(&["select-qa", "--ranker", "data/ranker_rep_fusion_full.ckpt", "--image", "img160"]);
    go(&["gradcheck", "--arch", "vqa_head", "--samples", "20"]);
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--help"]);
    for cmd in [
        "gen-synth",
        "train-vqa",
        "train-vqacap",
        "extract-grounding",
        "train-ranker",
        "fit-alphabeta",
        "evaluate",
        "select-qa",
        "gradcheck",
    ] {
        assert!(out.contains(cmd), "{cmd} missing from help:\n{out}");
    }
    for cmd in ["gen-synth", "train-ranker", "select-qa"] {
        let help = ok(dir.path(), &[cmd, "--help"]);
        assert!(help.contains("--seed") && help.contains("--config"), "{cmd}: {help}");
    }
}

#[test]
fn unknown_command_or_flag_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["gen-synth", "--bogus", "1"], &[]] {
        let out = run(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(stderr(&out).contains("Usage"), "{args:?}: {}", stderr(&out));
    }
    let out = run(dir.path(), &["train-ranker", "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("sideways") && err.contains("--help"), "{err}");
}

#[test]
fn missing_files_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train-vqa", "--data-dir", "nowhere"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nowhere"), "{}", stderr(&out));

    let out = run(
        dir.path(),
        &["gen-synth", "--n-train", "20", "--n-val", "5", "--n-test", "5", "--data-dir", "d"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(dir.path(), &["evaluate", "--ranker", "d/absent.ckpt", "--data-dir", "d"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("absent.ckpt"), "{}", stderr(&out));
    let out = run(dir.path(), &["extract-grounding", "--data-dir", "d"]);
    assert!(stderr(&out).contains("vqa_image.ckpt"), "{}", stderr(&out));

    let out = run(dir.path(), &["gen-synth", "--config", "missing.toml"]);
    assert!(stderr(&out).contains("missing.toml"), "{}", stderr(&out));
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[world]\nn_trian = 5\n").unwrap();
    let out = run(dir.path(), &["gen-synth", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("c.toml") && err.contains("n_trian"), "{err}");
}

#[test]
fn data_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["gen-synth", "--n-train", "10", "--n-val", "4", "--n-test", "4"])
        .current_dir(dir.path())
        .env("VQARANK_DATA_DIR", "from_env")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("from_env/manifest.tsv").is_file());
    assert!(dir.path().join("from_env/run_gen-synth.json").is_file());
    assert!(!dir.path().join("data").exists());
}

#[test]
fn flags_override_config_and_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "seed = 9\n[world]\nn_train = 30\nn_val = 6\nn_test = 6\n",
    )
    .unwrap();
    ok(
        dir.path(),
        &[
            "gen-synth",
            "--config",
            "c.toml",
            "--n-train",
            "12",
            "--seed",
            "4",
            "--data-dir",
            "d",
        ],
    );
    let rec: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("d/run_gen-synth.json")).unwrap()).unwrap();
    assert_eq!(rec["seed"], 4);
    assert_eq!(rec["config"]["world"]["n_train"], 12);
    assert_eq!(rec["config"]["world"]["n_val"], 6);
    assert_eq!(rec["command"], "gen-synth");
    assert!(rec["versions"]["vqarank-cli"].is_string());
}

#[test]
fn oracle_scores_are_perfect() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["gen-synth", "--n-train", "20", "--n-val", "8", "--n-test", "12", "--data-dir", "d"],
    );
    ok(dir.path(), &["evaluate", "--ranker", "oracle", "--data-dir", "d"]);
    let m = kv(&dir.path().join("d/metrics_oracle_test.txt"));
    for dir_ in ["caption", "image"] {
        for k in [1, 5, 10] {
            assert_eq!(m[&format!("{dir_}_recall@{k}")], "1.000000");
        }
    }
    assert_eq!(m["n_images"], "12");
}

#[test]
fn every_subcommand_runs_and_reruns_byte_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_pipeline(a.path());
    small_pipeline(b.path());

    let data = a.path().join("data");
    for f in [
        "manifest.tsv",
        "vqa_image.ckpt",
        "vqa_caption_trace.csv",
        "u_images.mmft",
        "grounding.json",
        "ranker_score_fusion.ckpt",
        "alphabeta.json",
        "metrics_ranker_rep_fusion_full_test.txt",
        "metrics_oracle_val.txt",
        "select_img160.csv",
        "gradcheck.txt",
        "run_select-qa.json",
    ] {
        assert!(data.join(f).is_file(), "{f} missing");
    }
    let csv = std::fs::read_to_string(data.join("select_img160.csv")).unwrap();
    assert!(csv.starts_with("rank,qa_index,question_id,source_image_id,answer,mi_nats\n"));
    assert_eq!(csv.lines().count(), 1 + 30);
    assert!(csv
        .lines()
        .skip(1)
        .all(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap() >= 0.0));

    let sa = snapshot(&data);
    let sb = snapshot(&b.path().join("data"));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (name, bytes) in &sa {
        assert!(bytes == &sb[name], "{name} differs between identical runs");
    }
}

#[test]
fn tampered_grounding_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let u = dir.path().join("data/u_captions.mmft");
    let other = std::fs::read(dir.path().join("data/u_images.mmft")).unwrap();
    std::fs::write(&u, other).unwrap();
    let out = run(
        dir.path(),
        &[
            "evaluate",
            "--ranker",
            "data/ranker_rep_fusion_full.ckpt",
            "--config",
            "config.toml",
            "--data-dir",
            "data",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("u_captions.mmft"), "{}", stderr(&out));
}

#[test]
fn desk_scale_pipeline_finishes_in_time() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    for args in [
        &["gen-synth"][..],
        &["train-vqa"],
        &["train-vqacap"],
        &["extract-grounding"],
        &["train-ranker", "--mode", "agnostic"],
        &["train-ranker", "--mode", "rep"],
        &["evaluate", "--ranker", "data/ranker_rep_fusion_full.ckpt"],
        &["evaluate", "--ranker", "data/ranker_agnostic.ckpt"],
    ] {
        ok(dir.path(), args);
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    let full = kv(&dir.path().join("data/metrics_ranker_rep_fusion_full_test.txt"));
    let agn = kv(&dir.path().join("data/metrics_ranker_agnostic_test.txt"));
    let r1 = |m: &BTreeMap<String, String>| m["caption_recall@1"].parse::<f64>().unwrap() + m["image_recall@1"].parse::<f64>().unwrap();
    assert!(r1(&full) > r1(&agn), "rep fusion {full:?} not above agnostic {agn:?}");
}
