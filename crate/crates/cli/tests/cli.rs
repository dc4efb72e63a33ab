use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn warmup(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_warmup"))
        .args(args)
        .current_dir(dir)
        .env_remove("WARMUP_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn fixture(dir: &Path) {
    fs::write(
        dir.join("spec.json"),
        r#"{"num_images": 200, "tokens_per_image": 16, "dim": 8, "clusters": 3,
            "fg_fraction": 0.2, "fg_fraction_max": 0.8}"#,
    )
    .unwrap();
    ok(&warmup(
        &[
            "synth",
            "--spec",
            "spec.json",
            "--seed",
            "7",
            "--out",
            "toy.tokemb",
        ],
        dir,
    ));
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture(dir);
    assert!(dir.join("toy.truth.jsonl").exists());

    fs::write(dir.join("cfg.json"), r#"{"T_w": 100, "K": 3, "seed": 1}"#).unwrap();
    let out = ok(&warmup(
        &[
            "score",
            "--input",
            "toy.tokemb",
            "--out",
            "out",
            "--config",
            "cfg.json",
            "--dump-masks",
        ],
        dir,
    ));
    assert!(out.contains("images: 200"));
    assert!(out.contains("timings:"));
    for f in ["scores.jsonl", "protos.bin", "summary.json", "masks.jsonl"] {
        assert!(dir.join("out").join(f).exists(), "{f}");
    }
    let scores = fs::read_to_string(dir.join("out/scores.jsonl")).unwrap();
    assert_eq!(scores.lines().count(), 200);
    let first: serde_json::Value = serde_json::from_str(scores.lines().next().unwrap()).unwrap();
    for key in [
        "image_id",
        "r_bg",
        "omega_dom",
        "omega_prot",
        "cluster_id",
        "omega",
        "omega_norm",
    ] {
        assert!(first.get(key).is_some(), "{key}");
    }

    let out = ok(&warmup(
        &[
            "simulate",
            "--scores",
            "out/scores.jsonl",
            "--iters",
            "150",
            "--batch",
            "32",
            "--config",
            "cfg.json",
        ],
        dir,
    ));
    assert!(out.contains("distinct seen"));
    let trace = fs::read_to_string(dir.join("out/trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 151);
    assert_eq!(
        lines[0],
        "t,tau,target_effective_size,realized_effective_size,distinct_seen_cumulative"
    );
    assert!(lines[150].starts_with("150,inf,"));
    assert_eq!(
        fs::read_to_string(dir.join("out/profile.csv"))
            .unwrap()
            .lines()
            .count(),
        101
    );

    let out = ok(&warmup(
        &["stats", "--scores", "out/scores.jsonl", "--csv", "ex.csv"],
        dir,
    ));
    assert!(out.contains("corr(omega_dom, omega_prot)"));
    let csv = fs::read_to_string(dir.join("ex.csv")).unwrap();
    assert!(csv.starts_with("cluster_id,kind,rank,image_id,omega\n"));
    // 3 clusters, 20 lowest and 20 highest each.
    assert_eq!(csv.lines().count(), 1 + 3 * 40);
}

#[test]
fn flags_override_config_and_runs_reproduce() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture(dir);
    fs::write(dir.join("cfg.json"), r#"{"K": 7, "seed": 1}"#).unwrap();
    let base = [
        "score",
        "--input",
        "toy.tokemb",
        "--config",
        "cfg.json",
        "--k",
        "4",
        "--seed",
        "9",
    ];
    ok(&warmup(&[&base[..], &["--out", "a"]].concat(), dir));
    ok(&warmup(
        &[&base[..], &["--out", "b", "--sequential"]].concat(),
        dir,
    ));
    let out = Command::new(env!("CARGO_BIN_EXE_warmup"))
        .args([&base[..], &["--out", "c"]].concat())
        .current_dir(dir)
        .env("WARMUP_THREADS", "1")
        .output()
        .unwrap();
    ok(&out);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["clusters"], 4);
    for f in ["scores.jsonl", "protos.bin"] {
        let a = fs::read(dir.join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.join("b").join(f)).unwrap(), "{f}");
        assert_eq!(a, fs::read(dir.join("c").join(f)).unwrap(), "{f}");
    }

    let sim = |name: &str, extra: &[&str]| {
        let args = [
            &[
                "simulate",
                "--scores",
                "a/scores.jsonl",
                "--iters",
                "60",
                "--batch",
                "16",
                "--warmup",
                "50",
            ][..],
            &["--trace", name],
            extra,
        ]
        .concat();
        ok(&warmup(&args, dir));
        fs::read(dir.join(name)).unwrap()
    };
    assert_eq!(
        sim("t1.csv", &["--seed", "3"]),
        sim("t2.csv", &["--seed", "3"])
    );
    assert_ne!(
        sim("t3.csv", &["--seed", "3"]),
        sim("t4.csv", &["--seed", "3", "--inverse"])
    );
}

#[test]
fn exit_codes_by_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture(dir);
    let code = |args: &[&str]| warmup(args, dir).status.code().unwrap();

    // Configuration.
    fs::write(dir.join("typo.json"), r#"{"Tw": 5}"#).unwrap();
    assert_eq!(
        code(&[
            "score",
            "--input",
            "toy.tokemb",
            "--out",
            "o",
            "--config",
            "typo.json"
        ]),
        2
    );
    assert_eq!(
        code(&["score", "--input", "toy.tokemb", "--out", "o", "--k", "500"]),
        2
    );
    // I/O.
    assert_eq!(
        code(&["score", "--input", "missing.tokemb", "--out", "o"]),
        3
    );
    assert_eq!(code(&["stats", "--scores", "missing.jsonl"]), 3);
    // Malformed data.
    fs::write(dir.join("junk.tokemb"), b"not an embedding file").unwrap();
    assert_eq!(code(&["score", "--input", "junk.tokemb", "--out", "o"]), 4);
    fs::write(dir.join("empty.jsonl"), b"").unwrap();
    assert_eq!(code(&["stats", "--scores", "empty.jsonl"]), 4);

    ok(&warmup(
        &["score", "--input", "toy.tokemb", "--out", "o", "--k", "3"],
        dir,
    ));
    // D0 below the smallest reachable effective size fails before iterating.
    assert_eq!(
        code(&[
            "simulate",
            "--scores",
            "o/scores.jsonl",
            "--iters",
            "5",
            "--batch",
            "4",
            "--d0",
            "1.0"
        ]),
        2
    );

    let bad_threads = Command::new(env!("CARGO_BIN_EXE_warmup"))
        .args(["stats", "--scores", "o/scores.jsonl"])
        .current_dir(dir)
        .env("WARMUP_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}
