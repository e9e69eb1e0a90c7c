use std::path::Path;
use std::process::{Command, Output, Stdio};

const TINY: &[&str] = &[
    "--preset",
    "desk",
    "--tree-population",
    "10",
    "--perturbation-population",
    "12",
    "--islands",
    "3",
    "--generation-limit",
    "6",
    "--set",
    "epoch_generations = 3",
    "--set",
    "block_generations = 1",
    "--set",
    "top_trees = 3",
    "--set",
    "hof_size = 8",
    "--set",
    "regret_samples = 10",
    "--set",
    "attack_samples = 20",
];

fn coforest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coforest"))
        .args(args)
        .env_remove("COFOREST_CONFIG")
        .output()
        .expect("binary runs")
}

fn train_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--dataset", "bundled:diagonal", "--seed", "5", "--output", dir.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    coforest(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn train_then_evaluate_and_measure_diversity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = train_into(&out, &["--report-format", "csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["forest_nash.json", "forest_equal.json", "tree_single.json", "test.csv", "report.json", "metrics.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["total_generations"], 6);
    assert_eq!(report["islands"].as_array().unwrap().len(), 3);
    let weights: f64 = report["composition"]["weights"].as_array().unwrap().iter().map(|w| w.as_f64().unwrap()).sum();
    assert!((weights - 1.0).abs() < 1e-9);

    let model = out.join("forest_equal.json");
    let test = out.join("test.csv");
    let o = coforest(&[
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--data",
        test.to_str().unwrap(),
        "--samples",
        "20",
        "--regret-samples",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,dataset,composition,members,epsilon,samples,clean_accuracy,adversarial_accuracy,adversarial_accuracy_exact,max_regret"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[2], "equal");
    assert_eq!(row[3], "3");
    assert_eq!(row[4], "0.1");
    let clean: f64 = row[6].parse().unwrap();
    let adv: f64 = row[7].parse().unwrap();
    assert!((0.0..=1.0).contains(&clean) && adv <= clean);

    let o = coforest(&["diversity", "--model", model.to_str().unwrap(), "--data", test.to_str().unwrap(), "--samples", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("model,dataset,members,epsilon,samples,avg_diversity,max_diversity\n"));

    // a single tree has no pairwise diversity
    let single = out.join("tree_single.json");
    let o = coforest(&["diversity", "--model", single.to_str().unwrap(), "--data", test.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = [("a", "1"), ("b", "1"), ("c", "3")];
    for (name, threads) in runs {
        let o = train_into(&tmp.path().join(name), &["--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["forest_nash.json", "forest_equal.json", "tree_single.json", "test.csv"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        for other in ["b", "c"] {
            assert_eq!(a, std::fs::read(tmp.path().join(other).join(f)).unwrap(), "{f} differs in {other}");
        }
    }
}

#[test]
fn repeats_write_per_seed_outputs_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let o = train_into(tmp.path(), &["--repeats", "2", "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("seed-5/forest_nash.json").is_file());
    assert!(tmp.path().join("seed-6/forest_nash.json").is_file());
    let summary = std::fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("dataset,method,metric,n,mean,std\n"));
    // exact adversarial accuracy only exists for single-tree models, so not every seed has it
    for line in summary.lines().skip(1).filter(|l| !l.contains("_exact")) {
        assert_eq!(line.split(',').nth(3), Some("2"), "{line}");
    }
}

#[test]
fn config_file_and_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "dataset = \"bundled:moons\"\nislands = 2\n").unwrap();
    let out = tmp.path().join("out");
    let mut args = vec!["train", "--output", out.to_str().unwrap(), "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--set", "islands = 2"]);
    let o = coforest(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"dataset\": \"moons\""));

    let mut args = vec!["train", "--output", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_coforest"))
        .args(&args)
        .env("COFOREST_CONFIG", tmp.path().join("missing.toml"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(&cfg, "islandz = 2\n").unwrap();
    let o = coforest(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("islandz"));
}

#[test]
fn exit_codes() {
    assert_eq!(coforest(&["--help"]).status.code(), Some(0));
    assert_eq!(coforest(&["--version"]).status.code(), Some(0));
    assert_eq!(coforest(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(coforest(&["frobnicate"]).status.code(), Some(1));
    // no dataset
    assert_eq!(coforest(&["train"]).status.code(), Some(1));
    assert_eq!(coforest(&["train", "--dataset", "/no/such.csv"]).status.code(), Some(2));
    assert_eq!(coforest(&["evaluate", "--model", "/no/model.json", "--data", "bundled:iris"]).status.code(), Some(2));
}

#[test]
fn solve_game_from_stdin() {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_coforest"))
        .args(["solve-game", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"0,-1,1\n1,0,-1\n-1,1,0\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["format_version"], 1);
    for key in ["row_strategy", "col_strategy"] {
        for p in v[key].as_array().unwrap() {
            assert!((p.as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-9);
        }
    }
    assert!(v["value"].as_f64().unwrap().abs() < 1e-9);

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "1,2\n3,x\n").unwrap();
    let o = coforest(&["solve-game", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn ablate_and_experiment_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ablate");
    let mut args = vec!["ablate", "--dataset", "bundled:diagonal", "--seeds", "1,2", "--output", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    let o = coforest(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let long = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    // 4 metrics x 2 seeds x 4 variants
    assert_eq!(long.lines().count(), 1 + 32);
    for v in ["nash", "equal", "nash-same-input", "equal-same-input"] {
        assert!(long.contains(&format!(",{v},")));
    }

    let spec = tmp.path().join("exp.toml");
    std::fs::write(
        &spec,
        "seeds = [1]\nvariants = [\"nash\", \"single-tree\"]\n[budget]\ntree_population = 8\nperturbation_population = 8\n\
         islands = 2\ngeneration_limit = 2\nepoch_generations = 2\nblock_generations = 1\ntop_trees = 2\nhof_size = 4\n\
         regret_samples = 3\nattack_samples = 3\n[[datasets]]\npath = \"bundled:iris\"\n",
    )
    .unwrap();
    let runs = tmp.path().join("runs");
    for cmd in ["experiment", "compare-single-tree"] {
        let o = coforest(&[cmd, spec.to_str().unwrap(), "--output-dir", runs.to_str().unwrap(), "--threads", "1"]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let dirs: Vec<_> = std::fs::read_dir(&runs).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 2);
    for d in &dirs {
        assert!(d.file_name().unwrap().to_str().unwrap().starts_with("run-"));
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
        for f in manifest["files"].as_array().unwrap() {
            assert!(d.join(f.as_str().unwrap()).is_file());
        }
    }
}
