//! Black-box tests of the command-line surface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_denoise-rank"))
}

fn run_ok(args: &[&str]) -> Output {
    let output = bin().args(args).output().expect("spawn");
    assert!(
        output.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

/// Generates a small dataset bundle and returns its directory.
fn synth_dataset(dir: &Path, extra: &str) -> PathBuf {
    let config_path = dir.join("synth.conf");
    write(
        &config_path,
        &format!(
            "preset = academic_like\nusers = 30\nqueries_per_user = 4\n\
             user_docs_per_user = 12\ncandidates_per_query = 15\n\
             relevant_per_query = 3\ndimension = 24\ntopics = 6\nseed = 31\n{extra}"
        ),
    );
    let data_dir = dir.join("data");
    run_ok(&[
        "synth",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        data_dir.to_str().unwrap(),
    ]);
    data_dir
}

fn experiment_config(dir: &Path, data: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    write(
        &path,
        &format!(
            "embeddings = {data}/embeddings.jsonl\nqueries = {data}/queries_test.tsv\n\
             validation_queries = {data}/queries_val.tsv\nprofiles = {data}/profiles.tsv\n\
             run = {data}/first_stage.run\nqrels = {data}/qrels.txt\n{body}",
            data = data.display()
        ),
    );
    path
}

#[test]
fn synth_writes_complete_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path(), "");
    for file in [
        "embeddings.jsonl",
        "queries.tsv",
        "queries_val.tsv",
        "queries_test.tsv",
        "profiles.tsv",
        "first_stage.run",
        "qrels.txt",
        "stats.tsv",
    ] {
        assert!(data.join(file).exists(), "missing {file}");
    }
}

#[test]
fn synth_is_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("a")).unwrap();
    std::fs::create_dir_all(dir.path().join("b")).unwrap();
    let a = synth_dataset(&dir.path().join("a"), "");
    let b = synth_dataset(&dir.path().join("b"), "");
    for file in ["embeddings.jsonl", "first_stage.run", "qrels.txt"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "nondeterministic {file}"
        );
    }
}

#[test]
fn rerank_with_lambda_zero_reproduces_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path(), "");
    let config = experiment_config(
        dir.path(),
        &data,
        "exp.conf",
        "variant = denoising\nalignment = shifted_cosine\nsigma_t = 0.6\nlambda = 0.0\n",
    );
    let out = dir.path().join("rerank.run");
    run_ok(&[
        "rerank",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);

    // Compare document order per query (scores differ by normalization).
    let order = |path: &Path, queries: &std::collections::HashSet<String>| {
        let mut map: std::collections::BTreeMap<String, Vec<String>> = Default::default();
        for line in std::fs::read_to_string(path).unwrap().lines() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if queries.contains(cols[0]) {
                map.entry(cols[0].to_string()).or_default().push(cols[2].to_string());
            }
        }
        map
    };
    let test_queries: std::collections::HashSet<String> =
        std::fs::read_to_string(data.join("queries_test.tsv"))
            .unwrap()
            .lines()
            .map(|l| l.split('\t').next().unwrap().to_string())
            .collect();
    let original = order(&data.join("first_stage.run"), &test_queries);
    let reranked = order(&out, &test_queries);
    assert_eq!(original, reranked);
}

#[test]
fn evaluate_reports_perfect_ndcg_for_ideal_run() {
    let dir = tempfile::tempdir().unwrap();
    let qrels = dir.path().join("qrels.txt");
    write(&qrels, "q1 0 a 1\nq1 0 b 1\nq2 0 c 1\n");
    let run = dir.path().join("ideal.run");
    write(
        &run,
        "q1 Q0 a 1 3.0 t\nq1 Q0 b 2 2.0 t\nq1 Q0 x 3 1.0 t\nq2 Q0 c 1 1.0 t\n",
    );
    let output = run_ok(&[
        "evaluate",
        "--run",
        run.to_str().unwrap(),
        "--qrels",
        qrels.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("ndcg@10  = 1.000000"), "stdout: {stdout}");
    assert!(stdout.contains("map@100  = 1.000000"), "stdout: {stdout}");
}

#[test]
fn evaluate_with_baseline_reports_significance_and_degradation() {
    let dir = tempfile::tempdir().unwrap();
    let qrels = dir.path().join("qrels.txt");
    let mut qrels_text = String::new();
    let mut good = String::new();
    let mut bad = String::new();
    for i in 0..24 {
        qrels_text.push_str(&format!("q{i} 0 rel{i} 1\n"));
        good.push_str(&format!("q{i} Q0 rel{i} 1 2.0 g\nq{i} Q0 junk{i} 2 1.0 g\n"));
        bad.push_str(&format!("q{i} Q0 junk{i} 1 2.0 b\nq{i} Q0 rel{i} 2 1.0 b\n"));
    }
    write(&qrels, &qrels_text);
    let good_run = dir.path().join("good.run");
    let bad_run = dir.path().join("bad.run");
    write(&good_run, &good);
    write(&bad_run, &bad);
    let output = run_ok(&[
        "evaluate",
        "--run",
        good_run.to_str().unwrap(),
        "--qrels",
        qrels.to_str().unwrap(),
        "--baseline",
        bad_run.to_str().unwrap(),
        "--alpha",
        "0.05",
        "--comparisons",
        "3",
        "--iterations",
        "20000",
    ]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("significant"), "stdout: {stdout}");
    assert!(
        stdout.contains("degraded vs baseline on map@100: 0 of 24"),
        "stdout: {stdout}"
    );
}

#[test]
fn train_then_rerank_via_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path(), "");
    let params = dir.path().join("params.json");
    let config = experiment_config(
        dir.path(),
        &data,
        "train.conf",
        &format!(
            "variant = denoising\nalignment = shifted_cosine\nthreshold_logit = -0.4\n\
             epochs = 3\nbatch_size = 8\nlearning_rate = 0.02\nseed = 11\n\
             params_file = {}\nlambda = 0.5\n",
            params.display()
        ),
    );
    let output = run_ok(&["train", "--config", config.to_str().unwrap()]);
    assert!(params.exists(), "checkpoint not written");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("trained denoising"), "stdout: {stdout}");

    let out = dir.path().join("personalized.run");
    run_ok(&[
        "rerank",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(out.exists());
}

#[test]
fn tune_prints_best_cell_and_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path(), "");
    let out_dir = dir.path().join("out");
    let config = experiment_config(
        dir.path(),
        &data,
        "tune.conf",
        &format!(
            "variant = denoising\nalignment = shifted_cosine\n\
             lambda_grid = 0.0,0.5,1.0\nsigma_t_grid = 0.3,0.6\n\
             output_dir = {}\n",
            out_dir.display()
        ),
    );
    let output = run_ok(&["tune", "--config", config.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("best: lambda ="), "stdout: {stdout}");
    let table = out_dir.join("grid_denoising.tsv");
    assert!(table.exists());
    let table_text = std::fs::read_to_string(&table).unwrap();
    assert_eq!(table_text.lines().count(), 7, "header plus 6 cells");
}

#[test]
fn compare_table_puts_denoising_on_top_for_academic_preset() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path(), "");
    let configs: Vec<PathBuf> = [
        ("mean.conf", "variant = mean\nalignment = cosine\nrun_tag = mean\n"),
        (
            "softmax.conf",
            "variant = softmax\nalignment = scaled_dot\nrun_tag = softmax\n",
        ),
        (
            "denoising.conf",
            "variant = denoising\nalignment = shifted_cosine\nrun_tag = denoising\n",
        ),
    ]
    .iter()
    .map(|(name, body)| experiment_config(dir.path(), &data, name, body))
    .collect();
    let out_dir = dir.path().join("cmp");
    let mut args = vec!["compare".to_string(), "--configs".to_string()];
    args.extend(configs.iter().map(|p| p.to_str().unwrap().to_string()));
    args.push("--out".to_string());
    args.push(out_dir.to_str().unwrap().to_string());
    args.push("--alpha".to_string());
    args.push("0.05".to_string());
    args.push("--iterations".to_string());
    args.push("20000".to_string());
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let output = run_ok(&arg_refs);
    let stdout = String::from_utf8_lossy(&output.stdout);

    let mut map_by_model = std::collections::BTreeMap::new();
    for line in stdout.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() >= 3 {
            let value: f64 = cols[2].trim_end_matches(['*', '+']).parse().unwrap_or(0.0);
            map_by_model.insert(cols[0].to_string(), value);
        }
    }
    let denoising = map_by_model["denoising"];
    for (model, value) in &map_by_model {
        if model != "denoising" {
            assert!(
                denoising > *value,
                "denoising {denoising} should top {model} {value}\n{stdout}"
            );
        }
    }
    assert!(out_dir.join("comparison.tsv").exists());
    assert!(out_dir.join("denoising.run").exists());
}

#[test]
fn bad_inputs_exit_nonzero_with_diagnostics() {
    // Missing config file.
    let output = bin()
        .args(["rerank", "--config", "/nonexistent.conf", "--out", "/tmp/x.run"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(!output.stderr.is_empty());

    // Unknown flag.
    let output = bin().args(["rerank", "--bogus"]).output().unwrap();
    assert!(!output.status.success());

    // Invalid config contents.
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("broken.conf");
    std::fs::write(&config, "variant = time_cube\n").unwrap();
    let output = bin()
        .args(["tune", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown variant"), "stderr: {stderr}");
}
