//! Command-line experiments: dataset generation, training, tuning,
//! re-ranking, evaluation, and multi-model comparison tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use denoise_rank::config::ExperimentConfig;
use denoise_rank::eval::{
    degradation_count, evaluate_run, fisher_randomization_test, Metric, MetricReport,
};
use denoise_rank::rerank::FusionConfig;
use denoise_rank::train::{grid_search, train, GridSearchResult};
use denoise_rank::types::{validate_dataset, Dataset, Variant};
use denoise_rank::{io, synth};

#[derive(Parser)]
#[command(
    name = "denoise-rank",
    about = "Personalized search re-ranking with query-aware user models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic topic-clustered dataset.
    Synth(SynthArgs),
    /// Train the variant's learnable parameters with a triplet hinge loss.
    Train(TrainArgs),
    /// Grid-search the fusion weight and filter threshold on validation data.
    Tune(TuneArgs),
    /// Re-rank a first-stage run with a personalized model.
    Rerank(RerankArgs),
    /// Score a run against judgments; optionally test against a baseline run.
    Evaluate(EvaluateArgs),
    /// Tune, re-rank, and evaluate several model configs into one table.
    Compare(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Generator config file (preset and overrides).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the dataset bundle.
    #[arg(long)]
    out: PathBuf,
    /// Override the generator seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long)]
    config: PathBuf,
    /// First-stage run file; overrides the config's `run` path.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Output run file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run file to score.
    #[arg(long)]
    run: PathBuf,
    /// Relevance judgments.
    #[arg(long)]
    qrels: PathBuf,
    /// Baseline run for significance testing and degradation counting.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Uncorrected significance level.
    #[arg(long, default_value_t = 0.001)]
    alpha: f64,
    /// Number of comparisons the Bonferroni correction divides alpha by.
    #[arg(long, default_value_t = 1)]
    comparisons: usize,
    /// Randomization-test iterations.
    #[arg(long, default_value_t = 100_000)]
    iterations: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    /// One experiment config per model row.
    #[arg(long, num_args = 1.., required = true)]
    configs: Vec<PathBuf>,
    /// Output directory for per-model runs and the table.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Uncorrected significance level for the table markers.
    #[arg(long, default_value_t = 0.001)]
    alpha: f64,
    /// Randomization-test iterations.
    #[arg(long, default_value_t = 100_000)]
    iterations: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    denoise_rank::init_thread_pool();
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Rerank(args) => cmd_rerank(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
    }
}

fn load_experiment(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn report_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

/// Fills in missing learnable parameters with seeded defaults once the
/// embedding dimension is known.
fn ensure_params(
    attn: &mut denoise_rank::types::AttentionConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<()> {
    let dim = match dataset.queries.first() {
        Some(q) => q.vector.dim(),
        None => bail!("dataset has no queries"),
    };
    if attn.variant == Variant::MultiHead && attn.multihead_params.is_none() {
        attn.multihead_params = Some(
            denoise_rank::types::MultiHeadParams::seeded_near_identity(
                dim, attn.heads, 0.05, seed,
            )?,
        );
    }
    if attn.alignment == denoise_rank::types::Alignment::Additive
        && attn.additive_params.is_none()
    {
        attn.additive_params = Some(denoise_rank::types::AdditiveParams::seeded(dim, seed));
    }
    attn.validate(dim)?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut config = denoise_rank::config::load_synth_config(&args.config)
        .with_context(|| format!("loading generator config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = synth::generate(&config)?;
    io::write_dataset(&args.out, &out)?;
    println!(
        "wrote {} users, {} queries (dim {}) to {}",
        out.stats.users,
        out.stats.queries,
        out.stats.dimension,
        args.out.display()
    );
    println!(
        "user docs per profile: mean {:.2}, std {:.2}",
        out.stats.user_doc_mean, out.stats.user_doc_std
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = load_experiment(&args.config, args.seed)?;
    let (dataset, warnings) = config.load_dataset()?;
    report_warnings(&warnings);
    let mut attn = config.attention_config()?;
    ensure_params(&mut attn, &dataset, config.seed)?;
    let mut training = config.training_config()?;
    training.seed = config.seed;
    let outcome = train(&dataset, &training, &attn)?;

    let params_path = match (&config.params_file, &config.output_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => {
            std::fs::create_dir_all(dir)?;
            dir.join("params.json")
        }
        (None, None) => bail!("config needs 'params_file' or 'output_dir' to store parameters"),
    };
    io::save_params(
        &params_path,
        &io::ParamsFile::from_config(&outcome.config, Some(outcome.loss_trace.clone())),
    )?;
    println!("trained {} for {} epochs", attn.variant.name(), outcome.loss_trace.len());
    println!(
        "loss: first epoch {:.6}, last epoch {:.6}",
        outcome.loss_trace.first().copied().unwrap_or(0.0),
        outcome.loss_trace.last().copied().unwrap_or(0.0)
    );
    println!("parameters written to {}", params_path.display());
    Ok(())
}

fn cmd_tune(args: TuneArgs) -> Result<()> {
    let config = load_experiment(&args.config, args.seed)?;
    let (dataset, warnings) = config.load_validation_dataset()?;
    report_warnings(&warnings);
    let mut attn = config.attention_config()?;
    ensure_params(&mut attn, &dataset, config.seed)?;
    let result = grid_search(
        &dataset,
        &config.lambda_grid,
        &config.sigma_t_grid,
        &attn,
        config.normalize_first_stage,
        config.tune_metric,
    )?;
    print_grid_best(&result, config.tune_metric);
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        let table_path = dir.join(format!("grid_{}.tsv", attn.variant.name()));
        io::write_grid_table(&table_path, &result, config.tune_metric.name())?;
        println!("grid table written to {}", table_path.display());
    }
    Ok(())
}

fn print_grid_best(result: &GridSearchResult, metric: Metric) {
    match result.best_threshold {
        Some(t) => println!(
            "best: lambda = {:.2}, sigma_t = {:.2}, {} = {:.6}",
            result.best_lambda,
            t,
            metric.name(),
            result.best_score
        ),
        None => println!(
            "best: lambda = {:.2}, {} = {:.6}",
            result.best_lambda,
            metric.name(),
            result.best_score
        ),
    }
}

fn cmd_rerank(args: RerankArgs) -> Result<()> {
    let mut config = load_experiment(&args.config, args.seed)?;
    if let Some(run) = args.run {
        config.run = Some(run);
    }
    let (dataset, warnings) = config.load_dataset()?;
    report_warnings(&warnings);
    let report = validate_dataset(&dataset);
    for issue in &report.issues {
        eprintln!("warning: {issue}");
    }
    let mut attn = config.attention_config()?;
    ensure_params(&mut attn, &dataset, config.seed)?;
    let fusion = config.fusion_config()?;
    let results = denoise_rank::rerank::rerank_dataset(&dataset, &attn, &fusion)?;
    let tag = if config.run_tag.is_empty() {
        attn.variant.name().to_string()
    } else {
        config.run_tag.clone()
    };
    io::write_run(&args.out, &io::run_from_results(&results, &tag))?;
    println!("re-ranked {} queries to {}", results.len(), args.out.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (run, warnings) = io::load_run(&args.run)?;
    report_warnings(&warnings);
    let (qrels, qrels_warnings) = io::load_qrels(&args.qrels)?;
    report_warnings(&qrels_warnings);
    let report = evaluate_run(&run.ranked_ids(), &qrels);
    if report.per_query.is_empty() {
        bail!("no evaluable queries (none has a judged-relevant document)");
    }
    println!("queries evaluated: {}", report.per_query.len());
    if !report.skipped.is_empty() {
        println!("queries skipped (no judged relevant): {}", report.skipped.len());
    }
    println!("map@100  = {:.6}", report.map100);
    println!("mrr@10   = {:.6}", report.mrr10);
    println!("ndcg@10  = {:.6}", report.mndcg10);

    if let Some(baseline_path) = &args.baseline {
        let (baseline_run, baseline_warnings) = io::load_run(baseline_path)?;
        report_warnings(&baseline_warnings);
        let baseline = evaluate_run(&baseline_run.ranked_ids(), &qrels);
        let (paired, _) = paired_values(&report, &baseline, Metric::Map100);
        if paired.is_empty() {
            bail!("run and baseline share no evaluable queries");
        }
        println!(
            "baseline ({}): map@100 = {:.6}, mrr@10 = {:.6}, ndcg@10 = {:.6}",
            baseline_path.display(),
            baseline.map100,
            baseline.mrr10,
            baseline.mndcg10
        );
        for metric in [Metric::Map100, Metric::Mrr10, Metric::Ndcg10] {
            let (sys_vals, base_vals) = paired_values(&report, &baseline, metric);
            let test = fisher_randomization_test(
                &sys_vals,
                &base_vals,
                args.iterations,
                args.alpha,
                args.comparisons,
                args.seed,
            )?
            .with_metric(metric.name());
            println!(
                "{}: p = {:.6} (alpha/{} = {:.6}) -> {}",
                test.metric,
                test.p_value,
                args.comparisons,
                test.corrected_alpha,
                if test.significant { "significant" } else { "not significant" }
            );
        }
        let (sys_vals, base_vals) = paired_values(&report, &baseline, Metric::Map100);
        let (count, ratio) = degradation_count(&base_vals, &sys_vals)?;
        println!(
            "degraded vs baseline on map@100: {} of {} queries ({:.0}%)",
            count,
            sys_vals.len(),
            ratio * 100.0
        );
    }
    Ok(())
}

/// Per-query metric values over the queries both reports evaluated, in
/// query-id order.
fn paired_values(a: &MetricReport, b: &MetricReport, metric: Metric) -> (Vec<f64>, Vec<f64>) {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (query_id, am) in &a.per_query {
        if let Some(bm) = b.per_query.get(query_id) {
            let pick = |m: &denoise_rank::eval::QueryMetrics| match metric {
                Metric::Map100 => m.ap100,
                Metric::Mrr10 => m.rr10,
                Metric::Ndcg10 => m.ndcg10,
            };
            left.push(pick(am));
            right.push(pick(bm));
        }
    }
    (left, right)
}

struct CompareRow {
    name: String,
    alignment: String,
    lambda: f64,
    sigma_t: Option<f64>,
    report: MetricReport,
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    if args.configs.is_empty() {
        bail!("compare needs at least one config");
    }
    let mut rows = Vec::new();
    for config_path in &args.configs {
        let config = load_experiment(config_path, args.seed)?;
        let mut attn = config.attention_config()?;

        // Tune on the validation split, then re-rank the test queries.
        let (validation, _) = config.load_validation_dataset()?;
        ensure_params(&mut attn, &validation, config.seed)?;
        let tuned = grid_search(
            &validation,
            &config.lambda_grid,
            &config.sigma_t_grid,
            &attn,
            config.normalize_first_stage,
            config.tune_metric,
        )?;
        let attn = match tuned.best_threshold {
            Some(t) => attn.with_threshold(t)?,
            None => attn,
        };
        let fusion = FusionConfig {
            lambda: tuned.best_lambda,
            normalize_first_stage: config.normalize_first_stage,
        };
        let (test, warnings) = config.load_dataset()?;
        report_warnings(&warnings);
        let results = denoise_rank::rerank::rerank_dataset(&test, &attn, &fusion)?;
        let report = evaluate_run(&results_to_ranked(&results), &test.qrels);
        let name = if config.run_tag.is_empty() {
            attn.variant.name().to_string()
        } else {
            config.run_tag.clone()
        };
        if let Some(dir) = &args.out {
            std::fs::create_dir_all(dir)?;
            let run_path = dir.join(format!("{name}.run"));
            io::write_run(&run_path, &io::run_from_results(&results, &name))?;
        }
        rows.push((
            config,
            CompareRow {
                name,
                alignment: attn.alignment.name().to_string(),
                lambda: tuned.best_lambda,
                sigma_t: tuned.best_threshold,
                report,
            },
        ));
    }

    let seed = rows
        .first()
        .map(|(config, _)| config.seed)
        .unwrap_or(42);
    let table = render_comparison(
        &rows.iter().map(|(_, r)| r).collect::<Vec<_>>(),
        args.alpha,
        args.iterations,
        seed,
    )?;
    print!("{table}");
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("comparison.tsv"), &table)?;
        println!("table written to {}", dir.join("comparison.tsv").display());
    }
    Ok(())
}

fn results_to_ranked(
    results: &[(String, Vec<denoise_rank::rerank::RankedResult>)],
) -> BTreeMap<String, Vec<String>> {
    results
        .iter()
        .map(|(qid, rows)| (qid.clone(), rows.iter().map(|r| r.doc_id.clone()).collect()))
        .collect()
}

/// Builds the comparison table with significance markers: `*` marks a
/// Bonferroni-significant improvement over the `mean` row, `+` over every
/// other row.
fn render_comparison(
    rows: &[&CompareRow],
    alpha: f64,
    iterations: usize,
    seed: u64,
) -> Result<String> {
    use std::fmt::Write;
    let mean_idx = rows
        .iter()
        .position(|r| r.name == Variant::Mean.name() || r.name == "mean");
    let comparisons = rows.len().saturating_sub(1).max(1);
    let mut out = String::new();
    writeln!(out, "model\talignment\tmap@100\tmrr@10\tndcg@10\tlambda\tsigma_t").unwrap();
    for (i, row) in rows.iter().enumerate() {
        let mut cells = Vec::new();
        for metric in [Metric::Map100, Metric::Mrr10, Metric::Ndcg10] {
            let value = row.report.mean(metric);
            let mut marker = String::new();
            if rows.len() > 1 {
                let mut memo: BTreeMap<usize, bool> = BTreeMap::new();
                let mut beats = |j: usize| -> Result<bool> {
                    if let Some(&cached) = memo.get(&j) {
                        return Ok(cached);
                    }
                    let other = rows[j];
                    let (a, b) = paired_values(&row.report, &other.report, metric);
                    let won = if a.is_empty()
                        || row.report.mean(metric) <= other.report.mean(metric)
                    {
                        false
                    } else {
                        fisher_randomization_test(&a, &b, iterations, alpha, comparisons, seed)?
                            .significant
                    };
                    memo.insert(j, won);
                    Ok(won)
                };
                if let Some(m) = mean_idx {
                    if i != m && beats(m)? {
                        marker.push('*');
                    }
                }
                let mut dominates = true;
                for j in 0..rows.len() {
                    if j == i {
                        continue;
                    }
                    if !beats(j)? {
                        dominates = false;
                        break;
                    }
                }
                if dominates {
                    marker.push('+');
                }
            }
            cells.push(format!("{value:.4}{marker}"));
        }
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.2}\t{}",
            row.name,
            row.alignment,
            cells[0],
            cells[1],
            cells[2],
            row.lambda,
            row.sigma_t.map_or("-".to_string(), |t| format!("{t:.2}")),
        )
        .unwrap();
    }
    Ok(out)
}
