//! `ciess` command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input error, 3 state error
//! (missing prerequisites, no candidates, or outputs that would be
//! overwritten without `--force`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ciess_core::corpus::{load_interactions, split, Format, InteractionDataset, SplitOptions};
use ciess_core::rundir::{baseline_into, retrain_into, search_into, RunDir};
use ciess_core::search::{BaselineKind, SearchConfig};
use ciess_core::td3::{NoiseKind, TraceRecord};
use ciess_core::Error as CoreError;

#[derive(Parser, Debug)]
#[command(name = "ciess", version, about = "Per-entity embedding size search for recommenders")]
struct Cli {
    /// Worker threads (CIESS_THREADS takes precedence; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter, split and snapshot an interaction file.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Minimum interactions per user and item (iterated to a fixed point).
        #[arg(long, default_value_t = 4)]
        min_interactions: usize,
        #[arg(long)]
        force: bool,
    },
    /// Run the embedding size search.
    Search {
        /// Directory holding dataset.snapshot from `prepare`.
        #[arg(long)]
        data: PathBuf,
        /// JSON search config; defaults apply to omitted keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        noise: Option<NoiseArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Retrain the stored candidates of one target and keep the best.
    Retrain {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        sparsity: f64,
        #[arg(long)]
        force: bool,
    },
    /// Train a fixed-size baseline at a target sparsity.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        sparsity: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Tsv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NoiseArg {
    Gaussian,
    Uniform,
    Ou,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Es,
    Mr,
}

/// A failure tagged with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn input(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn state(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 3, error: error.into() }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = configure_threads(cli.threads) {
        eprintln!("error: {:#}", f.error);
        return ExitCode::from(f.code);
    }
    let result = match cli.command {
        Command::Prepare {
            input,
            format,
            out,
            seed,
            min_interactions,
            force,
        } => cmd_prepare(&input, format, &out, seed, min_interactions, force),
        Command::Search {
            data,
            config,
            out,
            noise,
            seed,
            force,
        } => cmd_search(&data, config.as_deref(), &out, noise, seed, force),
        Command::Retrain { run, sparsity, force } => cmd_retrain(&run, sparsity, force),
        Command::Baseline {
            data,
            kind,
            sparsity,
            config,
            out,
            seed,
            force,
        } => cmd_baseline(&data, kind, sparsity, config.as_deref(), &out, seed, force),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads(flag: Option<usize>) -> CmdResult {
    let threads = match std::env::var("CIESS_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|e| input(anyhow!("CIESS_THREADS={v:?}: {e}")))?,
        ),
        Err(_) => flag,
    };
    if let Some(n) = threads.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    Ok(())
}

fn refuse_clobber(paths: &[PathBuf], force: bool) -> CmdResult {
    if force {
        return Ok(());
    }
    if let Some(p) = paths.iter().find(|p| p.exists()) {
        return Err(state(anyhow!(
            "{} already exists; pass --force to overwrite",
            p.display()
        )));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(runtime)? + "\n";
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

#[derive(Serialize)]
struct HistogramBin {
    lo: u32,
    hi: u32,
    count: usize,
}

/// Power-of-two buckets `[1,1], [2,3], [4,7], …`.
fn popularity_histogram(pop: &[u32]) -> Vec<HistogramBin> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &f in pop {
        *counts.entry(32 - f.leading_zeros()).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(k, count)| HistogramBin {
            lo: if k == 0 { 0 } else { 1 << (k - 1) },
            hi: ((1u64 << k) - 1) as u32,
            count,
        })
        .collect()
}

#[derive(Serialize)]
struct RawStats {
    rows: usize,
    users: usize,
    items: usize,
    /// Largest id among numeric tokens, when all tokens are numeric.
    max_user_id: Option<u64>,
    max_item_id: Option<u64>,
}

#[derive(Serialize)]
struct PrepareStats {
    seed: u64,
    min_interactions: usize,
    raw: RawStats,
    users: usize,
    items: usize,
    interactions: usize,
    train: usize,
    val: usize,
    test: usize,
    user_popularity: Vec<HistogramBin>,
    item_popularity: Vec<HistogramBin>,
}

fn max_numeric<'a>(tokens: impl Iterator<Item = &'a String>) -> Option<u64> {
    let mut best = None;
    for t in tokens {
        let v: u64 = t.parse().ok()?;
        best = best.max(Some(v));
    }
    best
}

fn cmd_prepare(path: &Path, format: FormatArg, out: &Path, seed: u64, min_interactions: usize, force: bool) -> CmdResult {
    let snapshot = out.join("dataset.snapshot");
    let stats_path = out.join("stats.json");
    refuse_clobber(&[snapshot.clone(), stats_path.clone()], force)?;
    let format = match format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Tsv => Format::Tsv,
    };
    let pairs = load_interactions(path, format).map_err(input)?;
    let opts = SplitOptions {
        seed,
        min_interactions,
        ..SplitOptions::default()
    };
    let dataset = split(&pairs, &opts).map_err(input)?;

    let raw_users: std::collections::HashSet<&String> = pairs.iter().map(|p| &p.0).collect();
    let raw_items: std::collections::HashSet<&String> = pairs.iter().map(|p| &p.1).collect();
    let stats = PrepareStats {
        seed,
        min_interactions,
        raw: RawStats {
            rows: pairs.len(),
            users: raw_users.len(),
            items: raw_items.len(),
            max_user_id: max_numeric(raw_users.iter().copied()),
            max_item_id: max_numeric(raw_items.iter().copied()),
        },
        users: dataset.num_users(),
        items: dataset.num_items(),
        interactions: dataset.train().len() + dataset.val().len() + dataset.test().len(),
        train: dataset.train().len(),
        val: dataset.val().len(),
        test: dataset.test().len(),
        user_popularity: popularity_histogram(dataset.user_popularity()),
        item_popularity: popularity_histogram(dataset.item_popularity()),
    };
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(runtime)?;
    dataset.save(&snapshot).map_err(runtime)?;
    write_json(&stats_path, &stats)?;
    println!(
        "{} users, {} items, {} interactions (train {}, val {}, test {}) -> {}",
        stats.users,
        stats.items,
        stats.interactions,
        stats.train,
        stats.val,
        stats.test,
        snapshot.display()
    );
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<InteractionDataset, Failure> {
    let path = dir.join("dataset.snapshot");
    if !path.exists() {
        return Err(input(anyhow!(
            "{} not found; run `ciess prepare --out {}` first",
            path.display(),
            dir.display()
        )));
    }
    InteractionDataset::load(&path).map_err(input)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<SearchConfig, Failure> {
    let mut config = match path {
        Some(p) => SearchConfig::load(p)
            .with_context(|| format!("reading config {}", p.display()))
            .map_err(input)?,
        None => SearchConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn check_config(config: &SearchConfig) -> CmdResult {
    let problems = config.problems();
    if problems.is_empty() {
        return Ok(());
    }
    for p in &problems {
        eprintln!("config: {p}");
    }
    Err(input(anyhow!("{} config problem(s)", problems.len())))
}

fn cmd_search(data: &Path, config_path: Option<&Path>, out: &Path, noise: Option<NoiseArg>, seed: Option<u64>, force: bool) -> CmdResult {
    let mut config = load_config(config_path, seed)?;
    if let Some(kind) = noise {
        config.noise.kind = match kind {
            NoiseArg::Gaussian => NoiseKind::Gaussian,
            NoiseArg::Uniform => NoiseKind::Uniform,
            NoiseArg::Ou => NoiseKind::Ou,
        };
    }
    check_config(&config)?;
    let dataset = load_dataset(data)?;
    let run = RunDir::new(out);
    refuse_clobber(&[run.trace_path(), run.manifest_path()], force)?;

    println!("{:>7} {:>5} {:>11} {:>11} {:>11} {:>9} {:>8}", "episode", "iter", "reward", "d_users", "d_items", "sparsity", "q_mean");
    let mut rows: Vec<TraceRecord> = Vec::new();
    let outcome = search_into(&run, &dataset, &config, |r| {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:>7} {:>5} {:>11} {:>11.2} {:>11.2} {:>9.4} {:>8}",
            r.episode,
            r.iter,
            fmt(r.mean_reward),
            r.mean_action_users,
            r.mean_action_items,
            r.sparsity,
            fmt(r.mean_q)
        );
        rows.push(r.clone());
    })
    .map_err(|e| match e {
        CoreError::Invalid(_) => input(e),
        other => runtime(other),
    })?;

    println!();
    println!("{:>7} {:>11} {:>11} {:>11}", "episode", "reward", "d_users", "d_items");
    for ep in 0..config.episodes {
        let rs: Vec<&TraceRecord> = rows.iter().filter(|r| r.episode == ep && !r.aborted).collect();
        if rs.is_empty() {
            continue;
        }
        let n = rs.len() as f64;
        println!(
            "{:>7} {:>11.4} {:>11.2} {:>11.2}",
            ep,
            rs.iter().filter_map(|r| r.mean_reward).sum::<f64>() / n,
            rs.iter().map(|r| r.mean_action_users).sum::<f64>() / n,
            rs.iter().map(|r| r.mean_action_items).sum::<f64>() / n
        );
    }
    for set in &outcome.candidates {
        println!("target {:.2}: {} candidate(s)", set.target, set.len());
    }
    Ok(())
}

fn check_sparsity(c: f64) -> CmdResult {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(input(anyhow!("--sparsity must lie in (0, 1), got {c}")))
    }
}

fn cmd_retrain(run_dir: &Path, c: f64, force: bool) -> CmdResult {
    check_sparsity(c)?;
    let run = RunDir::new(run_dir);
    for needed in [run.config_path(), run.snapshot_path()] {
        if !needed.exists() {
            return Err(state(anyhow!(
                "{} missing; run `ciess search --out {}` first",
                needed.display(),
                run_dir.display()
            )));
        }
    }
    refuse_clobber(&[run.metrics_path(c)], force)?;
    let metrics = retrain_into(&run, c).map_err(|e| match e {
        CoreError::NoCandidates(_) => state(anyhow!(
            "no stored candidates reach sparsity {c:.2}; run a longer search or raise lambda"
        )),
        other => runtime(other),
    })?;
    println!("{}", serde_json::to_string_pretty(&metrics).map_err(runtime)?);
    Ok(())
}

fn cmd_baseline(data: &Path, kind: KindArg, c: f64, config_path: Option<&Path>, out: &Path, seed: Option<u64>, force: bool) -> CmdResult {
    check_sparsity(c)?;
    let config = load_config(config_path, seed)?;
    check_config(&config)?;
    let dataset = load_dataset(data)?;
    refuse_clobber(&[out.join("metrics.json")], force)?;
    let kind = match kind {
        KindArg::Es => BaselineKind::Es,
        KindArg::Mr => BaselineKind::Mr,
    };
    let metrics = baseline_into(out, &dataset, kind, c, &config).map_err(runtime)?;
    println!("{}", serde_json::to_string_pretty(&metrics).map_err(runtime)?);
    Ok(())
}
