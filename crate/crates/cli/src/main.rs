//! Command-line entry point: `run`, `fitness`, `analyze`, and `fit`
//! subcommands over the simulator library.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data-format error,
//! 4 internal invariant violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pixelmarkets::error::Error;
use pixelmarkets::experiment::{compute_metrics, run_market_experiment, MetricsBundle};
use pixelmarkets::inference::{fit_mixture, FitOptions};
use pixelmarkets::io::config::{load_config, ExperimentConfig};
use pixelmarkets::io::formats::{
    parse_chains_csv, parse_choice_records_csv, parse_embeddings_csv, write_chains_csv,
    write_edits_csv, write_fit_csv, write_fit_summary, write_fitness_csv, write_gini_report,
    write_image_pbm, write_metrics_csv, write_newick, write_tests_csv,
};
use pixelmarkets::io::plot::{
    emit_plot_svg, fitness_delta_points, fitness_series_points, PlotStyle,
};
use pixelmarkets::metrics::MetricPoint;

/// Environment variable prefix; flags take precedence over the environment,
/// which takes precedence over the config file.
const ENV_PREFIX: &str = "PIXELMARKETS";

#[derive(Parser)]
#[command(
    name = "pixelmarkets",
    about = "Simulate and analyze popularity feedback in evolving image markets",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = rayon default). Results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate paired PI/NPI chains and write chains, metrics, and plots.
    Run {
        /// Config file; omitted means full defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the bitstring fitness model over its four parameterizations.
    Fitness {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Recompute all metrics from a stored chains CSV.
    Analyze {
        /// Chains CSV produced by `run`.
        #[arg(long)]
        chains: PathBuf,
        /// Market window used when the chains were simulated.
        #[arg(long, default_value_t = 12)]
        window: u32,
        /// Monte-Carlo resamples for permutation tests.
        #[arg(long, default_value_t = 10_000)]
        resamples: u32,
        /// Optional external embedding CSV (image_id,v0,..).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit the policy mixture to a choice-records CSV.
    Fit {
        /// Choice records CSV.
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 500)]
        max_iter: u32,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Also fit the utility coefficients by gradient ascent.
        #[arg(long)]
        fit_beta: bool,
        #[arg(long, default_value_t = 5)]
        starts: u32,
        #[arg(long, default_value_t = 200)]
        bootstrap: u32,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::Io(_) => 2,
        Error::DataFormat { .. } => 3,
        _ => 4,
    }
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(format!("{ENV_PREFIX}_{name}")).ok()
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, common } => {
            let config = resolve_config(config.as_deref(), &common)?;
            init_threads(&common)?;
            cmd_run(&config)
        }
        Command::Fitness { config, common } => {
            let config = resolve_config(config.as_deref(), &common)?;
            init_threads(&common)?;
            cmd_fitness(&config)
        }
        Command::Analyze {
            chains,
            window,
            resamples,
            embeddings,
            common,
        } => {
            init_threads(&common)?;
            let seed = resolve_seed(&common)?.unwrap_or(0);
            let out = resolve_out(&common).unwrap_or_else(|| PathBuf::from("out"));
            cmd_analyze(&chains, window, resamples, embeddings.as_deref(), seed, &out)
        }
        Command::Fit {
            records,
            max_iter,
            tol,
            fit_beta,
            starts,
            bootstrap,
            common,
        } => {
            init_threads(&common)?;
            let options = FitOptions {
                max_iter,
                tol,
                fit_beta,
                n_starts: starts,
                n_bootstrap: bootstrap,
                seed: resolve_seed(&common)?.unwrap_or(0),
                ..FitOptions::default()
            };
            let out = resolve_out(&common).unwrap_or_else(|| PathBuf::from("out"));
            cmd_fit(&records, &options, &out)
        }
    }
}

fn resolve_seed(common: &CommonArgs) -> Result<Option<u64>, Error> {
    if let Some(seed) = common.seed {
        return Ok(Some(seed));
    }
    match env_var("SEED") {
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| Error::config("PIXELMARKETS_SEED", format!("cannot parse `{raw}`"))),
        None => Ok(None),
    }
}

fn resolve_out(common: &CommonArgs) -> Option<PathBuf> {
    common
        .out
        .clone()
        .or_else(|| env_var("OUT").map(PathBuf::from))
}

fn resolve_threads(common: &CommonArgs) -> Result<Option<usize>, Error> {
    if let Some(threads) = common.threads {
        return Ok(Some(threads));
    }
    match env_var("THREADS") {
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| Error::config("PIXELMARKETS_THREADS", format!("cannot parse `{raw}`"))),
        None => Ok(None),
    }
}

fn init_threads(common: &CommonArgs) -> Result<(), Error> {
    if let Some(n) = resolve_threads(common)? {
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::config("threads", e.to_string()))?;
        }
    }
    Ok(())
}

fn resolve_config(path: Option<&Path>, common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut config = match path {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = resolve_seed(common)? {
        config.seed = seed;
    }
    if let Some(out) = resolve_out(common) {
        config.out_dir = out;
    }
    Ok(config)
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn metric_points(bundle: &MetricsBundle, metric: &str) -> Vec<MetricPoint> {
    bundle
        .points
        .iter()
        .filter(|p| p.metric == metric)
        .cloned()
        .collect::<Vec<_>>()
}

fn write_analysis_files(out: &Path, bundle: &MetricsBundle) -> Result<(), Error> {
    write_text(&out.join("metrics.csv"), &write_metrics_csv(&bundle.points))?;
    write_text(&out.join("tests.csv"), &write_tests_csv(&bundle.tests))?;
    write_text(&out.join("gini_report.txt"), &write_gini_report(&bundle.gini))?;
    let plots: [(&str, &str, &str, &str); 6] = [
        ("diversity_hamming", "market diversity (hamming)", "generation", "mean pairwise distance"),
        ("diversity_phylogenetic", "market diversity (phylogenetic)", "generation", "mean pairwise distance"),
        ("diversity_cosine", "market diversity (cosine)", "generation", "mean pairwise distance"),
        ("autocorrelation", "chain autocorrelation", "lag", "autocorrelation"),
        ("edit_size", "edit magnitude", "condition", "changed pixels"),
        ("gini", "selection inequality", "condition", "gini coefficient"),
    ];
    for (metric, title, x_label, y_label) in plots {
        let points = metric_points(bundle, metric);
        if points.is_empty() {
            continue;
        }
        let svg = emit_plot_svg(&points, &PlotStyle::titled(title, x_label, y_label))?;
        write_text(&out.join("plots").join(format!("{metric}.svg")), &svg)?;
    }
    Ok(())
}

fn cmd_run(config: &ExperimentConfig) -> Result<(), Error> {
    let artifacts = run_market_experiment(config)?;
    let bundle = compute_metrics(
        &artifacts.chains,
        config.window,
        config.resamples,
        config.seed,
        None,
    )?;
    let out = &config.out_dir;
    write_text(&out.join("chains.csv"), &write_chains_csv(&artifacts.chains))?;
    write_text(&out.join("edits.csv"), &write_edits_csv(&artifacts.edits))?;
    write_text(&out.join("phylo.nwk"), &write_newick(&artifacts.chains))?;
    for chain in artifacts.chains.iter().filter(|c| c.chain_id % 2 == 0) {
        let pbm = write_image_pbm(&chain.nodes()[0].image.pixels);
        write_text(
            &out.join("seeds").join(format!("pair_{:04}.pbm", chain.pair_id)),
            &pbm,
        )?;
    }
    write_analysis_files(out, &bundle)?;
    println!(
        "simulated {} chains ({} pairs) over {} generations",
        artifacts.chains.len(),
        config.chains,
        config.generations
    );
    print!("{}", write_gini_report(&bundle.gini));
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_fitness(config: &ExperimentConfig) -> Result<(), Error> {
    let parameterizations = config.fitness.parameterizations()?;
    if parameterizations.is_empty() {
        return Err(Error::config("fitness", "no parameterizations to run"));
    }
    let mut all = Vec::with_capacity(parameterizations.len());
    for (label, bitstring_config) in parameterizations {
        let mut series =
            pixelmarkets::fitness::run_fitness_experiment(&bitstring_config, config.seed)?;
        series.label = label;
        all.push(series);
    }
    let out = &config.out_dir;
    write_text(&out.join("fitness.csv"), &write_fitness_csv(&all))?;
    let fitness_svg = emit_plot_svg(
        &fitness_series_points(&all),
        &PlotStyle::titled("bitstring fitness", "generation", "mean fitness"),
    )?;
    write_text(&out.join("plots").join("fitness.svg"), &fitness_svg)?;
    let delta_svg = emit_plot_svg(
        &fitness_delta_points(&all),
        &PlotStyle::titled("fitness improvement", "generation", "mean child - parent"),
    )?;
    write_text(&out.join("plots").join("fitness_delta.svg"), &delta_svg)?;
    for series in &all {
        println!(
            "{}: fitness {:.1} -> {:.1}",
            series.label,
            series.mean_fitness.first().unwrap(),
            series.mean_fitness.last().unwrap()
        );
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_analyze(
    chains_path: &Path,
    window: u32,
    resamples: u32,
    embeddings: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<(), Error> {
    let text = std::fs::read_to_string(chains_path)?;
    let chains = parse_chains_csv(&text)?;
    let table = match embeddings {
        Some(path) => Some(parse_embeddings_csv(&std::fs::read_to_string(path)?)?),
        None => None,
    };
    let bundle = compute_metrics(&chains, window, resamples, seed, table.as_ref())?;
    write_analysis_files(out, &bundle)?;
    println!("analyzed {} chains", chains.len());
    print!("{}", write_gini_report(&bundle.gini));
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_fit(records_path: &Path, options: &FitOptions, out: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(records_path)?;
    let records = parse_choice_records_csv(&text)?;
    let fit = fit_mixture(&records, options)?;
    write_text(&out.join("fit_weights.csv"), &write_fit_csv(&fit))?;
    let summary = write_fit_summary(&fit);
    write_text(&out.join("fit_summary.txt"), &summary)?;
    print!("{summary}");
    println!("artifacts in {}", out.display());
    Ok(())
}
