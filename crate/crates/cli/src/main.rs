//! Experiment command line: one-shot masking, training runs, Sinkhorn
//! initialization benchmarks, and cross-epoch mask analysis.
//!
//! Exit codes: 0 success, 2 config or input error, 3 numerical divergence.

mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sparsekit::bench::{self, BenchSettings};
use sparsekit::io;
use sparsekit::trainer::{Dataset, EpochObserver, MetricsRow};
use sparsekit::{
    hard_project, mask_pearson, soft_topk_forward, train, InitStrategy, SinkhornConfig,
    TopKInstance,
};

const OUT_DIR_ENV: &str = "SPARSEKIT_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "sparsekit",
    about = "Cost-sensitive soft top-k masking and sparse-training experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitArg {
    Cold,
    DualCache,
    SortedThreshold,
}

impl From<InitArg> for InitStrategy {
    fn from(value: InitArg) -> Self {
        match value {
            InitArg::Cold => InitStrategy::Cold,
            InitArg::DualCache => InitStrategy::DualCache,
            InitArg::SortedThreshold => InitStrategy::SortedThreshold,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute a soft (or hard) top-k mask for a newline-delimited value file
    Mask {
        /// Value file, one decimal per line
        #[arg(long)]
        values: PathBuf,
        /// Cost file; defaults to unit costs
        #[arg(long)]
        costs: Option<PathBuf>,
        /// Keep budget k with 0 < k <= sum of costs
        #[arg(long, short = 'k')]
        budget: f64,
        /// Sharpness; required unless --hard is given
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 100)]
        max_iterations: usize,
        #[arg(long, default_value_t = 0.01)]
        tolerance: f64,
        #[arg(long, value_enum, default_value_t = InitArg::SortedThreshold)]
        init: InitArg,
        #[arg(long, default_value_t = 0.0)]
        initial_dual: f64,
        /// Greedy hard projection instead of the soft mask
        #[arg(long)]
        hard: bool,
        /// Mask output file (six decimals per line)
        #[arg(long, short = 'o', default_value = "mask.txt")]
        output: PathBuf,
        /// Optional dual output: mu on the first line, then nu
        #[arg(long)]
        duals_out: Option<PathBuf>,
    },
    /// Run a training experiment described by a TOML config
    Train {
        #[arg(long, short = 'c')]
        config: PathBuf,
        /// Overrides the config's output_dir
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Benchmark Sinkhorn initialization strategies over simulated
    /// sequential training steps
    BenchSinkhorn {
        #[arg(long, short = 'd')]
        dim: usize,
        /// Comma-separated sharpness values
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
        #[arg(long, value_enum, value_delimiter = ',',
              default_values_t = [InitArg::Cold, InitArg::DualCache, InitArg::SortedThreshold])]
        strategies: Vec<InitArg>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        keep_fraction: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 3000)]
        max_iterations: usize,
        #[arg(long, default_value_t = 0.01)]
        drift: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short = 'o', default_value = "bench.csv")]
        output: PathBuf,
    },
    /// Cross-epoch mask correlations for one or more mask archives
    Analyze {
        /// Mask archive directories (as written by `train`)
        #[arg(required = true)]
        archives: Vec<PathBuf>,
        #[arg(long, short = 'o', default_value = "correlations.csv")]
        output: PathBuf,
        /// Epoch window "a:b" for the median consecutive-epoch correlation
        /// printed per run
        #[arg(long)]
        window: Option<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            2
        }
    };
    std::process::exit(code);
}

/// Relative paths land under `SPARSEKIT_OUT_DIR` when it is set.
fn resolve_out(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Ok(base) = std::env::var(OUT_DIR_ENV) {
            if !base.is_empty() {
                return PathBuf::from(base).join(path);
            }
        }
    }
    path.to_path_buf()
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Mask {
            values,
            costs,
            budget,
            beta,
            max_iterations,
            tolerance,
            init,
            initial_dual,
            hard,
            output,
            duals_out,
        } => cmd_mask(
            &values,
            costs.as_deref(),
            budget,
            beta,
            max_iterations,
            tolerance,
            init,
            initial_dual,
            hard,
            &resolve_out(&output),
            duals_out.map(|p| resolve_out(&p)).as_deref(),
        ),
        Command::Train { config, output_dir } => cmd_train(&config, output_dir.as_deref()),
        Command::BenchSinkhorn {
            dim,
            betas,
            strategies,
            trials,
            steps,
            keep_fraction,
            tolerance,
            max_iterations,
            drift,
            seed,
            output,
        } => {
            let settings = BenchSettings {
                dim,
                betas,
                strategies: strategies.into_iter().map(InitStrategy::from).collect(),
                trials,
                steps_per_trial: steps,
                keep_fraction,
                tolerance,
                max_iterations,
                drift,
                seed,
            };
            cmd_bench_sinkhorn(&settings, &resolve_out(&output))
        }
        Command::Analyze {
            archives,
            output,
            window,
        } => cmd_analyze(&archives, &resolve_out(&output), window.as_deref()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_mask(
    values_path: &Path,
    costs_path: Option<&Path>,
    budget: f64,
    beta: Option<f64>,
    max_iterations: usize,
    tolerance: f64,
    init: InitArg,
    initial_dual: f64,
    hard: bool,
    output: &Path,
    duals_out: Option<&Path>,
) -> Result<i32> {
    let values = io::read_vector(values_path)?;
    let costs = match costs_path {
        Some(p) => io::read_vector(p)?,
        None => vec![1.0; values.len()],
    };

    if hard {
        let mask = hard_project(&values, &costs, budget)?;
        let spent: f64 = mask.support.iter().map(|&i| costs[i]).sum();
        io::write_vector_fixed(output, &mask.indicator_f64(), 0)?;
        let threshold = mask
            .threshold_index
            .map(|i| i.to_string())
            .unwrap_or_else(|| "none".into());
        println!(
            "budget_spent={spent} support_size={} threshold_index={threshold}",
            mask.support_size()
        );
        return Ok(0);
    }

    let Some(beta) = beta else {
        bail!("--beta is required unless --hard is given");
    };
    let inst = TopKInstance::new(values, costs, budget, beta)?;
    let cfg = SinkhornConfig {
        max_iterations,
        tolerance,
        init_strategy: init.into(),
        initial_dual,
    };
    let result = soft_topk_forward(&inst, &cfg)?;
    let spent: f64 = result.mask.iter().zip(&inst.costs).map(|(m, c)| m * c).sum();
    io::write_vector_fixed(output, &result.mask, 6)?;
    if let Some(path) = duals_out {
        let mut duals = Vec::with_capacity(1 + result.dual_nu.len());
        duals.push(result.dual_mu);
        duals.extend_from_slice(&result.dual_nu);
        io::write_vector(path, &duals)?;
    }
    println!(
        "budget_spent={spent} iterations={} converged={}",
        result.iterations, result.converged
    );
    Ok(0)
}

/// Persists metrics and masks after every epoch, atomically per file.
struct ArtifactWriter {
    dir: PathBuf,
    rows: Vec<MetricsRow>,
    n_units: usize,
}

impl EpochObserver for ArtifactWriter {
    fn on_epoch(&mut self, row: &MetricsRow, support: &[usize]) -> sparsekit::Result<()> {
        self.rows.push(row.clone());
        io::write_metrics_csv(&self.dir.join("metrics.csv"), &self.rows)?;
        io::write_archive_epoch(&self.dir.join("masks"), row.epoch, support, self.n_units)?;
        Ok(())
    }
}

fn cmd_train(config_path: &Path, output_dir: Option<&Path>) -> Result<i32> {
    let mut experiment = config::load(config_path)?;
    let out_dir = output_dir
        .map(Path::to_path_buf)
        .or_else(|| experiment.output_dir.clone())
        .context("no output directory: set output_dir in the config or pass --output-dir")?;
    let out_dir = resolve_out(&out_dir);
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let dataset = Dataset::build(&experiment.dataset)?;
    let mut observer = ArtifactWriter {
        dir: out_dir.clone(),
        rows: Vec::new(),
        n_units: experiment.group.n_units(),
    };
    let outcome = train(
        &experiment.model,
        &dataset,
        &mut experiment.rule,
        &experiment.schedule,
        &experiment.optimizer,
        &experiment.group,
        experiment.seed,
        &mut observer,
    )?;
    io::write_vector(&out_dir.join("params.txt"), &outcome.final_params)?;

    if outcome.diverged {
        eprintln!(
            "error: training diverged after {} completed epochs; last finite state saved to {}",
            outcome.metrics.len(),
            out_dir.display()
        );
        return Ok(3);
    }
    println!(
        "completed epochs={} final_sparsity={} output={}",
        outcome.metrics.len(),
        outcome
            .metrics
            .last()
            .map(|r| r.realized_sparsity.to_string())
            .unwrap_or_else(|| "n/a".into()),
        out_dir.display()
    );
    Ok(0)
}

fn cmd_bench_sinkhorn(settings: &BenchSettings, output: &Path) -> Result<i32> {
    let records = bench::run(settings)?;
    let mut csv = String::from("beta,strategy,median_iterations,median_wall_ms\n");
    for r in &records {
        let line = format!(
            "{},{},{},{:.4}",
            r.beta,
            bench::strategy_name(r.strategy),
            r.median_iterations,
            r.median_wall_ms
        );
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    io::write_atomic(output, &csv)?;

    // All strategies share one fixed point per instance; solving past the
    // stopping plateau makes the residual gap visible.
    let deep = BenchSettings {
        tolerance: settings.tolerance.min(1e-15),
        max_iterations: settings.max_iterations.max(50_000),
        ..settings.clone()
    };
    for &beta in &settings.betas {
        let gap = bench::mask_agreement_gap(&deep, beta)?;
        println!("agreement beta={beta} max_gap={gap:e}");
    }
    Ok(0)
}

fn parse_window(window: &str) -> Result<(usize, usize)> {
    let (a, b) = window
        .split_once(':')
        .context("window must look like A:B")?;
    let a: usize = a.trim().parse().context("window start")?;
    let b: usize = b.trim().parse().context("window end")?;
    if b < a {
        bail!("window end {b} before start {a}");
    }
    Ok((a, b))
}

fn indicator(support: &[usize], units: usize) -> Vec<bool> {
    let mut ind = vec![false; units];
    for &i in support {
        ind[i] = true;
    }
    ind
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite medians"));
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

fn cmd_analyze(archives: &[PathBuf], output: &Path, window: Option<&str>) -> Result<i32> {
    let window = window.map(parse_window).transpose()?;
    let mut csv = String::from("run,epoch,corr_final,corr_prev\n");
    let mut shared_units: Option<usize> = None;

    for dir in archives {
        let (units, supports) = io::read_mask_archive(dir)?;
        match shared_units {
            None => shared_units = Some(units),
            Some(expected) if expected != units => {
                bail!(
                    "{}: archive has {units} units, expected {expected}",
                    dir.display()
                );
            }
            _ => {}
        }
        if supports.is_empty() {
            bail!("{}: archive holds no epochs", dir.display());
        }
        let run = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let indicators: Vec<Vec<bool>> = supports.iter().map(|s| indicator(s, units)).collect();
        let final_ind = indicators.last().expect("non-empty archive");

        let mut windowed = Vec::new();
        for (epoch, ind) in indicators.iter().enumerate() {
            let corr_final = mask_pearson(ind, final_ind).ok();
            let corr_prev = if epoch == 0 {
                None
            } else {
                mask_pearson(ind, &indicators[epoch - 1]).ok()
            };
            let fmt = |c: Option<f64>| c.map(|c| c.to_string()).unwrap_or_default();
            csv.push_str(&format!(
                "{run},{epoch},{},{}\n",
                fmt(corr_final),
                fmt(corr_prev)
            ));
            if let (Some((a, b)), Some(c)) = (window, corr_prev) {
                if (a..=b).contains(&epoch) {
                    windowed.push(c);
                }
            }
        }
        if window.is_some() {
            match median(windowed) {
                Some(m) => println!("median_corr_prev run={run} value={m}"),
                None => println!("median_corr_prev run={run} value=undefined"),
            }
        }
    }
    io::write_atomic(output, &csv)?;
    Ok(0)
}
