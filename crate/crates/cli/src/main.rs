//! `fsvar` command line.
//!
//! Every failure ends with a single line `error[<code>]: <message>` on
//! stderr, where `<code>` is one of `usage`, `config`, `data`, `spec`,
//! `numerical`, `format` or `io`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fsvar::analysis::{factor_volatility_path, impulse_response, variance_shares, variance_shares_at_horizon, QuantileTable};
use fsvar::config::Config;
use fsvar::gibbs::{getting_it_right, random_truth, run_chain, run_chain_with_threads, simulate_panel, DrawStore, GirSettings, StoreMeta};
use fsvar::ingest::{ingest, monthly_dates, write_panel};
use fsvar::model::{spectral_radius, Group};
use fsvar::rng::seeded;
use fsvar::stats::{mean, quantiles, split_rhat, variance};
use fsvar::{Error, Result};

const DRAWS_FILE: &str = "draws.fsv";

#[derive(Parser)]
#[command(name = "fsvar", version, about = "Bayesian VAR with factor stochastic volatility")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `mcmc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args, Clone)]
struct Summaries {
    /// Draw store to read; defaults to `<output-dir>/draws.fsv`.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Comma-separated probability levels, e.g. `0.05,0.5,0.95`.
    #[arg(long, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic panel and write it with its truth and config.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 6)]
        series: usize,
        #[arg(long, default_value_t = 400)]
        periods: usize,
    },
    /// Run the sampler and write the retained draws.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Data CSV; overrides `data.path`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the draws as long-format CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Quantiles of impulse responses to the factor shock.
    Irf {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        summaries: Summaries,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Quantiles of the factor share of innovation variance.
    Fevd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        summaries: Summaries,
        /// Multi-step shares up to this horizon at `analysis.reference_time`
        /// instead of one-step shares at every date.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Quantiles of the factor variance path.
    Volpath {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        summaries: Summaries,
    },
    /// Print chain diagnostics for the monitored scalars.
    Summary {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        summaries: Summaries,
    },
    /// Run the getting-it-right consistency test and write its report.
    GirTest {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        cycles: usize,
        #[arg(long, default_value_t = 50)]
        thin: usize,
        #[arg(long, default_value_t = 3)]
        series: usize,
        #[arg(long, default_value_t = 40)]
        periods: usize,
    },
}

fn fail(code: &str, message: &str) -> ExitCode {
    eprintln!("error[{code}]: {}", message.replace('\n', " "));
    ExitCode::from(match code {
        "usage" => 2,
        "config" => 3,
        "data" => 4,
        "spec" => 5,
        "numerical" => 6,
        "format" => 7,
        _ => 8,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            return fail("usage", line);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), &e.to_string()),
    }
}

impl Common {
    fn config(&self) -> Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::load(path).map_err(|e| match e {
                Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
                other => other,
            })?,
            None => Config::default().canonicalize()?,
        };
        if let Some(seed) = self.seed {
            config.mcmc.seed = seed;
        }
        if let Some(threads) = self.threads {
            config.mcmc.threads = threads;
        }
        Ok(config)
    }

    fn output(&self, name: &str) -> Result<BufWriter<File>> {
        std::fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join(name);
        let file = File::create(&path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Ok(BufWriter::new(file))
    }
}

impl Summaries {
    fn store(&self, common: &Common) -> Result<DrawStore> {
        let path = self.store.clone().unwrap_or_else(|| common.output_dir.join(DRAWS_FILE));
        read_store(&path)
    }

    fn grid(&self, config: &Config) -> Result<Vec<f64>> {
        let grid = self.quantiles.clone().unwrap_or_else(|| config.analysis.quantiles.clone());
        if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("--quantiles must increase within [0, 1]".into()));
        }
        Ok(grid)
    }
}

fn read_store(path: &Path) -> Result<DrawStore> {
    let file = File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    DrawStore::read_binary(BufReader::new(file))
}

fn finish(mut w: BufWriter<File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn write_table(common: &Common, name: &str, table: &QuantileTable) -> Result<()> {
    let mut w = common.output(name)?;
    table.write_csv(&mut w)?;
    finish(w)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { common, series, periods } => simulate(&common, series, periods),
        Command::Estimate { common, data, csv } => estimate(&common, data.as_deref(), csv),
        Command::Irf { common, summaries, horizon } => {
            let config = common.config()?;
            let store = summaries.store(&common)?;
            let horizon = horizon.unwrap_or(config.analysis.horizon);
            let scale = config.analysis.shock_scale(&store.groups);
            let irf = impulse_response(&store, horizon, &scale)?;
            if irf.excluded > 0 {
                eprintln!("{} of {} draws excluded: zero mean equity loading", irf.excluded, store.n_draws);
            }
            let table = irf.responses.summarize(&store.names, &summaries.grid(&config)?)?;
            write_table(&common, "irf.csv", &table)
        }
        Command::Fevd { common, summaries, horizon } => {
            let config = common.config()?;
            let store = summaries.store(&common)?;
            let grid = summaries.grid(&config)?;
            let table = match horizon {
                None => variance_shares(&store).summarize(&store.names, &grid)?,
                Some(h) => {
                    // one row per step, each summarizing the cumulative share
                    let mut rows = Vec::new();
                    for step in 1..=h {
                        let shares = variance_shares_at_horizon(&store, config.analysis.reference_time, step)?;
                        let mut t = shares.summarize(&store.names, &grid)?;
                        t.rows.iter_mut().for_each(|r| r.index = step);
                        rows.extend(t.rows);
                    }
                    rows.sort_by_key(|r| store.names.iter().position(|n| *n == r.variable));
                    QuantileTable { grid, rows }
                }
            };
            write_table(&common, "fevd.csv", &table)
        }
        Command::Volpath { common, summaries } => {
            let config = common.config()?;
            let store = summaries.store(&common)?;
            if store.dims.factors == 0 {
                return Err(Error::Parameter("store has no factors".into()));
            }
            let names: Vec<String> = (1..=store.dims.factors).map(|i| format!("f{i}")).collect();
            let table = factor_volatility_path(&store).summarize(&names, &summaries.grid(&config)?)?;
            write_table(&common, "volpath.csv", &table)
        }
        Command::Summary { common, summaries } => summary(&common, &summaries),
        Command::GirTest { common, cycles, thin, series, periods } => {
            let config = common.config()?;
            let spec = config.model_spec()?;
            let settings = GirSettings {
                n_series: series,
                n_times: periods,
                cycles,
                thin,
                seed: config.mcmc.seed,
                lambda_rate_factor: 1.0,
            };
            let report = getting_it_right(&spec, &settings)?;
            let mut w = common.output("gir.csv")?;
            {
                let mut out = csv::Writer::from_writer(&mut w);
                out.write_record(["parameter", "ks_statistic", "p_value", "prior_mean", "prior_sd", "chain_mean", "chain_sd"])?;
                for r in &report.rows {
                    out.write_record([
                        r.name.clone(),
                        r.statistic.to_string(),
                        r.p_value.to_string(),
                        r.prior_mean.to_string(),
                        r.prior_sd.to_string(),
                        r.chain_mean.to_string(),
                        r.chain_sd.to_string(),
                    ])?;
                }
                out.flush()?;
            }
            finish(w)?;
            if !report.rows.is_empty() {
                println!("{} parameters, min p {:.4}", report.rows.len(), report.min_p_value());
            }
            Ok(())
        }
    }
}

fn simulate(common: &Common, series: usize, periods: usize) -> Result<()> {
    let mut config = common.config()?;
    let spec = config.model_spec()?;
    if series == 0 {
        return Err(Error::Parameter("--series must be positive".into()));
    }
    let dims = spec.dims(series, 0);
    let mut rng = seeded(config.mcmc.seed);
    let truth = random_truth(dims, periods, &mut rng);
    let (mut panel, truth) = simulate_panel(&spec, &truth, periods, &mut rng)?;
    panel.dates = monthly_dates(2000, periods);
    // the first series carries the equity tag so the default shock rule applies
    panel.groups = (0..series)
        .map(|j| Group {
            country: String::new(),
            kind: if j == 0 { config.analysis.equity_kind.clone() } else { String::new() },
        })
        .collect();

    let mut w = common.output("panel.csv")?;
    write_panel(&panel, &mut w)?;
    finish(w)?;

    let mut store = DrawStore::new(
        StoreMeta {
            seed: config.mcmc.seed,
            burn_in: 0,
            keep: 1,
            thin: 1,
            wall_time_secs: 0.0,
        },
        dims,
        truth.n_times(),
        panel.names.clone(),
        panel.groups.clone(),
    );
    store.push(&truth, spectral_radius(&truth));
    let mut w = common.output("truth.fsv")?;
    store.write_binary(&mut w)?;
    finish(w)?;

    config.data.path = Some("panel.csv".into());
    config.data.exogenous.clear();
    config.transforms = Default::default();
    config.groups = panel.names.iter().cloned().zip(panel.groups.iter().cloned()).collect();
    let mut w = common.output("config.toml")?;
    w.write_all(config.to_toml()?.as_bytes())?;
    finish(w)
}

fn estimate(common: &Common, data: Option<&Path>, csv: bool) -> Result<()> {
    let config = common.config()?;
    // a relative data path in the config is taken relative to the config file
    let data_path = match (data, &config.data.path, &common.config) {
        (Some(p), _, _) => Some(p.to_path_buf()),
        (None, Some(p), Some(cfg)) => Some(cfg.parent().unwrap_or(Path::new(".")).join(p)),
        _ => None,
    };
    let panel = ingest(data_path.as_deref(), &config)?;
    let spec = config.model_spec()?;
    let store = match config.mcmc.threads {
        0 => run_chain(&panel, &spec)?,
        n => run_chain_with_threads(&panel, &spec, n)?,
    };
    let mut w = common.output(DRAWS_FILE)?;
    store.write_binary(&mut w)?;
    finish(w)?;
    if csv {
        let mut w = common.output("draws.csv")?;
        store.write_csv(&mut w)?;
        finish(w)?;
    }
    eprintln!(
        "{} draws of {} series in {:.1}s",
        store.n_draws,
        store.names.len(),
        store.meta.wall_time_secs
    );
    Ok(())
}

/// Monitored scalars: `(name, draws)`.
fn monitored(store: &DrawStore) -> Vec<(String, Vec<f64>)> {
    let n = store.n_draws;
    let column = |values: &[f64], width: usize, e: usize| -> Vec<f64> { (0..n).map(|d| values[d * width + e]).collect() };
    let (m, q, lags) = (store.dims.m, store.dims.factors, store.dims.lags);
    const PARAMS: [&str; 3] = ["mu", "phi", "xi"];
    let mut out = Vec::new();
    for i in 0..q {
        for j in 1..m {
            out.push((format!("{}~f{}", store.names[j], i + 1), column(&store.loadings, m * q, i * m + j)));
        }
        for (p, label) in PARAMS.iter().enumerate() {
            out.push((format!("f{}.{label}", i + 1), column(&store.factor_params, 3 * q, i * 3 + p)));
        }
    }
    for j in 0..m {
        for (p, label) in PARAMS.iter().enumerate() {
            out.push((format!("{}.{label}", store.names[j]), column(&store.idio_params, 3 * m, j * 3 + p)));
        }
    }
    for p in 0..lags {
        out.push((format!("lambda_sq.lag{}", p + 1), column(&store.lambda_sq, lags, p)));
    }
    out.push(("spectral_radius".into(), store.spectral_radius.clone()));
    out
}

fn summary(common: &Common, summaries: &Summaries) -> Result<()> {
    let config = common.config()?;
    let store = summaries.store(common)?;
    if store.n_draws == 0 {
        return Err(Error::Format("store has no draws".into()));
    }
    let grid = summaries.grid(&config)?;
    let stdout = std::io::stdout();
    let mut out = csv::Writer::from_writer(stdout.lock());
    let mut header = vec!["parameter".to_string(), "mean".into(), "sd".into()];
    header.extend(grid.iter().map(|&p| fsvar::analysis::grid_label(p)));
    header.push("split_rhat".into());
    out.write_record(&header)?;
    let mut worst: f64 = 0.0;
    for (name, draws) in monitored(&store) {
        let rhat = split_rhat(&draws);
        if rhat.is_finite() {
            worst = worst.max(rhat);
        }
        let mut rec = vec![name, mean(&draws).to_string(), variance(&draws).sqrt().to_string()];
        rec.extend(quantiles(&draws, &grid)?.iter().map(|v| v.to_string()));
        rec.push(rhat.to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    eprintln!("{} draws, max split R-hat {worst:.3}{}", store.n_draws, if worst < 1.1 { "" } else { " (above 1.1)" });
    Ok(())
}
