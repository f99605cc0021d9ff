use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use fedstorm::data::{generate_series, read_field_file, write_field_file, DataProfile};
use fedstorm::experiment::{
    grid_cells, metrics_csv, run_grid, write_run_outputs, ExperimentConfig, MetricsRow, RunOutcome, METRICS_HEADER,
};
use fedstorm::federation::Federation;
use fedstorm::{Error, Result};

/// Federated learning poisoning simulator for gridded temperature forecasting.
#[derive(Parser)]
#[command(name = "fedstorm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic temperature series as an FTSR file.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Series length; defaults to the profile's length.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, alias = "data-profile", default_value = "desk")]
        profile: DataProfile,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one federated experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated malicious client ids, replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        malicious: Option<Vec<usize>>,
        #[arg(long)]
        save_rounds: bool,
    },
    /// Run the clean cell and the twelve attack cells, optionally with the trimmed-mean defense.
    Grid {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base experiment config; by default the preset matching the data's grid size.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        defense: bool,
        /// Number of grid cells run concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Merge metrics CSVs (files or run directories) into one table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            seed,
            steps,
            profile,
            out,
        } => generate(seed, steps, profile, &out),
        Command::Run {
            config,
            out,
            malicious,
            save_rounds,
        } => run(&config, out, malicious, save_rounds),
        Command::Grid {
            data,
            out,
            config,
            defense,
            parallel,
        } => grid(&data, &out, config.as_deref(), defense, parallel),
        Command::Report { inputs, out } => report(&inputs, out.as_deref()),
    }
}

fn generate(seed: u64, steps: Option<usize>, profile: DataProfile, out: &Path) -> Result<()> {
    let steps = steps.unwrap_or_else(|| profile.default_steps());
    if steps < 3 {
        return Err(Error::Config(format!(
            "{steps} steps cannot form a sample; need at least 3"
        )));
    }
    let g = profile.grid_size();
    let series = generate_series(seed, steps, g, g)?;
    write_field_file(out, &series)?;
    eprintln!("wrote {steps} steps of {g}x{g} to {}", out.display());
    Ok(())
}

fn run(config_path: &Path, out: Option<PathBuf>, malicious: Option<Vec<usize>>, save_rounds: bool) -> Result<()> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(dir) = out {
        config.output_dir = dir;
    }
    if let Some(m) = malicious {
        config.threat.malicious_clients = m;
    }
    config.save_rounds |= save_rounds;
    config.validate()?;
    let series = config.series()?;
    let datasets = config.datasets(&series)?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let start = Instant::now();
    let mut fed = Federation::new(&config.federation, &config.model, &datasets, &config.normalization)?;
    eprintln!("round 0: mse {:.4} K^2 (untrained)", fed.initial().report.pooled.mse);
    while !fed.is_finished() {
        let r = fed.run_round(&config.threat)?;
        let m = &r.metrics.pooled;
        eprintln!(
            "round {}: mse {:.4} K^2, mean bias {:+.4} K ({:.0?})",
            r.round + 1,
            m.mse,
            m.mean_bias,
            start.elapsed()
        );
        if config.save_rounds {
            fed.global()
                .save_checkpoint(&dir.join(format!("round_{:02}.unp1", fed.rounds_done())))?;
        }
    }
    fed.global().save_checkpoint(&dir.join("model.unp1"))?;
    write_run_outputs(&dir, &config, &RunOutcome::from(&fed))?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn grid(data: &Path, out: &Path, config: Option<&Path>, defense: bool, parallel: usize) -> Result<()> {
    let series = read_field_file(data)?;
    let mut base = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None if series.height == DataProfile::Desk.grid_size() => ExperimentConfig::desk(),
        None => ExperimentConfig::default(),
    };
    base.data = Some(data.to_path_buf());
    base.output_dir = out.to_path_buf();
    base.validate()?;
    let datasets = base.datasets(&series)?;
    let cells = grid_cells(base.federation.total_rounds, defense);
    fs::create_dir_all(out)?;
    let start = Instant::now();
    let results = run_grid(&base, &datasets, &cells, parallel, &|cell, r| match r {
        Ok(o) => eprintln!(
            "{}: mse {:.4} K^2, mean bias {:+.4} K ({:.0?})",
            cell.slug(),
            o.final_eval.report.pooled.mse,
            o.final_eval.report.pooled.mean_bias,
            start.elapsed()
        ),
        Err(e) => eprintln!("{}: failed: {e}", cell.slug()),
    });
    let mut rows = Vec::new();
    let mut first_err = None;
    for (cell, r) in cells.iter().zip(results) {
        match r {
            Ok(o) => rows.push(MetricsRow::new(
                cell.aggregation.rule,
                &cell.threat,
                o.final_eval.report.pooled,
            )),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    fs::write(out.join("grid.csv"), metrics_csv(&rows))?;
    eprintln!("wrote {} rows to {}", rows.len(), out.join("grid.csv").display());
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn report(inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut lines = Vec::new();
    for input in inputs {
        let files: Vec<PathBuf> = if input.is_dir() {
            ["grid.csv", "metrics.csv"]
                .iter()
                .map(|f| input.join(f))
                .filter(|p| p.is_file())
                .collect()
        } else {
            vec![input.clone()]
        };
        if files.is_empty() {
            return Err(Error::Malformed(format!("no metrics CSV in {}", input.display())));
        }
        for f in files {
            let text = fs::read_to_string(&f)?;
            let mut it = text.lines();
            if it.next() != Some(METRICS_HEADER) {
                return Err(Error::Malformed(format!("{} is not a metrics CSV", f.display())));
            }
            lines.extend(it.filter(|l| !l.is_empty()).map(str::to_string));
        }
    }
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for l in &lines {
        csv.push_str(l);
        csv.push('\n');
    }
    match out {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
