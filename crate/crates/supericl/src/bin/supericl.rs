use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use supericl::config::{BackendSpec, ExperimentConfig, Mode};
use supericl::report::{
    emit_failure, emit_report, prepare_output_dir, read_report, summarize, write_csv,
};
use supericl::runner::{run_ablation_grid, run_multi_seed, sweep_num_examples, DEFAULT_SEEDS};
use supericl::{Experiment, HarnessError, RunArtifact, RunFailure};

#[derive(Parser)]
#[command(
    name = "supericl",
    version,
    about = "Run SuperICL, ICL and plug-in-only classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(Common),
    /// Repeat the run over several context-sampling seeds and report the variance.
    MultiSeed {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
        seeds: Vec<u64>,
    },
    /// Sweep the number of in-context examples.
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
    },
    /// Run the context / confidence / reference ablation grid.
    Ablate(Common),
    /// Print a summary of a finished run.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "supericl", alias = "super-icl")]
    SuperIcl,
    Icl,
    #[value(name = "plugin-only")]
    PluginOnly,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML, or a JSON snapshot).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Oracle backend override: gold, echo or threshold[:tau].
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dump_prompts: bool,
    #[arg(long)]
    overwrite: bool,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(k) = self.k {
            cfg.num_examples = k;
        }
        if let Some(mode) = self.mode {
            cfg.mode = match mode {
                ModeArg::SuperIcl => Mode::SuperIcl,
                ModeArg::Icl => Mode::Icl,
                ModeArg::PluginOnly => Mode::PluginOnly,
            };
        }
        if let Some(b) = &self.backend {
            cfg.backend = BackendSpec::parse_flag(b)?;
        }
        if let Some(c) = &self.cache_dir {
            cfg.cache_dir = Some(c.clone());
        }
        if self.dump_prompts {
            cfg.dump_prompts = true;
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .ok_or_else(|| {
                HarnessError::Config("no output directory: pass --out or set output_dir".into())
            })?;
        cfg.output_dir = Some(out.clone());
        Ok((cfg, out))
    }
}

fn finish<T>(result: Result<T, RunFailure>, out: &Path) -> Result<T, HarnessError> {
    result.map_err(|failure| {
        if let Err(e) = emit_failure(&failure, out) {
            eprintln!("warning: could not flush partial results: {e}");
        }
        failure.error
    })
}

fn emit_all(
    artifacts: &[RunArtifact],
    dirs: impl IntoIterator<Item = PathBuf>,
    overwrite: bool,
) -> Result<(), HarnessError> {
    for (art, dir) in artifacts.iter().zip(dirs) {
        emit_report(art, &dir, overwrite)?;
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run(common) => {
            let (cfg, out) = common.load()?;
            prepare_output_dir(&out, supericl::report::REPORT_FILE, common.overwrite)?;
            let exp = Experiment::load(cfg)?;
            let art = finish(exp.run(&exp.default_params()), &out)?;
            emit_report(&art, &out, true)?;
            println!("{}", summarize(&art.report));
            println!(
                "cache hits={} misses={} backend calls={}",
                art.stats.cache_hits, art.stats.cache_misses, art.stats.backend_calls
            );
        }
        Command::MultiSeed { common, seeds } => {
            let (cfg, out) = common.load()?;
            prepare_output_dir(&out, "multi_seed.csv", common.overwrite)?;
            let exp = Experiment::load(cfg)?;
            let table = finish(run_multi_seed(&exp, &exp.default_params(), &seeds), &out)?;
            emit_all(
                &table.artifacts,
                seeds.iter().map(|s| out.join(format!("seed_{s}"))),
                true,
            )?;
            write_csv(&out.join("multi_seed.csv"), &table.rows)?;
            let summary = serde_json::to_string_pretty(&table).expect("table serializes");
            std::fs::write(out.join("multi_seed.json"), summary + "\n")
                .map_err(|e| HarnessError::io(&out, e))?;
            for row in &table.rows {
                println!("seed {:>4}  accuracy {:.2}", row.seed, row.accuracy * 100.0);
            }
            println!("variance {:.2}", table.variance);
        }
        Command::SweepK { common, ks } => {
            let (cfg, out) = common.load()?;
            prepare_output_dir(&out, "sweep.csv", common.overwrite)?;
            let exp = Experiment::load(cfg)?;
            let (rows, arts) = finish(sweep_num_examples(&exp, &exp.default_params(), &ks), &out)?;
            emit_all(&arts, ks.iter().map(|k| out.join(format!("k_{k}"))), true)?;
            write_csv(&out.join("sweep.csv"), &rows)?;
            for row in &rows {
                println!("k {:>3}  accuracy {:.2}", row.k, row.accuracy * 100.0);
            }
        }
        Command::Ablate(common) => {
            let (cfg, out) = common.load()?;
            prepare_output_dir(&out, "ablation.csv", common.overwrite)?;
            let exp = Experiment::load(cfg)?;
            let (rows, arts) = finish(run_ablation_grid(&exp, &exp.default_params()), &out)?;
            emit_all(
                &arts,
                (0..rows.len()).map(|i| out.join(format!("row_{i}"))),
                true,
            )?;
            write_csv(&out.join("ablation.csv"), &rows)?;
            for row in &rows {
                let mark = |b: bool| if b { "x" } else { "-" };
                println!(
                    "{:<5} ctxt {} conf {} ref {}  accuracy {:.2}",
                    row.name,
                    mark(row.context),
                    mark(row.confidence),
                    mark(row.reference),
                    row.accuracy * 100.0
                );
            }
        }
        Command::Report { out, format } => {
            let report = read_report(&out)?;
            match format {
                Format::Json => {
                    println!("{}", summarize(&report));
                    let aggregates = serde_json::json!({
                        "n": report.n,
                        "accuracy": report.accuracy,
                        "mcc": report.mcc,
                        "pct_overridden": report.pct_overridden,
                        "overridden_accuracy": report.overridden_accuracy,
                    });
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&aggregates).expect("json")
                    );
                }
                Format::Csv => {
                    let path = out.join("records.csv");
                    let text =
                        std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
                    print!("{text}");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
