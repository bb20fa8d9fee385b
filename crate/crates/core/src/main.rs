use std::path::PathBuf;
use std::process::ExitCode;

use cdr_pinn::cli::{self, RunOptions, Target};
use cdr_pinn::trainer::Experiment;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdr-pinn", version, about = "Curriculum-weighted PINNs for singularly perturbed PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a preset or a config file and write its artifacts.
    Run {
        /// Preset name, key=value config file, or a run_meta.json to replay.
        target: String,
        /// Use the reference iteration budgets instead of the CI-scale ones.
        #[arg(long)]
        full_scale: bool,
        /// Output root (defaults to $CDR_PINN_OUT or ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip SVG plots.
        #[arg(long)]
        no_svg: bool,
        /// Config overrides, `--key=value`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Collect metrics.json and run_meta.json from run directories.
    Summarize {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Output CSV path.
        #[arg(short, long, default_value = "summary.csv")]
        output: PathBuf,
    },
    /// Run a 1D sampling experiment: loss_distribution,
    /// dense_layer_sampling or region_rejection.
    Diagnose {
        experiment: String,
        #[arg(long)]
        full_scale: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Print the available presets.
    ListPresets,
}

/// Pulls the runner's own flags out of a trailing argument list.
fn split_flags(args: Vec<String>, full_scale: &mut bool, out: &mut Option<PathBuf>, no_svg: &mut bool) -> Vec<String> {
    let mut rest = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--full-scale" => *full_scale = true,
            "--no-svg" => *no_svg = true,
            "--out" => *out = it.next().map(PathBuf::from),
            _ => match a.strip_prefix("--out=") {
                Some(p) => *out = Some(PathBuf::from(p)),
                None => rest.push(a),
            },
        }
    }
    rest
}

fn run(cli: Cli) -> cdr_pinn::Result<()> {
    match cli.command {
        Command::Run {
            target,
            mut full_scale,
            mut out,
            mut no_svg,
            overrides,
        } => {
            let overrides = split_flags(overrides, &mut full_scale, &mut out, &mut no_svg);
            let overrides = cli::parse_overrides(&overrides)?;
            let preset = cli::resolve_target(&Target::parse(&target), &overrides, full_scale)?;
            let root = out.unwrap_or_else(cli::output_root);
            let rows = cli::run_preset(&preset, &root, RunOptions { svg: !no_svg })?;
            if !rows.is_empty() {
                cli::write_summary(&rows, std::io::stdout())?;
            }
            eprintln!("artifacts in {}", root.join(&preset.name).display());
        }
        Command::Summarize { dirs, output } => {
            let rows = cli::summarize(&dirs)?;
            cli::write_summary(&rows, std::io::BufWriter::new(std::fs::File::create(&output)?))?;
            eprintln!("wrote {} rows to {}", rows.len(), output.display());
        }
        Command::Diagnose {
            experiment,
            mut full_scale,
            mut out,
            overrides,
        } => {
            let mut no_svg = false;
            let overrides = split_flags(overrides, &mut full_scale, &mut out, &mut no_svg);
            let name = experiment.strip_prefix("diag_").unwrap_or(&experiment);
            let experiment: Experiment = name.parse()?;
            let mut config = cli::diagnostic_config(full_scale);
            for (k, v) in cli::parse_overrides(&overrides)? {
                cli::apply_key(&mut config, &k, &v)?;
            }
            let dir = out.unwrap_or_else(cli::output_root).join(format!("diag_{experiment}"));
            let report = cdr_pinn::trainer::run_diagnostics(&config, experiment, &dir)?;
            for r in &report.region_runs {
                println!(
                    "cut={} final_train_loss={:e} loss_outside_layer={:e}",
                    r.cut, r.final_train_loss, r.loss_outside_layer
                );
            }
            for f in &report.files {
                println!("{}", f.display());
            }
        }
        Command::ListPresets => {
            for (name, description) in cli::list_presets() {
                println!("{name:<28} {description}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
