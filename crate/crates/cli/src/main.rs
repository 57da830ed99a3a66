use std::path::PathBuf;
use std::process::ExitCode;

use ccflow::cbf::ControllerMode;
use ccflow::flows::Variant;
use clap::{Args, Parser, Subcommand};

use ccflow_cli::diagnose::diagnose;
use ccflow_cli::error::{CliError, EXIT_OK};
use ccflow_cli::run::{apply_overrides, execute, write_outputs, Overrides};
use ccflow_cli::scenario::{builtin, load_scenario_seeded, to_toml, BUILTINS};

#[derive(Parser)]
#[command(
    name = "ccflow",
    version,
    about = "Distributed coupled-constraint optimization flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a flow or closed loop and write trace.csv and report.json.
    Run(RunArgs),
    /// Check connectivity, rank and consistency, and evaluate the gain bound.
    Diagnose(DiagnoseArgs),
    /// Inspect the built-in scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
}

/// Built-in scenario name or path to a TOML file, given positionally or
/// with `--scenario`.
#[derive(Args)]
struct Source {
    #[arg(value_name = "SCENARIO", required_unless_present = "scenario")]
    positional: Option<String>,
    #[arg(long, conflicts_with = "positional")]
    scenario: Option<String>,
}

impl Source {
    fn get(&self) -> &str {
        self.positional
            .as_deref()
            .or(self.scenario.as_deref())
            .expect("clap requires one of the two")
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the scenario seed (random problems are redrawn).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ControllerMode>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    k0: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    sat_band: Option<f64>,
    #[arg(long)]
    sat_slope: Option<f64>,
    #[arg(long)]
    tol_consensus: Option<f64>,
    /// Exit with status 5 when the consensus tolerance is never reached.
    #[arg(long)]
    require_convergence: bool,
    /// Print the report to stdout as well.
    #[arg(long)]
    print: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Disturbance bound D.
    #[arg(long, default_value_t = 0.0)]
    disturbance: f64,
    /// Margin eps added to the gain bound.
    #[arg(long, default_value_t = 0.1)]
    margin: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// List built-in scenario names.
    List,
    /// Write a built-in scenario as a fully explicit TOML file.
    Export {
        name: String,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<ControllerMode, String> {
    s.parse().map_err(|e: ccflow::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: ccflow::Error| e.to_string())
}

fn run(args: RunArgs) -> Result<i32, CliError> {
    let mut file = load_scenario_seeded(args.source.get(), args.seed)?;
    let overrides = Overrides {
        mode: args.mode,
        k0: args.k0,
        dt: args.dt,
        horizon: args.horizon,
        variant: args.variant,
        sat_band: args.sat_band,
        sat_slope: args.sat_slope,
        tol_consensus: args.tol_consensus,
    };
    apply_overrides(&mut file, &overrides)?;
    let output = execute(&file, args.require_convergence)?;
    write_outputs(&args.out_dir, &output)?;
    if args.print {
        println!("{}", serde_json::to_string_pretty(&output.report)?);
    }
    let r = &output.report;
    eprintln!(
        "{}: {} steps, max violation {:.3e}, convergence step {}",
        r.scenario,
        r.steps,
        r.max_violation,
        r.convergence_step
            .map_or("none".to_string(), |s| s.to_string())
    );
    Ok(output.exit_code)
}

fn diagnose_cmd(args: DiagnoseArgs) -> Result<i32, CliError> {
    let mut file = load_scenario_seeded(args.source.get(), args.seed)?;
    apply_overrides(
        &mut file,
        &Overrides {
            variant: args.variant,
            ..Overrides::default()
        },
    )?;
    let report = diagnose(&file, args.disturbance, args.margin)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    Ok(EXIT_OK)
}

fn scenario_cmd(cmd: ScenarioCommand) -> Result<i32, CliError> {
    match cmd {
        ScenarioCommand::List => {
            for name in BUILTINS {
                println!("{name}");
            }
        }
        ScenarioCommand::Export { name, output } => {
            let file = builtin(&name, None).ok_or_else(|| {
                CliError::Validation(vec![ccflow_cli::Issue {
                    line: None,
                    message: format!(
                        "unknown built-in scenario `{name}`; known: {}",
                        BUILTINS.join(", ")
                    ),
                }])
            })?;
            let text = to_toml(&file);
            match output {
                Some(path) => std::fs::write(&path, text).map_err(|e| CliError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?,
                None => print!("{text}"),
            }
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Diagnose(args) => diagnose_cmd(args),
        Command::Scenario(cmd) => scenario_cmd(cmd),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
