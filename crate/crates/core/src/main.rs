use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use netexp::harness::{
    apply_option, parse_config, records_to_jsonl, run_table, write_outputs, write_simulations, Command, RunSpec,
};
use netexp::{Error, Result};

/// Simulate network interference, test exposure mappings and estimate
/// direct effects.
#[derive(Debug, Parser)]
#[command(name = "netexp", version)]
struct Cli {
    /// simulate, test-validity, estimate-direct, reproduce-table1 or reproduce-table2
    #[arg(long)]
    command: Option<String>,
    /// Comma separated settings (S1, S2, S3, DIRECT)
    #[arg(long)]
    setting: Option<String>,
    /// Comma separated sample sizes
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Quantile cells of the learned exposure
    #[arg(long = "L")]
    cells: Option<String>,
    /// Cross-fitting folds, or "auto"
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    hidden_width: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// pooled (dml2) or fold-average (dml1)
    #[arg(long)]
    aggregation: Option<String>,
    /// greater (one-sided) or two-sided
    #[arg(long)]
    alternative: Option<String>,
    /// own (condition the test on own treatment and covariate) or none
    #[arg(long)]
    controls: Option<String>,
    /// hajek or ht weights for the direct effect
    #[arg(long)]
    weighting: Option<String>,
    /// cell-share, simulated or threshold exposure propensity for the direct effect
    #[arg(long)]
    exposure_propensity: Option<String>,
    /// key = value file with any of the options above
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exit with a nonzero status when an acceptance check fails
    #[arg(long)]
    check: bool,
}

impl Cli {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        };
        push("setting", &self.setting);
        push("n", &self.n);
        push("reps", &self.reps);
        push("seed", &self.seed);
        push("L", &self.cells);
        push("folds", &self.folds);
        push("hidden-width", &self.hidden_width);
        push("lr", &self.lr);
        push("epochs", &self.epochs);
        push("workers", &self.workers);
        push("aggregation", &self.aggregation);
        push("alternative", &self.alternative);
        push("controls", &self.controls);
        push("weighting", &self.weighting);
        push("exposure-propensity", &self.exposure_propensity);
        if let Some(p) = &self.out {
            out.push(("out", p.display().to_string()));
        }
        if self.check {
            out.push(("check", "true".to_string()));
        }
        out
    }
}

fn build_spec(cli: &Cli) -> Result<RunSpec> {
    let file_pairs = match &cli.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => Vec::new(),
    };
    let command_name = cli
        .command
        .clone()
        .or_else(|| file_pairs.iter().find(|(k, _)| k == "command").map(|(_, v)| v.clone()))
        .ok_or_else(|| Error::InvalidArgument("no command given (use --command or a config file)".into()))?;
    let command: Command = command_name.parse()?;
    let mut spec = RunSpec::for_command(command);
    for (k, v) in &file_pairs {
        apply_option(&mut spec, k, v)?;
    }
    for (k, v) in cli.pairs() {
        apply_option(&mut spec, k, &v)?;
    }
    spec.validate()?;
    Ok(spec)
}

fn run(cli: &Cli) -> Result<bool> {
    let spec = build_spec(cli)?;
    if spec.command == Command::Simulate {
        let dir = spec.out.clone().unwrap_or_else(|| PathBuf::from("."));
        for path in write_simulations(&spec, &dir)? {
            println!("{}", path.display());
        }
        return Ok(true);
    }
    let output = run_table(&spec)?;
    match &spec.out {
        Some(dir) => write_outputs(dir, &output)?,
        None => print!("{}", records_to_jsonl(&output.records)),
    }
    print!("{}", output.report.render());
    eprintln!("wall time {:.1}s", output.report.wall_time_secs);
    let reproduce = matches!(spec.command, Command::ReproduceTable1 | Command::ReproduceTable2);
    if reproduce || spec.check {
        for line in &output.checks {
            println!("{}", line.render());
        }
    }
    Ok(!(spec.check && output.checks.iter().any(|c| c.failed())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
