use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use paradiag::perfmodel::PerfInputs;
use paradiag_cli::{predict_json, psi_table, run, sweep, write_csv, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "paradiag", version, about = "Parallel-in-time θ-method solver with an α-circulant preconditioner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve consecutive windows described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory for CSV, JSON-lines and checkpoint output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one window for every (alpha, nt) pair.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        nts: Vec<usize>,
        /// CSV file; rows go to stdout without it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the circulant eigenvalue pairs and their ratio ψ.
    Psi {
        #[arg(long)]
        nt: usize,
        #[arg(long)]
        dt: f64,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict speedup and efficiency from iteration counts.
    Predict(PredictArgs),
}

#[derive(Args)]
struct PredictArgs {
    /// JSON file with the model inputs; overrides the flags.
    #[arg(long)]
    inputs: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    k_s: f64,
    #[arg(long, default_value_t = 1.0)]
    k_p: f64,
    #[arg(long, default_value_t = 1.0)]
    m_s: f64,
    #[arg(long, default_value_t = 1.0)]
    m_p: f64,
    #[arg(long, default_value_t = 1)]
    nx: usize,
    #[arg(long, default_value_t = 1)]
    nt: usize,
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    #[arg(long, default_value_t = 0.0)]
    t_c: f64,
    #[arg(long, default_value_t = 0.0)]
    t_b: f64,
    #[arg(long, default_value_t = 2.0)]
    core_penalty: f64,
}

impl PredictArgs {
    fn load(&self) -> Result<PerfInputs, CliError> {
        if let Some(path) = &self.inputs {
            let text = std::fs::read_to_string(path)?;
            return serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
        }
        Ok(PerfInputs {
            k_s: self.k_s,
            k_p: self.k_p,
            m_s: self.m_s,
            m_p: self.m_p,
            nx: self.nx,
            nt: self.nt,
            q: self.q,
            t_c: self.t_c,
            t_b: self.t_b,
            core_penalty: self.core_penalty,
        })
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let to_stdout = out.is_none() && cfg.output.csv_path.is_none();
            let outcome = run(&cfg, out.as_deref())?;
            if to_stdout {
                write_csv(&outcome.rows, io::stdout().lock())?;
            }
        }
        Command::Sweep { config, alphas, nts, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let rows = sweep(&cfg, &alphas, &nts, out.as_deref())?;
            if out.is_none() {
                write_csv(&rows, io::stdout().lock())?;
            }
        }
        Command::Psi { nt, dt, theta, alpha, out } => {
            let rows = psi_table(nt, dt, theta, alpha)?;
            match out {
                Some(path) => write_csv(&rows, std::fs::File::create(path)?)?,
                None => write_csv(&rows, io::stdout().lock())?,
            }
        }
        Command::Predict(args) => {
            let est = predict_json(&args.load()?)?;
            println!("{}", serde_json::to_string_pretty(&est)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
