use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use majperc_cli::{apply_spec_text, columns_help, run_and_write, CliError, Command, ExperimentSpec};

#[derive(Parser)]
#[command(name = "majperc", version, about = "Percolation experiments for majority dynamics on the square lattice")]
#[command(after_help = columns_help())]
struct Cli {
    /// Experiment file of `key=value` lines; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    spec: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Sub>,
}

#[derive(Subcommand)]
enum Sub {
    /// Run one trajectory and log every flip.
    Evolve(KeyArgs),
    /// Crossing probability at each (t, p).
    Sweep(KeyArgs),
    /// Crossing threshold at each t.
    PcCurve(KeyArgs),
    /// Covariance of the spins at two sites.
    Cov(KeyArgs),
    /// Run finite boxes until nothing can flip.
    Fixation(KeyArgs),
    /// Check the order between coupled processes.
    Couple(KeyArgs),
    /// Check stability of chains through enhanced sites.
    Enhance(KeyArgs),
    /// Exact law on a small box, or the FKG suite.
    Oracle(KeyArgs),
    /// Finite-size percolation certificate.
    Certify(KeyArgs),
    /// Failure probabilities across renormalization scales.
    Renorm(KeyArgs),
}

/// Every key of the experiment format, as a flag of the same name.
#[derive(Args, Default)]
struct KeyArgs {
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    p2: Option<String>,
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    replicas: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    check: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long = "max_replicas")]
    max_replicas: Option<String>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    c: Option<String>,
    #[arg(long)]
    n0: Option<String>,
    #[arg(long = "t_max")]
    t_max: Option<String>,
    #[arg(long)]
    l0: Option<String>,
    #[arg(long)]
    factor: Option<String>,
    #[arg(long = "k_max")]
    k_max: Option<String>,
    #[arg(long)]
    distance: Option<String>,
    #[arg(long)]
    svg: Option<String>,
    #[arg(long)]
    strict: Option<String>,
}

impl KeyArgs {
    fn pairs(&self) -> Vec<(&'static str, &String)> {
        let all: [(&'static str, &Option<String>); 27] = [
            ("p", &self.p),
            ("p2", &self.p2),
            ("t", &self.t),
            ("n", &self.n),
            ("lambda", &self.lambda),
            ("replicas", &self.replicas),
            ("seed", &self.seed),
            ("policy", &self.policy),
            ("output", &self.output),
            ("threads", &self.threads),
            ("delta", &self.delta),
            ("mode", &self.mode),
            ("grid", &self.grid),
            ("check", &self.check),
            ("tol", &self.tol),
            ("target", &self.target),
            ("max_replicas", &self.max_replicas),
            ("budget", &self.budget),
            ("c", &self.c),
            ("n0", &self.n0),
            ("t_max", &self.t_max),
            ("l0", &self.l0),
            ("factor", &self.factor),
            ("k_max", &self.k_max),
            ("distance", &self.distance),
            ("svg", &self.svg),
            ("strict", &self.strict),
        ];
        all.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }
}

fn build_spec(cli: &Cli) -> Result<ExperimentSpec, CliError> {
    let mut spec = ExperimentSpec::default();
    if let Some(path) = &cli.spec {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        apply_spec_text(&mut spec, &text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    }
    if let Some(sub) = &cli.command {
        let (command, args) = match sub {
            Sub::Evolve(a) => (Command::Evolve, a),
            Sub::Sweep(a) => (Command::Sweep, a),
            Sub::PcCurve(a) => (Command::PcCurve, a),
            Sub::Cov(a) => (Command::Cov, a),
            Sub::Fixation(a) => (Command::Fixation, a),
            Sub::Couple(a) => (Command::Couple, a),
            Sub::Enhance(a) => (Command::Enhance, a),
            Sub::Oracle(a) => (Command::Oracle, a),
            Sub::Certify(a) => (Command::Certify, a),
            Sub::Renorm(a) => (Command::Renorm, a),
        };
        if spec.command.is_some_and(|c| c != command) {
            return Err(CliError::Validation(format!(
                "subcommand `{}` conflicts with command `{}` in the spec file",
                command.name(),
                spec.command.unwrap().name()
            )));
        }
        spec.command = Some(command);
        for (k, v) in args.pairs() {
            spec.set(k, v).map_err(CliError::Validation)?;
        }
    }
    Ok(spec)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_spec(&cli).and_then(|spec| run_and_write(&spec));
    match result {
        Ok(out) => {
            eprintln!("{}", out.summary);
            if let Some(note) = out.budget_note {
                eprintln!("budget exhausted: {note}");
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
