use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use flowforge_cli::commands::{self, BrickArgs, RunArgs};
use flowforge_cli::server;
use flowforge_core::flow::BrickKind;

#[derive(Parser)]
#[command(name = "flowforge", version, about = "Validate, run and serve flow-based integrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check flow files. Exit 0 when clean, 1 on diagnostics, 2 when a file cannot be parsed.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Print diagnostics as JSON lines on stdout.
        #[arg(long)]
        json: bool,
    },
    /// Deploy flows together, run them, drain, and print the summary.
    Run {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Logical clock: run exactly --ticks scheduler rounds.
        #[arg(long)]
        deterministic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000, requires = "deterministic")]
        ticks: u64,
        /// Wall-clock run length in milliseconds.
        #[arg(long, default_value_t = 1000, conflicts_with = "deterministic")]
        duration_ms: u64,
        /// Parent of the run directory. Default: $FLOWFORGE_DATA_DIR/runs.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Rule program tools.
    Rules {
        #[command(subcommand)]
        command: RulesCommand,
    },
    /// Serve the HTTP API (and the UI bundle, if present).
    Serve {
        #[arg(long, default_value_t = 7171)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Static UI bundle. Default: ui/dist when it exists.
        #[arg(long, env = "FLOWFORGE_UI_DIR")]
        ui_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RulesCommand {
    /// Parse and statically check a program. Exit 0 clean, 1 diagnostics, 2 syntax error.
    Check {
        path: PathBuf,
        /// Check against a declared brick: FLOW.json:BRICK_ID.
        #[arg(long)]
        brick: Option<String>,
        #[arg(long, value_parser = parse_kind)]
        kind: Option<BrickKind>,
        #[arg(long, value_delimiter = ',')]
        in_ports: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        out_ports: Vec<String>,
        /// Brick param, K=V; V is read as a JSON scalar when it parses as one.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, String)>,
        #[arg(long)]
        json: bool,
    },
    /// Print the program in canonical form.
    Fmt { path: PathBuf },
}

fn parse_kind(s: &str) -> Result<BrickKind, String> {
    BrickKind::from_name(s).ok_or_else(|| format!("unknown brick kind {s:?}"))
}

fn parse_param(s: &str) -> Result<(String, String), String> {
    s.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| format!("expected K=V, got {s:?}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mut out, mut err) = (io::stdout().lock(), io::stderr().lock());
    let code = match cli.command {
        Command::Validate { paths, json } => commands::validate(&paths, json, &mut out, &mut err),
        Command::Run { paths, deterministic, seed, ticks, duration_ms, out: out_dir, run_id } => {
            let args = RunArgs { paths, deterministic, seed, ticks, duration: Duration::from_millis(duration_ms), out: out_dir, run_id };
            commands::run(&args, &mut out, &mut err)
        }
        Command::Rules { command: RulesCommand::Check { path, brick, kind, in_ports, out_ports, params, json } } => {
            let args = BrickArgs { brick, kind, in_ports, out_ports, params };
            commands::rules_check(&path, &args, json, &mut out, &mut err)
        }
        Command::Rules { command: RulesCommand::Fmt { path } } => commands::rules_fmt(&path, &mut out, &mut err),
        Command::Serve { port, host, ui_dir } => {
            drop((out, err));
            return serve(&host, port, ui_dir);
        }
    };
    match code {
        Ok(c) => ExitCode::from(c as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn serve(host: &str, port: u16, ui_dir: Option<PathBuf>) -> ExitCode {
    let addr: SocketAddr = match format!("{host}:{port}").parse() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("bad address {host}:{port}: {e}");
            return ExitCode::from(2);
        }
    };
    let ui_dir = ui_dir.or_else(|| Some(PathBuf::from("ui/dist")).filter(|p| p.is_dir()));
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(server::serve(addr, commands::data_dir(), ui_dir)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("serve: {e}");
            ExitCode::FAILURE
        }
    }
}
