use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use xledger::netsim::Protocol;
use xledger::workload::{grid_by_name, LedgersPerTxn, WorkloadSpec};
use xledger::ClusterConfig;
use xledger_cli::{cmd_bench, cmd_run, cmd_topology, cmd_verify, CliError, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "xledger", version, about = "Deterministic round-based simulator for cross-ledger commit protocols")]
struct Cli {
    /// Cluster config JSON (keys: k, n, f, seed, fault_plan)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Deterministic seed; the XLEDGER_SEED environment variable wins
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for bench artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Protocol selection
    #[arg(long, global = true, value_enum, default_value_t = ProtocolArg::All)]
    protocol: ProtocolArg,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    Xlpn22,
    Vldb20,
    Podc18,
    All,
}

impl ProtocolArg {
    fn protocols(self) -> Vec<Protocol> {
        match self {
            ProtocolArg::Xlpn22 => vec![Protocol::Xlpn22],
            ProtocolArg::Vldb20 => vec![Protocol::Vldb20],
            ProtocolArg::Podc18 => vec![Protocol::Podc18],
            ProtocolArg::All => Protocol::CROSS_LEDGER.to_vec(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured cluster and print one CSV row per protocol
    Run {
        /// Number of transactions to process sequentially
        #[arg(long, default_value_t = 1)]
        txns: u64,
        /// Touched ledgers per transaction: "all" or "MIN:MAX"
        #[arg(long, default_value = "all")]
        ledgers_per_txn: String,
        /// Write the delivered-envelope trace here (single protocol only)
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sweep a benchmark grid and write CSV + SVG into --out
    Bench {
        /// Grid name: txn, node or ledger
        #[arg(long)]
        grid: String,
        /// Scale the grid so its largest cell runs this many transactions
        #[arg(long)]
        scale_to: Option<u64>,
    },
    /// Evaluate the cost table and reconcile simulated counts against it
    VerifyComplexity {
        /// Ledger counts to verify
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8")]
        k: Vec<u32>,
        /// Ledger sizes to verify
        #[arg(long, value_delimiter = ',', default_value = "4,16,32")]
        n: Vec<u32>,
    },
    /// Per-phase communication topology report as CSV
    Topology {
        #[arg(long, default_value_t = 3)]
        k: u32,
        #[arg(long, default_value_t = 4)]
        n: u32,
    },
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    match std::env::var("XLEDGER_SEED") {
        Ok(text) => text
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::new(EXIT_CONFIG, format!("XLEDGER_SEED is not a u64: {text:?}"))),
        Err(_) => Ok(flag),
    }
}

fn load_config(cli: &Cli) -> Result<ClusterConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::new(EXIT_CONFIG, "run needs --config PATH"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new(EXIT_CONFIG, format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = ClusterConfig::from_json(&text).map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
    if let Some(seed) = resolve_seed(cli.seed)? {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn parse_policy(text: &str) -> Result<LedgersPerTxn, CliError> {
    if text == "all" {
        return Ok(LedgersPerTxn::All);
    }
    let bad = || CliError::new(EXIT_CONFIG, format!("--ledgers-per-txn wants \"all\" or MIN:MAX, got {text:?}"));
    let (min, max) = text.split_once(':').ok_or_else(bad)?;
    Ok(LedgersPerTxn::Uniform {
        min: min.parse().map_err(|_| bad())?,
        max: max.parse().map_err(|_| bad())?,
    })
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run { txns, ledgers_per_txn, trace } => {
            let cfg = load_config(cli)?;
            let spec = WorkloadSpec {
                txn_count: *txns,
                k: cfg.k,
                ledgers_per_txn: parse_policy(ledgers_per_txn)?,
                seed: cfg.seed,
            };
            let csv = cmd_run(&cfg, &cli.protocol.protocols(), &spec, trace.as_deref())?;
            print!("{csv}");
            Ok(())
        }
        Command::Bench { grid, scale_to } => {
            let grid = grid_by_name(grid)
                .ok_or_else(|| CliError::new(EXIT_CONFIG, format!("unknown grid {grid:?}; use txn, node or ledger")))?;
            let grid = match scale_to {
                Some(target) => grid.scaled_to(*target),
                None => grid,
            };
            let seed = resolve_seed(cli.seed)?.unwrap_or(0);
            cmd_bench(&grid, &cli.protocol.protocols(), seed, &cli.out)?;
            println!(
                "wrote {} and {}",
                cli.out.join(format!("bench_{}.csv", grid.name)).display(),
                cli.out.join(format!("bench_{}.svg", grid.name)).display()
            );
            Ok(())
        }
        Command::VerifyComplexity { k, n } => {
            let report = cmd_verify(k, n)?;
            print!("{report}");
            Ok(())
        }
        Command::Topology { k, n } => {
            let csv = cmd_topology(&cli.protocol.protocols(), *k, *n)?;
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("xledger: {}", err.message);
            ExitCode::from(err.code as u8)
        }
    }
}
