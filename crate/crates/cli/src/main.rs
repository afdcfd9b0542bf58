use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use energy_internet::bee::{Bee, BeeError, BeeKind, Carrier, MacAddress, BEE_VERSION};
use energy_internet::grid::{solve_opf, GridError, GridModel, OpfSolution};
use energy_internet::matching::{MatchError, Pool};
use energy_internet::profile::{Ledger, LedgerError};
use energy_internet::scenario::{emit_report, fixed, run_scenario, write_summary, Scenario, ScenarioError};

#[derive(Parser)]
#[command(name = "einet", version, about = "Peer-to-peer energy trading simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario in both operation modes and write the report files.
    Run {
        scenario: PathBuf,
        /// Output directory (default: report-<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve the optimal power flow of one period of a grid file.
    Opf {
        grid: PathBuf,
        period: usize,
        /// Print the full solution as CSV instead of a summary.
        #[arg(long)]
        csv: bool,
    },
    /// Inspect or feed an order pool stored as CSV.
    Pool {
        #[command(subcommand)]
        action: PoolAction,
    },
    /// Encode or decode BEE records.
    Bee {
        #[command(subcommand)]
        action: BeeAction,
    },
    /// Show participant profiles rebuilt from a settlement event log.
    Profile {
        #[command(subcommand)]
        action: ProfileAction,
    },
}

#[derive(Subcommand)]
enum PoolAction {
    /// Print the resting entries.
    List {
        #[arg(long)]
        pool: PathBuf,
    },
    /// Match an offer or request against the pool and store the remainder.
    Submit {
        bee_hex: String,
        #[arg(long)]
        pool: PathBuf,
        /// Current time in epoch seconds; entries whose window has passed
        /// do not match.
        #[arg(long, default_value_t = 0)]
        now: u64,
    },
}

#[derive(Subcommand)]
enum BeeAction {
    /// Print the 48-byte hex encoding of a BEE.
    Encode(EncodeArgs),
    /// Pretty-print the fields of a hex-encoded BEE.
    Decode { hex: String },
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long, default_value = "offer")]
    kind: BeeKind,
    #[arg(long, default_value = "electricity")]
    carrier: Carrier,
    #[arg(long)]
    quantity_wh: u32,
    #[arg(long, default_value_t = 0)]
    start: u32,
    #[arg(long, default_value_t = 120)]
    duration_min: u16,
    #[arg(long, default_value_t = 0)]
    price_mcny: u32,
    #[arg(long, default_value_t = 0)]
    carbon: u16,
    #[arg(long, default_value_t = 0)]
    green_bp: u16,
    #[arg(long, default_value_t = 0)]
    grade: u16,
    #[arg(long, default_value_t = 0)]
    mass_flow: u16,
    #[arg(long)]
    sender: MacAddress,
    #[arg(long, default_value = "00:00:00:00:00:00")]
    receiver: MacAddress,
}

#[derive(Subcommand)]
enum ProfileAction {
    Show {
        mac: MacAddress,
        #[arg(long)]
        log: PathBuf,
    },
}

struct Failure {
    category: &'static str,
    message: String,
}

impl Failure {
    fn new(category: &'static str, message: impl ToString) -> Self {
        Failure { category, message: message.to_string() }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let category = match &e {
            ScenarioError::Config(_) => "config",
            ScenarioError::Grid(_) => "grid",
            ScenarioError::Stack(_) => "stack",
            ScenarioError::Ledger(_) => "ledger",
            ScenarioError::Match(_) => "pool",
            ScenarioError::Reconciliation(_) => "reconciliation",
            ScenarioError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => "not-found",
            ScenarioError::Io { .. } => "io",
        };
        Failure::new(category, e)
    }
}

impl From<GridError> for Failure {
    fn from(e: GridError) -> Self {
        Failure::new("grid", e)
    }
}

impl From<BeeError> for Failure {
    fn from(e: BeeError) -> Self {
        Failure::new("bee", e)
    }
}

impl From<MatchError> for Failure {
    fn from(e: MatchError) -> Self {
        Failure::new("pool", e)
    }
}

impl From<LedgerError> for Failure {
    fn from(e: LedgerError) -> Self {
        Failure::new("ledger", e)
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    let category = if e.kind() == std::io::ErrorKind::NotFound { "not-found" } else { "io" };
    Failure::new(category, format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error[{}]: {}", f.category, f.message);
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<String, Failure> {
    match command {
        Command::Run { scenario, out, seed } => run(&scenario, out, seed),
        Command::Opf { grid, period, csv } => opf(&grid, period, csv),
        Command::Pool { action: PoolAction::List { pool } } => {
            let pool = read_pool(&pool, false)?;
            let mut out = Vec::new();
            pool.write_csv(&mut out)?;
            Ok(String::from_utf8_lossy(&out).into_owned())
        }
        Command::Pool { action: PoolAction::Submit { bee_hex, pool: path, now } } => {
            let mut pool = read_pool(&path, true)?;
            pool.set_now(now);
            let bee = Bee::from_hex(bee_hex.trim())?;
            let result = pool.submit(bee)?;
            let mut out = String::new();
            for fill in &result.fills {
                let _ = writeln!(
                    out,
                    "fill {} Wh at {} mCNY/kWh: {} -> {}",
                    fill.matched_wh,
                    fill.clearing_price_mcny_per_kwh,
                    fill.offer.bee.sender,
                    fill.request.bee.sender
                );
                let _ = writeln!(out, "settle {}", fill.settle_bee().to_hex()?);
            }
            match result.residual {
                Some(e) => {
                    let _ = writeln!(out, "resting {} Wh as entry {}", e.remaining_wh, e.arrival_seq);
                }
                None => out.push_str("fully matched\n"),
            }
            let mut buf = Vec::new();
            pool.write_csv(&mut buf)?;
            std::fs::write(&path, buf).map_err(|e| io_failure(&path, e))?;
            Ok(out)
        }
        Command::Bee { action: BeeAction::Encode(a) } => {
            let bee = Bee {
                version: BEE_VERSION,
                kind: a.kind,
                carrier: a.carrier,
                quantity_wh: a.quantity_wh,
                delivery_start: a.start,
                delivery_duration_min: a.duration_min,
                price_mcny_per_kwh: a.price_mcny,
                carbon_intensity_g_per_kwh: a.carbon,
                green_fraction_bp: a.green_bp,
                grade: a.grade,
                mass_flow_rate: a.mass_flow,
                sender: a.sender,
                receiver: a.receiver,
            };
            Ok(format!("{}\n", bee.to_hex()?))
        }
        Command::Bee { action: BeeAction::Decode { hex } } => {
            let bee = Bee::from_hex(hex.trim())?;
            Ok(describe_bee(&bee)?)
        }
        Command::Profile { action: ProfileAction::Show { mac, log } } => {
            let file = std::fs::File::open(&log).map_err(|e| io_failure(&log, e))?;
            let mut ledger = Ledger::new();
            ledger.replay(BufReader::new(file))?;
            let p = ledger.query_profile(&mac)?;
            let inv = p.inventory();
            let mut out = String::new();
            let _ = writeln!(out, "mac: {}", p.mac());
            let _ = writeln!(out, "trades: {}", p.trades().len());
            let _ = writeln!(out, "net energy: {} Wh", p.net_energy_wh());
            let _ = writeln!(out, "net payment: {:.6} CNY", p.net_payment_ucny() as f64 / 1e6);
            let _ = writeln!(out, "green certificates: {} Wh", inv.green_certificates_wh());
            let _ = writeln!(out, "carbon rights: {} g", inv.carbon_rights_g());
            Ok(out)
        }
    }
}

fn describe_bee(bee: &Bee) -> Result<String, BeeError> {
    let mut s = String::new();
    let _ = writeln!(s, "version:        {}", bee.version);
    let _ = writeln!(s, "kind:           {}", bee.kind.name());
    let _ = writeln!(s, "carrier:        {}", bee.carrier.name());
    let _ = writeln!(s, "quantity:       {} Wh", bee.quantity_wh);
    let _ = writeln!(s, "delivery start: {}", bee.delivery_start);
    let _ = writeln!(s, "duration:       {} min", bee.delivery_duration_min);
    let _ = writeln!(s, "price:          {} mCNY/kWh", bee.price_mcny_per_kwh);
    let _ = writeln!(s, "carbon:         {} g/kWh", bee.carbon_intensity_g_per_kwh);
    let _ = writeln!(s, "green:          {} bp", bee.green_fraction_bp);
    let _ = writeln!(s, "grade:          {}", bee.grade);
    let _ = writeln!(s, "mass flow:      {}", bee.mass_flow_rate);
    let _ = writeln!(s, "sender:         {}", bee.sender);
    let _ = writeln!(s, "receiver:       {}", bee.receiver);
    let _ = writeln!(s, "checksum:       0x{:04x}", bee.checksum()?);
    Ok(s)
}

fn read_pool(path: &Path, create: bool) -> Result<Pool, Failure> {
    match std::fs::File::open(path) {
        Ok(f) => Ok(Pool::read_csv(BufReader::new(f))?),
        Err(e) if create && e.kind() == std::io::ErrorKind::NotFound => Ok(Pool::new()),
        Err(e) => Err(io_failure(path, e)),
    }
}

fn run(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<String, Failure> {
    let mut scenario = Scenario::load(path)?;
    if let Some(seed) = seed {
        scenario = scenario.with_seed(seed);
    }
    let report = run_scenario(&scenario)?;
    let dir = out.unwrap_or_else(|| PathBuf::from(format!("report-{}", scenario.name)));
    let written = emit_report(&report, &dir)?;
    let log = dir.join("events.log");
    let mut lines = String::new();
    for p in &report.energy_internet.periods {
        for b in &p.settled {
            let _ = writeln!(lines, "{}", b.to_hex()?);
        }
    }
    std::fs::write(&log, lines).map_err(|e| io_failure(&log, e))?;
    let mut text = write_summary(&report);
    for p in written.iter().chain(std::iter::once(&log)) {
        let _ = writeln!(text, "wrote {}", p.display());
    }
    Ok(text)
}

fn opf(path: &Path, period: usize, csv: bool) -> Result<String, Failure> {
    let grid = GridModel::load(path)?;
    grid.check_period(period)?;
    let mut fixed = vec![0.0; grid.nodes.len()];
    for ev in &grid.evs {
        fixed[grid.node_index(ev.node)?] -= ev.baseline_kw[period];
    }
    let sol = solve_opf(&grid, period, &fixed)?;
    Ok(if csv { opf_csv(&grid, &sol) } else { opf_text(&grid, &sol) })
}

fn opf_text(grid: &GridModel, sol: &OpfSolution) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "period {} ({} iterations)", sol.period, sol.iterations);
    for (p, kw) in grid.plants.iter().zip(&sol.plant_kw) {
        let _ = writeln!(s, "P[{}] = {} kW", p.name, fixed(*kw, 2));
    }
    for (n, lmp) in grid.nodes.iter().zip(&sol.lmp) {
        let _ = writeln!(s, "lmp[node {}] = {} CNY/kWh", n.id, fixed(*lmp, 4));
    }
    let _ = writeln!(s, "total loss = {} kW", fixed(sol.total_loss_kw, 4));
    let _ = writeln!(s, "total cost = {} CNY", fixed(sol.total_cost, 4));
    s
}

fn opf_csv(grid: &GridModel, sol: &OpfSolution) -> String {
    let mut s = String::from("item,name,value\n");
    let mut row = |item: &str, name: &str, v: f64| {
        let _ = writeln!(s, "{item},{name},{}", fixed(v, 6));
    };
    for (p, v) in grid.plants.iter().zip(&sol.plant_kw) {
        row("dispatch_kw", &p.name, *v);
    }
    for (l, v) in grid.loads.iter().zip(&sol.load_kw) {
        row("load_kw", &l.name, *v);
    }
    for (i, r) in grid.renewables.iter().enumerate() {
        row("renewable_kw", &r.name, sol.renewable_kw[i]);
        row("curtailed_kw", &r.name, sol.curtailed_kw[i]);
    }
    for (i, l) in grid.lines.iter().enumerate() {
        let name = format!("{}-{}", l.from, l.to);
        row("flow_kw", &name, sol.line_flow_kw[i]);
        row("loss_kw", &name, sol.line_loss_kw[i]);
    }
    for (n, v) in grid.nodes.iter().zip(&sol.lmp) {
        row("lmp", &n.id.to_string(), *v);
    }
    row("total", "loss_kw", sol.total_loss_kw);
    row("total", "cost_cny", sol.total_cost);
    s
}
