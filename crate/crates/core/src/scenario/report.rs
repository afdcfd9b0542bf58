//! CSV and text rendering of a scenario report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::runner::{ModeReport, ScenarioReport};
use super::ScenarioError;

pub const REPORT_FILES: [&str; 5] =
    ["welfare.csv", "carbon.csv", "dispatch_by_period.csv", "surplus_partition.csv", "summary.txt"];

/// Fixed-point rendering that never prints a negative zero.
pub fn fixed(v: f64, prec: usize) -> String {
    let s = format!("{v:.prec$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

fn f(v: f64) -> String {
    fixed(v, 6)
}

fn welfare_csv(r: &ScenarioReport) -> String {
    let mut s = String::from(
        "period,traditional_welfare,ei_welfare,traditional_consumer,ei_consumer,traditional_producer,ei_producer,traditional_grid,ei_grid\n",
    );
    for (a, b) in r.traditional.periods.iter().zip(&r.energy_internet.periods) {
        let (sa, sb) = (&a.surplus, &b.surplus);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            a.period,
            f(sa.welfare),
            f(sb.welfare),
            f(sa.consumer_total()),
            f(sb.consumer_total()),
            f(sa.producer_total()),
            f(sb.producer_total()),
            f(sa.grid_surplus),
            f(sb.grid_surplus)
        );
    }
    s
}

fn carbon_csv(r: &ScenarioReport) -> String {
    let mut s = String::from(
        "period,traditional_thermal_kwh,ei_thermal_kwh,traditional_carbon_t,ei_carbon_t,traditional_curtailed_kwh,ei_curtailed_kwh,traditional_loss_kwh,ei_loss_kwh\n",
    );
    let h = r.grid.period_hours;
    for (a, b) in r.traditional.periods.iter().zip(&r.energy_internet.periods) {
        let curtailed = |p: &super::PeriodRecord| p.solution.curtailed_kw.iter().sum::<f64>() * h;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            a.period,
            f(a.surplus.thermal_kwh),
            f(b.surplus.thermal_kwh),
            f(a.surplus.carbon_t),
            f(b.surplus.carbon_t),
            f(curtailed(a)),
            f(curtailed(b)),
            f(a.solution.total_loss_kw * h),
            f(b.solution.total_loss_kw * h)
        );
    }
    s
}

fn dispatch_csv(r: &ScenarioReport) -> String {
    let g = &r.grid;
    let mut names: Vec<String> = Vec::new();
    names.extend(g.plants.iter().map(|p| format!("{}_kw", p.name)));
    names.extend(g.loads.iter().map(|p| format!("{}_kw", p.name)));
    names.extend(g.renewables.iter().map(|p| format!("{}_kw", p.name)));
    names.extend(g.renewables.iter().map(|p| format!("{}_curtailed_kw", p.name)));
    names.extend(g.storage.iter().map(|p| format!("{}_kw", p.name)));
    names.extend(g.evs.iter().map(|p| format!("{}_kw", p.name)));
    names.extend(g.nodes.iter().map(|n| format!("lmp_node{}", n.id)));
    let mut s = String::from("period");
    for prefix in ["traditional", "ei"] {
        for n in &names {
            let _ = write!(s, ",{prefix}_{n}");
        }
    }
    s.push('\n');
    let row = |p: &super::PeriodRecord| -> Vec<f64> {
        let sol = &p.solution;
        let mut v = Vec::new();
        v.extend(&sol.plant_kw);
        v.extend(&sol.load_kw);
        v.extend(&sol.renewable_kw);
        v.extend(&sol.curtailed_kw);
        v.extend(&p.storage_kw);
        v.extend(&p.ev_kw);
        v.extend(&sol.lmp);
        v
    };
    for (a, b) in r.traditional.periods.iter().zip(&r.energy_internet.periods) {
        s.push_str(&a.period.to_string());
        for v in row(a).into_iter().chain(row(b)) {
            s.push(',');
            s.push_str(&f(v));
        }
        s.push('\n');
    }
    s
}

fn partition_csv(r: &ScenarioReport) -> String {
    let mut s = String::from("participant,class,traditional,energy_internet,delta\n");
    let (t, e) = (&r.traditional, &r.energy_internet);
    for (name, class) in &e.resource_class {
        let a = t.resource_profit.get(name).copied().unwrap_or(0.0);
        let b = e.resource_profit.get(name).copied().unwrap_or(0.0);
        let _ = writeln!(s, "{name},{},{},{},{}", class.name(), f(a), f(b), f(b - a));
    }
    let rows: [(&str, fn(&ModeReport) -> f64); 7] = [
        ("plant-profit", ModeReport::plant_profit),
        ("merchandise-surplus", ModeReport::merchandise_surplus),
        ("grid-surplus", ModeReport::grid_surplus),
        ("consumer-surplus", ModeReport::consumer_surplus),
        ("producer-surplus", ModeReport::producer_surplus),
        ("social-welfare", ModeReport::welfare),
        ("thermal-cost", ModeReport::thermal_cost),
    ];
    for (label, get) in rows {
        let _ = writeln!(s, "{label},total,{},{},{}", f(get(t)), f(get(e)), f(get(e) - get(t)));
    }
    s
}

fn signed(v: f64) -> String {
    let s = fixed(v, 2);
    if s.starts_with('-') { format!("{s}%") } else { format!("+{s}%") }
}

/// The headline comparison as plain text.
pub fn write_summary(r: &ScenarioReport) -> String {
    let (t, e) = (&r.traditional, &r.energy_internet);
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {} (seed {})", r.name, r.seed);
    let _ = writeln!(s, "social welfare: {} CNY -> {} CNY ({})", f2(t.welfare()), f2(e.welfare()), signed(r.welfare_change_pct()));
    let _ = writeln!(s, "carbon emission: {} t -> {} t ({})", fixed(t.carbon_t(), 4), fixed(e.carbon_t(), 4), signed(r.carbon_change_pct()));
    let _ = writeln!(
        s,
        "grid surplus: {} CNY -> {} CNY ({})",
        f2(t.grid_surplus()),
        f2(e.grid_surplus()),
        signed(r.grid_surplus_change_pct())
    );
    let _ = writeln!(s, "curtailment: {} kWh -> {} kWh", f2(t.curtailed_kwh()), f2(e.curtailed_kwh()));
    let _ = writeln!(s, "network loss: {} kWh -> {} kWh", f2(t.loss_kwh()), f2(e.loss_kwh()));
    let fee = e.service_fee.as_ref().map_or(0, |f| f.total_ucny());
    let _ = writeln!(s, "service fee: {:.2} CNY", fee as f64 / 1e6);
    let _ = writeln!(s, "peer energy settled: {:.3} kWh", e.settled_wh() as f64 / 1000.0);
    let _ = writeln!(s, "profit change by participant:");
    for (name, d) in r.profit_deltas() {
        let _ = writeln!(s, "  {name}: {} CNY", signed(d).trim_end_matches('%'));
    }
    s
}

fn f2(v: f64) -> String {
    fixed(v, 2)
}

/// Writes all report files into `dir`, creating it if needed.
pub fn emit_report(report: &ScenarioReport, dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    let io = |path: &Path, source| ScenarioError::Io { path: path.to_path_buf(), source };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let contents = [
        welfare_csv(report),
        carbon_csv(report),
        dispatch_csv(report),
        partition_csv(report),
        write_summary(report),
    ];
    let mut written = Vec::new();
    for (name, body) in REPORT_FILES.iter().zip(contents) {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
